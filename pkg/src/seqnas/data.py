"""Corpus handling: parsing, normalization, subword learning, tag alignment,
and a synthetic morphology-rich corpus generator.

Corpus files are CoNLL-style: one ``word<TAB>tag`` per line, blank line
between sentences. Tags are BIO over PER/ORG/LOC. Subwords come from
deterministic byte-pair merge learning; alignment gives each word's first
subword the word tag and every later subword the ignore marker, so the
non-ignored label count always equals the word count.
"""

from __future__ import annotations

import json
import string
import unicodedata
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model import IGNORE_ID, BatchInput

ENTITY_CLASSES = ("LOC", "ORG", "PER")
TAGS = ("O", "B-LOC", "B-ORG", "B-PER", "I-LOC", "I-ORG", "I-PER")
TAG_TO_ID = {t: i for i, t in enumerate(TAGS)}


@dataclass
class TaggedSentence:
    words: list[str]
    tags: list[str]

    def __post_init__(self):
        if len(self.words) != len(self.tags):
            raise DataError(
                f"{len(self.words)} words vs {len(self.tags)} tags in sentence"
            )


@dataclass
class AlignedExample:
    subword_ids: list[int]
    label_ids: list[int]
    word_index: list[int]  # source word of each subword


@dataclass
class MetaFeatures:
    """Knobs of the synthetic generator, standing in for language traits."""

    script_size: int = 40
    avg_suffixes_per_word: float = 1.5
    stem_length_range: tuple[int, int] = (2, 4)
    entity_density: float = 0.25
    agglutination_depth: int = 3

    def __post_init__(self):
        if isinstance(self.stem_length_range, list):
            self.stem_length_range = tuple(self.stem_length_range)
        lo, hi = self.stem_length_range
        if self.script_size < 4:
            raise ConfigError(f"script_size must be >= 4, got {self.script_size}")
        if not (0 <= self.entity_density < 1):
            raise ConfigError(f"entity_density must be in [0,1), got {self.entity_density}")
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad stem_length_range {self.stem_length_range}")
        if self.agglutination_depth < 0 or self.avg_suffixes_per_word < 0:
            raise ConfigError("suffix settings must be non-negative")

    def as_vector(self) -> np.ndarray:
        """Numeric view of the meta-features, available as a search hook."""
        lo, hi = self.stem_length_range
        return np.array([
            self.script_size, self.avg_suffixes_per_word, lo, hi,
            self.entity_density, self.agglutination_depth,
        ], dtype=np.float64)

    @classmethod
    def from_json(cls, path) -> "MetaFeatures":
        with open(path) as fh:
            return cls(**json.load(fh))


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def _check_bio(tags: list[str], where: str):
    prev = "O"
    for tag in tags:
        if tag != "O" and (len(tag) < 3 or tag[0] not in "BI" or tag[1] != "-"
                           or tag[2:] not in ENTITY_CLASSES):
            raise DataError(f"invalid tag {tag!r} {where}")
        if tag.startswith("I-") and prev not in (f"B-{tag[2:]}", f"I-{tag[2:]}"):
            raise DataError(f"{tag} follows {prev} {where}")
        prev = tag


def parse_corpus(text: str) -> list[TaggedSentence]:
    """Parse word<TAB>tag lines into sentences split on blank lines."""
    sentences = []
    words: list[str] = []
    tags: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.strip() == "":
            if words:
                _check_bio(tags, f"ending at line {lineno}")
                sentences.append(TaggedSentence(words, tags))
                words, tags = [], []
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataError(f"line {lineno}: expected 2 tab-separated columns, got {len(cols)}")
        if cols[0] == "":
            raise DataError(f"line {lineno}: empty word")
        words.append(cols[0])
        tags.append(cols[1])
    if words:
        _check_bio(tags, "at end of input")
        sentences.append(TaggedSentence(words, tags))
    return sentences


def serialize_corpus(corpus: list[TaggedSentence]) -> str:
    blocks = ["\n".join(f"{w}\t{t}" for w, t in zip(s.words, s.tags)) for s in corpus]
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def load_corpus(path) -> list[TaggedSentence]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh.read())


def save_corpus(path, corpus: list[TaggedSentence]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_corpus(corpus))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

# profile name -> character fold table; folds must map onto characters that
# are themselves fixed points, keeping normalize idempotent
NORM_PROFILES: dict[str, dict[str, str]] = {
    "default": {},
    "ascii_fold": {"é": "e", "è": "e", "à": "a", "ü": "u"},
}


def normalize(text: str, profile: str = "default") -> str:
    """NFC composition, whitespace collapse, profile char folding. Idempotent."""
    folds = NORM_PROFILES.get(profile, {})
    out = unicodedata.normalize("NFC", text)
    out = "".join(folds.get(ch, ch) for ch in out)
    return " ".join(out.split())


# ---------------------------------------------------------------------------
# byte-pair subword learning
# ---------------------------------------------------------------------------

PAD, UNK = "<pad>", "<unk>"


class Vocabulary:
    """Learned merges plus a dense id map. pad=0, unk=1, then base symbols."""

    def __init__(self, merges: list[tuple[str, str]], token_to_id: dict[str, int]):
        self.merges = merges
        self.token_to_id = token_to_id
        self.id_to_token = {i: t for t, i in token_to_id.items()}
        self.pad_id = token_to_id[PAD]
        self.unk_id = token_to_id[UNK]
        self._rank = {pair: r for r, pair in enumerate(merges)}

    def __len__(self):
        return len(self.token_to_id)

    def encode_word(self, word: str) -> list[int]:
        parts = list(word)
        while len(parts) > 1:
            best, best_rank = None, None
            for i in range(len(parts) - 1):
                r = self._rank.get((parts[i], parts[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best is None:
                break
            parts = parts[:best] + [parts[best] + parts[best + 1]] + parts[best + 2:]
        return [self.token_to_id.get(p, self.unk_id) for p in parts]

    def decode(self, ids: list[int]) -> str:
        return "".join(self.id_to_token.get(i, "?") for i in ids if i != self.pad_id)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({
                "version": 1,
                "merges": [list(m) for m in self.merges],
                "token_to_id": self.token_to_id,
            }, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls([tuple(m) for m in payload["merges"]], payload["token_to_id"])


def train_subword(words, vocab_size: int, seed: int = 0) -> Vocabulary:
    """Greedy highest-frequency pair merging, ties broken lexicographically.

    Stops when vocab_size is reached or no adjacent pair occurs twice.
    Deterministic: the seed is accepted for interface symmetry but the
    procedure itself has no random choices.
    """
    del seed
    counts: dict[tuple[str, ...], int] = {}
    for w in words:
        key = tuple(w)
        counts[key] = counts.get(key, 0) + 1
    alphabet = sorted({ch for w in counts for ch in w})
    base = 2 + len(alphabet)
    if vocab_size <= base:
        raise ConfigError(
            f"vocab_size {vocab_size} must exceed alphabet+specials ({base})"
        )
    tokens = [PAD, UNK] + alphabet
    merges: list[tuple[str, str]] = []
    work = dict(counts)
    while len(tokens) < vocab_size:
        pair_freq: dict[tuple[str, str], int] = {}
        for parts, c in work.items():
            for i in range(len(parts) - 1):
                pair = (parts[i], parts[i + 1])
                pair_freq[pair] = pair_freq.get(pair, 0) + c
        if not pair_freq:
            break
        best = min(pair_freq, key=lambda p: (-pair_freq[p], p))
        if pair_freq[best] < 2:
            break
        merges.append(best)
        tokens.append(best[0] + best[1])
        merged = best[0] + best[1]
        new_work: dict[tuple[str, ...], int] = {}
        for parts, c in work.items():
            out = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == best[0] and parts[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            key = tuple(out)
            new_work[key] = new_work.get(key, 0) + c
        work = new_work
    return Vocabulary(merges, {t: i for i, t in enumerate(tokens)})


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


def align(sentence: TaggedSentence, vocab: Vocabulary, max_len: int,
          tagmap: dict[str, int] | None = None) -> AlignedExample:
    """Subword ids with first-subword labels; continuations get IGNORE_ID.

    Truncation drops whole trailing words: a word whose subwords would
    cross max_len is dropped entirely, never leaving continuations without
    their first subword.
    """
    tagmap = tagmap or TAG_TO_ID
    ids: list[int] = []
    labels: list[int] = []
    widx: list[int] = []
    for w, (word, tag) in enumerate(zip(sentence.words, sentence.tags)):
        piece = vocab.encode_word(word)
        if len(ids) + len(piece) > max_len:
            break
        ids.extend(piece)
        labels.extend([tagmap[tag]] + [IGNORE_ID] * (len(piece) - 1))
        widx.extend([w] * len(piece))
    return AlignedExample(ids, labels, widx)


def make_batches(examples: list[AlignedExample], batch_size: int, pad_id: int,
                 rng: np.random.Generator | None = None) -> list[BatchInput]:
    """Pad examples to per-batch max length; optionally shuffle first."""
    order = np.arange(len(examples))
    if rng is not None:
        rng.shuffle(order)
    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        width = max(len(ex.subword_ids) for ex in chunk)
        n = len(chunk)
        tok = np.full((n, width), pad_id, dtype=np.int64)
        msk = np.zeros((n, width), dtype=np.int64)
        lab = np.full((n, width), IGNORE_ID, dtype=np.int64)
        for r, ex in enumerate(chunk):
            L = len(ex.subword_ids)
            tok[r, :L] = ex.subword_ids
            msk[r, :L] = 1
            lab[r, :L] = ex.label_ids
        batches.append(BatchInput(tok, msk, lab))
    return batches


# ---------------------------------------------------------------------------
# synthetic corpus generation
# ---------------------------------------------------------------------------


def _alphabet(n: int) -> list[str]:
    pool = list(string.ascii_lowercase) + [chr(0x0100 + i) for i in range(128)]
    if n > len(pool):
        raise ConfigError(f"script_size {n} exceeds supported maximum {len(pool)}")
    return pool[:n]


def _draw_stems(rng, alphabet, count, lo, hi, taken: set[str]) -> list[str]:
    """Distinct stems, none a prefix of another already-taken stem."""
    stems = []
    attempts = 0
    while len(stems) < count:
        attempts += 1
        if attempts > 10000 * count:
            raise ConfigError(
                "cannot draw enough prefix-free stems; raise script_size or "
                "widen stem_length_range"
            )
        L = int(rng.integers(lo, hi + 1))
        s = "".join(rng.choice(alphabet) for _ in range(L))
        if s in taken or any(s.startswith(t) or t.startswith(s) for t in taken):
            continue
        taken.add(s)
        stems.append(s)
    return stems


def _suffix(rng, suffixes, meta: MetaFeatures) -> str:
    if meta.agglutination_depth == 0:
        return ""
    lam = min(meta.avg_suffixes_per_word, float(meta.agglutination_depth))
    k = min(int(rng.poisson(lam)), meta.agglutination_depth)
    return "".join(rng.choice(suffixes) for _ in range(k))


def gen_synthetic(meta: MetaFeatures, n_sentences: int,
                  seed: int) -> tuple[list[TaggedSentence], dict[str, str]]:
    """Morphology-rich corpus where the tag is recoverable from the stem.

    Every emitted word is stem + suffix chain. Stems are disjoint across
    tags (and never prefixes of each other), so a longest-prefix lookup in
    the returned stem->tag lexicon recovers the gold tag exactly.
    """
    if n_sentences < 1:
        raise ConfigError("n_sentences must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    alphabet = _alphabet(meta.script_size)
    lo, hi = meta.stem_length_range
    taken: set[str] = set()
    lexicon: dict[str, str] = {}
    per_tag = {}
    for cls in ENTITY_CLASSES:
        for role in ("B", "I"):
            stems = _draw_stems(rng, alphabet, 6, lo, hi, taken)
            per_tag[f"{role}-{cls}"] = stems
            for s in stems:
                lexicon[s] = f"{role}-{cls}"
    fillers = _draw_stems(rng, alphabet, 30, lo, hi, taken)
    for s in fillers:
        lexicon[s] = "O"
    suffixes = _draw_stems(rng, alphabet, 10, 1, 2, taken)

    corpus = []
    for _ in range(n_sentences):
        length = int(rng.integers(5, 13))
        words, tags = [], []
        i = 0
        while i < length:
            if rng.random() < meta.entity_density and i + 1 < length:
                cls = ENTITY_CLASSES[int(rng.integers(len(ENTITY_CLASSES)))]
                span = int(rng.integers(1, 3))
                roles = ["B"] + ["I"] * (span - 1)
                for role in roles:
                    stem = per_tag[f"{role}-{cls}"][int(rng.integers(6))]
                    words.append(stem + _suffix(rng, suffixes, meta))
                    tags.append(f"{role}-{cls}")
                    i += 1
            else:
                stem = fillers[int(rng.integers(len(fillers)))]
                words.append(stem + _suffix(rng, suffixes, meta))
                tags.append("O")
                i += 1
        corpus.append(TaggedSentence(words, tags))
    return corpus, lexicon


def gen_synthetic_long_range(meta: MetaFeatures, n_sentences: int,
                             seed: int) -> tuple[list[TaggedSentence], dict[str, str]]:
    """Variant where the entity class is decidable only from a marker word
    exactly three positions before the span start.

    Entity stems are shared across classes, so no per-token feature reveals
    the class; B vs I position is still stem-recoverable. Words are bare
    stems (single subwords for any reasonable vocab), keeping the marker
    distance in token space equal to its distance in word space.
    """
    if n_sentences < 1:
        raise ConfigError("n_sentences must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    alphabet = _alphabet(meta.script_size)
    lo, hi = meta.stem_length_range
    taken: set[str] = set()
    b_stems = _draw_stems(rng, alphabet, 8, lo, hi, taken)
    i_stems = _draw_stems(rng, alphabet, 8, lo, hi, taken)
    markers = {cls: _draw_stems(rng, alphabet, 4, lo, hi, taken)
               for cls in ENTITY_CLASSES}
    fillers = _draw_stems(rng, alphabet, 20, lo, hi, taken)
    lexicon = {s: "O" for group in markers.values() for s in group}
    lexicon.update({s: "O" for s in fillers})

    corpus = []
    for _ in range(n_sentences):
        cls = ENTITY_CLASSES[int(rng.integers(len(ENTITY_CLASSES)))]
        span = 5
        gap = int(rng.integers(0, 3))
        words = [fillers[int(rng.integers(len(fillers)))] for _ in range(gap)]
        tags = ["O"] * gap
        words.append(markers[cls][int(rng.integers(4))])
        tags.append("O")
        words += [fillers[int(rng.integers(len(fillers)))] for _ in range(2)]
        tags += ["O", "O"]
        words.append(b_stems[int(rng.integers(len(b_stems)))])
        tags.append(f"B-{cls}")
        for _ in range(span - 1):
            words.append(i_stems[int(rng.integers(len(i_stems)))])
            tags.append(f"I-{cls}")
        tail = int(rng.integers(0, 2))
        words += [fillers[int(rng.integers(len(fillers)))] for _ in range(tail)]
        tags += ["O"] * tail
        corpus.append(TaggedSentence(words, tags))
    return corpus, lexicon


def lookup_classifier(lexicon: dict[str, str]):
    """Longest-prefix stem lookup; the learnability upper bound for generated data."""
    stems = sorted(lexicon, key=len, reverse=True)

    def classify(word: str) -> str:
        for s in stems:
            if word.startswith(s):
                return lexicon[s]
        return "O"

    return classify
