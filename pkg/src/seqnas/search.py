"""Bi-level architecture search, genotype derivation, and final training.

Each paired step updates the network weights on one half of the data
(weight split) with the architecture logits frozen, then updates the
logits on the other half (alpha split) with the weights frozen: the
first-order alternating scheme. Per-epoch means of both losses plus a
full validation pass over the alpha split are logged; the arch-loss
column is the weight-split loss re-measured (eval mode) after the alpha
step of each pair.

Discretization keeps, per edge, the highest-softmax-weight primitive
excluding "zero", then per node the two incoming edges whose selected
primitive carries the most weight; ties fall to the lowest edge index and
lowest primitive index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, backward, concat, conv1d, cross_entropy_masked,
                       dropout, embedding, record, reshape, transpose)
from .cell import CellConfig
from .data import TAGS, TaggedSentence, align, make_batches
from .errors import ConfigError, DataError, DivergenceError
from .layers import ConvNorm, Linear, uniform_init
from .metrics import count, report
from .model import IGNORE_ID, BatchInput, Model, ModelConfig, _restore_weights, config_from_dict
from .primitives import PrimitiveInstance


# ---------------------------------------------------------------------------
# architecture parameters
# ---------------------------------------------------------------------------


@dataclass
class ArchParameters:
    alphas: list[Tensor]
    init_scheme: str = "gaussian_sigma1e-3"
    opt_state: dict | None = None

    def as_arrays(self) -> list[np.ndarray]:
        return [a.data.copy() for a in self.alphas]

    def save(self, path):
        payload = {
            "version": 1,
            "init_scheme": self.init_scheme,
            "alphas": [a.data.tolist() for a in self.alphas],
        }
        if self.opt_state is not None:
            payload["opt_state"] = self.opt_state
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "ArchParameters":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            alphas=[Tensor(np.array(a), requires_grad=True) for a in payload["alphas"]],
            init_scheme=payload["init_scheme"],
            opt_state=payload.get("opt_state"),
        )


def init_arch_parameters(config: CellConfig, seed: int, sigma: float = 1e-3,
                         meta_vector: np.ndarray | None = None,
                         init_hook=None) -> ArchParameters:
    """Small seeded Gaussian logits, one vector per edge.

    `init_hook(meta_vector, edge_index, n_ops) -> offset array` is an
    optional conditioning point for corpus meta-features; no semantics are
    attached here and the default is pure noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    n_ops = len(config.primitives)
    alphas = []
    for e in range(config.edge_count):
        a = rng.normal(0.0, sigma, size=n_ops)
        if init_hook is not None:
            a = a + np.asarray(init_hook(meta_vector, e, n_ops), dtype=np.float64)
        alphas.append(Tensor(a, requires_grad=True))
    return ArchParameters(alphas=alphas)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class SGD:
    """Plain momentum SGD."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros(p.shape) for p in params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class RMSProp:
    """Momentum-free adaptive step: bias-corrected second-moment scaling."""

    def __init__(self, params: list[Tensor], lr: float, beta: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta = beta
        self.eps = eps
        self.sq = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        correction = 1.0 - self.beta ** self.t
        for p, s in zip(self.params, self.sq):
            if p.grad is None:
                continue
            s *= self.beta
            s += (1.0 - self.beta) * p.grad * p.grad
            p.data -= self.lr * p.grad / (np.sqrt(s / correction) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        return {"t": self.t, "sq": [s.tolist() for s in self.sq]}


# ---------------------------------------------------------------------------
# data split
# ---------------------------------------------------------------------------


def split_search_data(corpus: list[TaggedSentence], ratio: float,
                      seed: int) -> tuple[list[TaggedSentence], list[TaggedSentence]]:
    """Seeded shuffle then disjoint split: first part trains w, second trains alpha."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0,1), got {ratio}")
    if len(corpus) < 2:
        raise DataError("corpus too small to split into two non-empty halves")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    order = np.arange(len(corpus))
    rng.shuffle(order)
    cut = int(round(len(corpus) * ratio))
    cut = min(max(cut, 1), len(corpus) - 1)
    weight_split = [corpus[i] for i in order[:cut]]
    alpha_split = [corpus[i] for i in order[cut:]]
    return weight_split, alpha_split


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    arch_loss: float
    val_loss: float
    val_f1_weighted: float
    val_accuracy: float


CURVES_HEADER = "epoch,train_loss,arch_loss,val_loss,val_f1,val_acc"


def save_curves(path, stats: list[EpochStats]):
    rows = [CURVES_HEADER]
    for s in stats:
        rows.append(f"{s.epoch},{s.train_loss:.6f},{s.arch_loss:.6f},"
                    f"{s.val_loss:.6f},{s.val_f1_weighted:.6f},{s.val_accuracy:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def _batch_loss(model, batch: BatchInput, alphas, training: bool,
                where: str | None = None) -> Tensor:
    try:
        logits = model.forward(batch, alphas, training=training)
        n_labels = logits.shape[-1]
        flat = reshape(logits, (-1, n_labels))
        loss = cross_entropy_masked(flat, batch.label_ids.reshape(-1), IGNORE_ID)
    except FloatingPointError as e:
        raise DivergenceError(f"NaN during forward at {where or 'evaluation'}: {e}") from e
    if where is not None and not np.isfinite(loss.data):
        raise DivergenceError(f"non-finite loss at {where}")
    return loss


def evaluate(model, alphas, batches: list[BatchInput], label_names=None):
    """Eval-mode pass: token-weighted mean loss plus a full metrics report."""
    total_nll = 0.0
    total_tokens = 0
    all_preds: list[int] = []
    all_golds: list[int] = []
    for b in batches:
        logits = model.forward(b, alphas, training=False)
        n_labels = logits.shape[-1]
        loss = cross_entropy_masked(reshape(logits, (-1, n_labels)),
                                    b.label_ids.reshape(-1), IGNORE_ID)
        n_valid = int((b.label_ids != IGNORE_ID).sum())
        total_nll += float(loss.data) * n_valid
        total_tokens += n_valid
        preds = np.where(np.asarray(b.attention_mask) == 1,
                         logits.data.argmax(axis=2), IGNORE_ID)
        all_preds.extend(preds.reshape(-1).tolist())
        all_golds.extend(b.label_ids.reshape(-1).tolist())
    counts = count(all_preds, all_golds, IGNORE_ID)
    mean_loss = total_nll / total_tokens if total_tokens else 0.0
    return report(counts, label_names=label_names, loss=mean_loss)


def search_epoch(model: Model, arch: ArchParameters, w_opt, a_opt,
                 w_batches: list[BatchInput], a_batches: list[BatchInput],
                 epoch: int, label_names=None) -> EpochStats:
    """One epoch of paired alternating updates plus a validation pass."""
    w_params = list(model.parameters().values())
    train_losses, arch_losses = [], []
    for step, wb in enumerate(w_batches):
        ab = a_batches[step % len(a_batches)]
        # (a) weight step on the weight split, alphas frozen
        _zero(w_params, arch.alphas)
        with record():
            loss = _batch_loss(model, wb, arch.alphas, training=True,
                               where=f"paired step {step} (weight update)")
            backward(loss)
        w_opt.step()
        train_losses.append(float(loss.data))
        # (b) alpha step on the alpha split, weights frozen
        _zero(w_params, arch.alphas)
        with record():
            aloss = _batch_loss(model, ab, arch.alphas, training=True,
                                where=f"paired step {step} (alpha update)")
            backward(aloss)
        a_opt.step()
        # (c) weight-split loss re-measured under the new alphas
        rloss = _batch_loss(model, wb, arch.alphas, training=False)
        arch_losses.append(float(rloss.data))
    rep = evaluate(model, arch.alphas, a_batches, label_names=label_names)
    return EpochStats(
        epoch=epoch,
        train_loss=float(np.mean(train_losses)) if train_losses else 0.0,
        arch_loss=float(np.mean(arch_losses)) if arch_losses else 0.0,
        val_loss=rep.loss,
        val_f1_weighted=rep.weighted_f1,
        val_accuracy=rep.accuracy,
    )


def _zero(w_params, alphas):
    for p in w_params:
        p.grad = None
    for a in alphas:
        a.grad = None


# ---------------------------------------------------------------------------
# genotype
# ---------------------------------------------------------------------------


@dataclass
class Genotype:
    nodes: list[list[tuple[int, str]]]  # per node: retained (input state, op name)
    primitives: tuple[str, ...]
    channels: int
    version: int = 1

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "primitives": list(self.primitives),
            "nodes": [
                {"inputs": [{"from": frm, "op": op} for frm, op in node]}
                for node in self.nodes
            ],
            "channels": self.channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        return cls(
            nodes=[[(inp["from"], inp["op"]) for inp in node["inputs"]]
                   for node in d["nodes"]],
            primitives=tuple(d["primitives"]),
            channels=d["channels"],
            version=d.get("version", 1),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "Genotype":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _softmax_np(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max())
    return e / e.sum()


def derive_genotype(arch: ArchParameters | list, config: CellConfig) -> Genotype:
    """Discretize: per-edge argmax excluding "zero", top-2 edges per node."""
    alphas = arch.alphas if isinstance(arch, ArchParameters) else arch
    arrays = [a.data if isinstance(a, Tensor) else np.asarray(a) for a in alphas]
    if len(arrays) != config.edge_count:
        raise ConfigError(
            f"{len(arrays)} alpha vectors for a cell with {config.edge_count} edges"
        )
    names = list(config.primitives)
    nodes = []
    for j in range(config.nodes):
        candidates = []  # (weight, state, op)
        for state in range(j + 2):
            w = _softmax_np(arrays[config.edge_index(j, state)])
            best_k = None
            for k, name in enumerate(names):
                if name == "zero":
                    continue
                if best_k is None or w[k] > w[best_k]:
                    best_k = k
            candidates.append((w[best_k], state, names[best_k]))
        # strongest two edges; ties fall to the lower input index
        ranked = sorted(candidates, key=lambda c: (-c[0], c[1]))
        chosen = sorted(ranked[: min(2, len(ranked))], key=lambda c: c[1])
        nodes.append([(state, op) for _, state, op in chosen])
    return Genotype(nodes=nodes, primitives=tuple(names), channels=config.channels)


# ---------------------------------------------------------------------------
# discrete model
# ---------------------------------------------------------------------------


class DiscreteCell:
    """Cell with fixed single ops on the retained edges only."""

    def __init__(self, genotype: Genotype, c_in: int, rng: np.random.Generator,
                 use_norm: bool = True):
        C = genotype.channels
        for node in genotype.nodes:
            for _, op in node:
                if op not in genotype.primitives:
                    raise DataError(f"genotype references unknown primitive {op!r}")
                if op == "zero":
                    raise DataError("genotype must not retain the zero op")
        self.genotype = genotype
        self.pre0 = ConvNorm(c_in, C, rng, use_norm=use_norm)
        self.pre1 = ConvNorm(c_in, C, rng, use_norm=use_norm)
        self.node_ops: list[list[tuple[int, PrimitiveInstance]]] = [
            [(frm, PrimitiveInstance(op, C, rng)) for frm, op in node]
            for node in genotype.nodes
        ]
        n_nodes = len(genotype.nodes)
        self.proj = uniform_init(rng, (C, n_nodes * C, 1), fan_in=n_nodes * C)

    def forward(self, s0, s1, mask, training: bool):
        states = [self.pre0(s0, training), self.pre1(s1, training)]
        for node in self.node_ops:
            acc = None
            for frm, op in node:
                term = op(states[frm], mask)
                acc = term if acc is None else acc + term
            states.append(acc)
        return conv1d(concat(states[2:], axis=1), self.proj)

    def parameters(self):
        ps = [("pre0." + n, t) for n, t in self.pre0.parameters()]
        ps += [("pre1." + n, t) for n, t in self.pre1.parameters()]
        for j, node in enumerate(self.node_ops):
            for frm, op in node:
                for n, t in op.parameters():
                    ps.append((f"node{j}.in{frm}.{op.kind}.{n}", t))
        ps.append(("proj", self.proj))
        return ps


class DiscreteModel:
    """Fixed-architecture labeler built from a genotype; no alphas anywhere."""

    def __init__(self, genotype: Genotype, config: ModelConfig, seed: int = 0):
        self.genotype = genotype
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
        C = config.channels
        self.embed = uniform_init(rng, (config.vocab_size, config.embed_dim),
                                  fan_in=config.embed_dim)
        self.stem0 = ConvNorm(config.embed_dim, C, rng, use_relu=False,
                              use_norm=config.use_norm)
        self.stem1 = ConvNorm(config.embed_dim, C, rng, use_relu=False,
                              use_norm=config.use_norm)
        self.cells = [DiscreteCell(genotype, C, rng, use_norm=config.use_norm)
                      for _ in range(config.num_cells)]
        self.classifier = Linear(C, config.num_labels, rng)
        self._dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))

    def forward(self, batch: BatchInput, alphas=None, training: bool = True):
        ids = np.asarray(batch.token_ids)
        if ((ids < 0) | (ids >= self.config.vocab_size)).any():
            raise DataError("token id out of range for discrete model vocab")
        mask = Tensor(np.asarray(batch.attention_mask, dtype=np.float64))
        emb = transpose(embedding(self.embed, ids), (0, 2, 1))
        s_prev2 = self.stem0(emb, training)
        s_prev1 = self.stem1(emb, training)
        for cell in self.cells:
            out = cell.forward(s_prev2, s_prev1, mask, training)
            s_prev2, s_prev1 = s_prev1, out
        h = dropout(s_prev1, self.config.dropout_p, self._dropout_rng, training)
        return self.classifier(transpose(h, (0, 2, 1)))

    def predict(self, batch: BatchInput, alphas=None) -> np.ndarray:
        logits = self.forward(batch, training=False)
        preds = logits.data.argmax(axis=2)
        return np.where(np.asarray(batch.attention_mask) == 1, preds, IGNORE_ID)

    def parameters(self) -> dict[str, Tensor]:
        ps: list[tuple[str, Tensor]] = [("embed", self.embed)]
        ps += [("stem0." + n, t) for n, t in self.stem0.parameters()]
        ps += [("stem1." + n, t) for n, t in self.stem1.parameters()]
        for k, cell in enumerate(self.cells):
            ps += [(f"cells.{k}." + n, t) for n, t in cell.parameters()]
        ps += [("classifier." + n, t) for n, t in self.classifier.parameters()]
        return dict(ps)

    def norm_layers(self):
        layers = [self.stem0.norm, self.stem1.norm]
        for cell in self.cells:
            layers += [cell.pre0.norm, cell.pre1.norm]
        return [l for l in layers if l is not None]


def build_discrete_model(genotype: Genotype, config: ModelConfig,
                         seed: int = 0) -> DiscreteModel:
    """Fresh from-scratch model realizing only the retained edges."""
    return DiscreteModel(genotype, config, seed=seed)


def load_discrete_checkpoint(path, seed: int = 0) -> DiscreteModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "discrete":
        raise DataError(f"checkpoint kind {payload.get('kind')!r} is not discrete")
    genotype = Genotype.from_dict(payload["extra"]["genotype"])
    model = DiscreteModel(genotype, config_from_dict(payload["config"]), seed=seed)
    _restore_weights(model, payload)
    return model


# ---------------------------------------------------------------------------
# final training
# ---------------------------------------------------------------------------


def train_final(model, train_batches: list[BatchInput], val_batches: list[BatchInput],
                epochs: int, opt, label_names=None) -> list[EpochStats]:
    """Single-level training; returns per-epoch stats, model left at best val F1.

    The arch_loss column is search-specific and logged as 0 here.
    """
    stats: list[EpochStats] = []
    params = model.parameters()
    best_f1 = -1.0
    best_weights = None
    best_stats = None
    for epoch in range(1, epochs + 1):
        losses = []
        for step, batch in enumerate(train_batches):
            opt.zero_grad()
            with record():
                loss = _batch_loss(model, batch, None, training=True,
                                   where=f"epoch {epoch} step {step}")
                backward(loss)
            opt.step()
            losses.append(float(loss.data))
        rep = evaluate(model, None, val_batches, label_names=label_names)
        stats.append(EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(losses)) if losses else 0.0,
            arch_loss=0.0,
            val_loss=rep.loss,
            val_f1_weighted=rep.weighted_f1,
            val_accuracy=rep.accuracy,
        ))
        if rep.weighted_f1 > best_f1:
            best_f1 = rep.weighted_f1
            best_weights = {n: t.data.copy() for n, t in params.items()}
            best_stats = [(l.running_mean.copy(), l.running_var.copy())
                          for l in model.norm_layers()]
    if best_weights is not None:
        for n, t in params.items():
            t.data = best_weights[n]
        for layer, (rm, rv) in zip(model.norm_layers(), best_stats):
            layer.running_mean = rm
            layer.running_var = rv
    return stats


# ---------------------------------------------------------------------------
# whole-search driver
# ---------------------------------------------------------------------------


@dataclass
class SearchOutcome:
    stats: list[EpochStats]
    arch: ArchParameters
    genotype: Genotype
    model: Model


def run_search(corpus: list[TaggedSentence], vocab, config: ModelConfig,
               epochs: int, batch_size: int, max_len: int, ratio: float,
               lr_w: float, lr_alpha: float, seed: int,
               label_names=None) -> SearchOutcome:
    """Split, batch, alternate updates for `epochs`, derive the genotype."""
    w_sents, a_sents = split_search_data(corpus, ratio, seed)
    w_ex = [align(s, vocab, max_len) for s in w_sents]
    a_ex = [align(s, vocab, max_len) for s in a_sents]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    # batch composition fixed for the whole run: identical seeds give
    # bit-identical trajectories
    w_batches = make_batches(w_ex, batch_size, vocab.pad_id, rng)
    a_batches = make_batches(a_ex, batch_size, vocab.pad_id, rng)
    model = Model(config, seed=seed)
    arch = init_arch_parameters(config.cell, seed)
    w_opt = SGD(list(model.parameters().values()), lr=lr_w)
    a_opt = RMSProp(arch.alphas, lr=lr_alpha)
    names = label_names or {i: t for i, t in enumerate(TAGS)}
    stats = []
    for epoch in range(1, epochs + 1):
        stats.append(search_epoch(model, arch, w_opt, a_opt, w_batches, a_batches,
                                  epoch, label_names=names))
    arch.opt_state = a_opt.state()
    genotype = derive_genotype(arch, config.cell)
    return SearchOutcome(stats=stats, arch=arch, genotype=genotype, model=model)
