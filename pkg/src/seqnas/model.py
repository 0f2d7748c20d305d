"""End-to-end token labeler: embedding -> stem -> stacked cells -> classifier.

Cell k takes the outputs of cells k-2 and k-1, with the two stem branches
s0 and s1 seeding the chain. Dropout is applied once, after the last cell,
in train mode only. The classifier is a single per-token linear map from
the cell width to the label count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, dropout, embedding, transpose
from .cell import Cell, CellConfig
from .errors import ConfigError, DataError
from .layers import ConvNorm, Linear, uniform_init

IGNORE_ID = -100


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    channels: int = 32
    num_cells: int = 2
    num_labels: int = 7
    dropout_p: float = 0.1
    use_norm: bool = True
    cell: CellConfig = field(default_factory=CellConfig)

    def __post_init__(self):
        if isinstance(self.cell, dict):
            self.cell = CellConfig(**self.cell)
        self.cell.channels = self.channels
        for name in ("vocab_size", "embed_dim", "channels", "num_cells"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0,1), got {self.dropout_p}")
        if self.num_labels < 2:
            raise ConfigError(f"num_labels must be >= 2, got {self.num_labels}")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["cell"] = {
            "nodes": self.cell.nodes,
            "channels": self.cell.channels,
            "primitives": list(self.cell.primitives),
        }
        return d


@dataclass
class BatchInput:
    token_ids: np.ndarray      # [batch, time] int
    attention_mask: np.ndarray  # [batch, time] {0,1}
    label_ids: np.ndarray      # [batch, time] int, IGNORE_ID on pad/continuations


class Model:
    """Searchable supernetwork; alphas are passed into forward, not owned."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        C = config.channels
        self.embed = uniform_init(rng, (config.vocab_size, config.embed_dim),
                                  fan_in=config.embed_dim)
        self.stem0 = ConvNorm(config.embed_dim, C, rng, use_relu=False,
                              use_norm=config.use_norm)
        self.stem1 = ConvNorm(config.embed_dim, C, rng, use_relu=False,
                              use_norm=config.use_norm)
        self.cells = [Cell(config.cell, C, rng, use_norm=config.use_norm)
                      for _ in range(config.num_cells)]
        self.classifier = Linear(C, config.num_labels, rng)
        self._dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))

    def stem(self, embedded: Tensor, training: bool) -> tuple[Tensor, Tensor]:
        """Two independent 1x1-conv + norm branches over [batch, embed, time]."""
        return self.stem0(embedded, training), self.stem1(embedded, training)

    def forward(self, batch: BatchInput, alphas: list[Tensor],
                training: bool = True) -> Tensor:
        ids = np.asarray(batch.token_ids)
        bad = np.argwhere((ids < 0) | (ids >= self.config.vocab_size))
        if bad.size:
            b, t = bad[0]
            raise DataError(
                f"token id {ids[b, t]} out of range at batch={b} position={t} "
                f"(vocab size {self.config.vocab_size})"
            )
        mask = Tensor(np.asarray(batch.attention_mask, dtype=np.float64))
        emb = transpose(embedding(self.embed, ids), (0, 2, 1))  # [b, e, t]
        s_prev2, s_prev1 = self.stem(emb, training)
        for cell in self.cells:
            out = cell.forward(s_prev2, s_prev1, alphas, mask, training)
            s_prev2, s_prev1 = s_prev1, out
        h = dropout(s_prev1, self.config.dropout_p, self._dropout_rng, training)
        return self.classifier(transpose(h, (0, 2, 1)))  # [b, t, labels]

    def predict(self, batch: BatchInput, alphas: list[Tensor]) -> np.ndarray:
        """Argmax label ids per token; masked positions report IGNORE_ID."""
        logits = self.forward(batch, alphas, training=False)
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


def save_checkpoint(path, model, alphas: list[Tensor] | None = None,
                    extra: dict | None = None, kind: str = "supernet"):
    """Write config + all weights (+ running stats, + alphas) as JSON.

    Works for any model object exposing config/parameters()/norm_layers().
    json round-trips float64 exactly via repr, so load is bit-exact.
    """
    payload = {
        "version": 1,
        "kind": kind,
        "config": model.config.to_dict(),
        "weights": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in model.parameters().items()
        },
        "norm_stats": [
            {k: v.reshape(-1).tolist() for k, v in layer.state().items()}
            for layer in model.norm_layers()
        ],
    }
    if alphas is not None:
        payload["alphas"] = [a.data.tolist() for a in alphas]
    if extra:
        payload["extra"] = extra
    with open(path, "w") as fh:
        json.dump(payload, fh)


def _restore_weights(model, payload: dict):
    params = model.parameters()
    if set(params) != set(payload["weights"]):
        raise DataError("checkpoint weights do not match model layout")
    for name, entry in payload["weights"].items():
        params[name].data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    for layer, stats in zip(model.norm_layers(), payload["norm_stats"]):
        layer.running_mean = np.array(stats["running_mean"]).reshape(layer.running_mean.shape)
        layer.running_var = np.array(stats["running_var"]).reshape(layer.running_var.shape)


def config_from_dict(cfg: dict) -> ModelConfig:
    cfg = dict(cfg)
    cfg["cell"] = CellConfig(
        nodes=cfg["cell"]["nodes"],
        channels=cfg["cell"]["channels"],
        primitives=tuple(cfg["cell"]["primitives"]),
    )
    return ModelConfig(**cfg)


def load_checkpoint(path, seed: int = 0) -> tuple[Model, list[Tensor] | None]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind", "supernet") != "supernet":
        raise DataError(f"checkpoint kind {payload.get('kind')!r} is not a supernet")
    model = Model(config_from_dict(payload["config"]), seed=seed)
    _restore_weights(model, payload)
    alphas = None
    if "alphas" in payload:
        alphas = [Tensor(np.array(a), requires_grad=True) for a in payload["alphas"]]
    return model, alphas
