"""The candidate operation set mixed on every cell edge.

All five kinds share the same (input shape -> same shape) signature over
[batch, channels, time] activations, so any of them can sit on any edge:

    attention     single-head scaled dot-product attention, head dim == channels
    sep_conv3     depthwise k=3 -> pointwise 1x1 -> ReLU
    dil_conv3     depthwise k=3 dilation=2 -> pointwise 1x1
    skip_connect  identity
    zero          all-zeros output, lets the search prune an edge

The canonical name strings and their order below are the wire vocabulary
used by genotype files.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, conv1d, relu, scaled_dot_product_attention, transpose
from .errors import ConfigError
from .layers import uniform_init

PRIMITIVE_NAMES = ("attention", "sep_conv3", "dil_conv3", "skip_connect", "zero")

# Kinds that consume the padding mask. The conv kinds zero their input at
# masked positions so padding never leaks into valid positions through the
# receptive field; attention masks keys and zeroes masked query rows.
_MASK_AWARE = {"attention", "sep_conv3", "dil_conv3"}


class PrimitiveInstance:
    """One concrete candidate op with its owned weights (none for skip/zero)."""

    def __init__(self, kind: str, channels: int, rng: np.random.Generator | None = None):
        if kind not in PRIMITIVE_NAMES:
            raise ConfigError(f"unknown primitive kind: {kind!r}")
        self.kind = kind
        self.channels = channels
        self.mask_aware = kind in _MASK_AWARE
        self.params: list[tuple[str, Tensor]] = []
        if kind == "attention":
            for name in ("w_q", "w_k", "w_v"):
                self.params.append((name, uniform_init(rng, (channels, channels), channels)))
        elif kind in ("sep_conv3", "dil_conv3"):
            self.params.append(("w_dw", uniform_init(rng, (channels, 1, 3), 3)))
            self.params.append(("w_pw", uniform_init(rng, (channels, channels, 1), channels)))

    def parameters(self):
        return list(self.params)

    def param_count(self) -> int:
        return sum(t.size for _, t in self.params)

    def __call__(self, x: Tensor, mask: Tensor) -> Tensor:
        return apply(self, x, mask)


def apply(p: PrimitiveInstance, x: Tensor, mask: Tensor) -> Tensor:
    """Run primitive p on x [batch, channels, time] with mask [batch, time]."""
    if x.shape[1] != p.channels:
        raise ConfigError(
            f"primitive {p.kind} built for {p.channels} channels, input has {x.shape[1]}"
        )
    if p.kind == "skip_connect":
        return x
    if p.kind == "zero":
        return Tensor(np.zeros(x.shape))
    if p.kind == "attention":
        w_q, w_k, w_v = (t for _, t in p.params)
        h = transpose(x, (0, 2, 1))  # [b, t, c]
        out = scaled_dot_product_attention(h @ w_q, h @ w_k, h @ w_v, mask)
        return transpose(out, (0, 2, 1))
    # separable / dilated conv: zero out padded positions first
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    h = x * Tensor(m[:, None, :])
    w_dw, w_pw = (t for _, t in p.params)
    dilation = 2 if p.kind == "dil_conv3" else 1
    h = conv1d(h, w_dw, dilation=dilation, groups=p.channels)
    h = conv1d(h, w_pw, dilation=1, groups=1)
    if p.kind == "sep_conv3":
        h = relu(h)
    return h


def default_primitive_set(channels: int, seed: int) -> list[PrimitiveInstance]:
    """The five canonical primitives in canonical order, seeded deterministically."""
    if channels <= 0:
        raise ConfigError(f"channels must be positive, got {channels}")
    rng = np.random.default_rng(seed)
    return [PrimitiveInstance(name, channels, rng) for name in PRIMITIVE_NAMES]


def make_primitive_set(names, channels: int, rng: np.random.Generator) -> list[PrimitiveInstance]:
    """Primitives for an explicit name list, drawing weights from `rng`."""
    return [PrimitiveInstance(name, channels, rng) for name in names]
