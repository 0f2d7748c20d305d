"""The searchable cell: two preprocessed inputs feeding a DAG of mixed ops.

Every internal node receives one edge from each cell input and from every
earlier node, so a cell with n nodes has sum_{j=0..n-1} (j+2) edges. Each
edge carries a softmax-weighted mixture of the whole primitive set; node
values are the sum of their incoming edges; the cell output concatenates
all node values channel-wise and projects back to the working width with
a 1x1 conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accum, _track, concat, conv1d, mul, softmax
from .errors import ConfigError
from .layers import ConvNorm, uniform_init
from .primitives import PRIMITIVE_NAMES, PrimitiveInstance, make_primitive_set


@dataclass
class CellConfig:
    nodes: int = 3
    channels: int = 32
    primitives: tuple = tuple(PRIMITIVE_NAMES)

    def __post_init__(self):
        if self.nodes < 1:
            raise ConfigError(f"cell needs at least 1 node, got {self.nodes}")

    @property
    def edge_count(self) -> int:
        return sum(j + 2 for j in range(self.nodes))

    def edge_index(self, node: int, state: int) -> int:
        """Flat index of the edge from `state` (0=s0, 1=s1, i+2=node i) into `node`."""
        return sum(j + 2 for j in range(node)) + state


def mixed_op(x: Tensor, edge_alphas: Tensor, prims: list[PrimitiveInstance],
             mask: Tensor) -> Tensor:
    """Softmax-weighted sum of every primitive's output on one edge."""
    if len(prims) == 0:
        raise ConfigError("mixed_op needs a non-empty primitive list")
    if edge_alphas.shape != (len(prims),):
        raise ConfigError(
            f"alpha vector {edge_alphas.shape} does not match {len(prims)} primitives"
        )
    weights = softmax(edge_alphas, axis=0)
    out = None
    for i, prim in enumerate(prims):
        term = mul(_pick(weights, i), prim(x, mask))
        out = term if out is None else out + term
    return out


def _pick(weights: Tensor, i: int) -> Tensor:
    """Scalar slice weights[i] as a 0-d tensor with gradient routed back."""
    out = Tensor(weights.data[i])

    def bw(g):
        gi = np.zeros(weights.shape)
        gi[i] = g
        _accum(weights, gi)

    return _track((weights,), out, bw)


class Cell:
    """One cell instance owning preprocessing blocks and per-edge primitive copies."""

    def __init__(self, config: CellConfig, c_in: int, rng: np.random.Generator,
                 use_norm: bool = True):
        self.config = config
        C = config.channels
        self.pre0 = ConvNorm(c_in, C, rng, use_norm=use_norm)
        self.pre1 = ConvNorm(c_in, C, rng, use_norm=use_norm)
        # independent weights per edge; alphas are shared across cells and
        # live outside, in ArchParameters
        self.edges: list[list[PrimitiveInstance]] = [
            make_primitive_set(config.primitives, C, rng)
            for _ in range(config.edge_count)
        ]
        self.proj = uniform_init(rng, (C, config.nodes * C, 1), fan_in=config.nodes * C)

    def forward(self, s0: Tensor, s1: Tensor, alphas: list[Tensor], mask: Tensor,
                training: bool) -> Tensor:
        if len(alphas) != self.config.edge_count:
            raise ConfigError(
                f"expected {self.config.edge_count} alpha vectors, got {len(alphas)}"
            )
        states = [self.pre0(s0, training), self.pre1(s1, training)]
        e = 0
        for _ in range(self.config.nodes):
            node = None
            for state in states:
                term = mixed_op(state, alphas[e], self.edges[e], mask)
                node = term if node is None else node + term
                e += 1
            states.append(node)
        return conv1d(concat(states[2:], axis=1), self.proj)

    def parameters(self):
        ps = [("pre0." + n, t) for n, t in self.pre0.parameters()]
        ps += [("pre1." + n, t) for n, t in self.pre1.parameters()]
        for e, prims in enumerate(self.edges):
            for prim in prims:
                for n, t in prim.parameters():
                    ps.append((f"edge{e}.{prim.kind}.{n}", t))
        ps.append(("proj", self.proj))
        return ps


def cell_forward(cell: Cell, s0: Tensor, s1: Tensor, alphas: list[Tensor],
                 mask: Tensor, training: bool = True) -> Tensor:
    return cell.forward(s0, s1, alphas, mask, training)
