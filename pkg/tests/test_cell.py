import numpy as np
import pytest

from seqnas.autodiff import Tensor, backward, concat, conv1d, grad_check, record, tsum
from seqnas.cell import Cell, CellConfig, cell_forward, mixed_op
from seqnas.errors import ConfigError
from seqnas.layers import ConvNorm
from seqnas.primitives import PRIMITIVE_NAMES, default_primitive_set


def _dyadic(rng, shape, scale=1.0):
    return np.round(rng.normal(size=shape) * scale * 2**20) / 2**20


def _mask(b, t):
    return Tensor(np.ones((b, t)))


# ---------------------------------------------------------------------------
# preprocess block
# ---------------------------------------------------------------------------


def test_preprocess_survives_zero_input():
    block = ConvNorm(4, 6, np.random.default_rng(0))
    out = block(Tensor(np.zeros((2, 4, 5))), training=True)
    assert out.shape == (2, 6, 5)
    assert np.isfinite(out.data).all()


def test_preprocess_identity_configuration():
    block = ConvNorm(4, 4, np.random.default_rng(0), use_norm=False)
    block.weight.data = np.eye(4).reshape(4, 4, 1)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 5)))
    out = block(x, training=True)
    np.testing.assert_allclose(out.data, np.maximum(x.data, 0.0), rtol=1e-15)


def test_preprocess_gradients():
    block = ConvNorm(3, 4, np.random.default_rng(2))
    x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 4)), requires_grad=True)
    params = [t for _, t in block.parameters()]

    def loss(*ts):
        out = block(ts[-1], training=True)
        return tsum(out * out)

    assert grad_check(loss, params + [x]) < 1e-4


# ---------------------------------------------------------------------------
# mixed op
# ---------------------------------------------------------------------------


def test_mixed_op_uniform_alphas_is_arithmetic_mean():
    rng = np.random.default_rng(4)
    prims = default_primitive_set(channels=4, seed=5)
    x = Tensor(rng.normal(size=(2, 4, 3)))
    mask = _mask(2, 3)
    out = mixed_op(x, Tensor(np.zeros(5)), prims, mask)
    mean = np.mean([p(x, mask).data for p in prims], axis=0)
    np.testing.assert_allclose(out.data, mean, rtol=1e-12, atol=1e-15)


def test_mixed_op_saturated_on_skip_returns_input():
    rng = np.random.default_rng(5)
    prims = default_primitive_set(channels=4, seed=6)
    x = Tensor(rng.normal(size=(1, 4, 3)))
    alphas = Tensor(np.array([-40.0, -40.0, -40.0, 40.0, -40.0]))
    out = mixed_op(x, alphas, prims, _mask(1, 3))
    np.testing.assert_allclose(out.data, x.data, atol=1e-12)


def test_mixed_op_matches_explicit_weighted_sum():
    rng = np.random.default_rng(6)
    prims = default_primitive_set(channels=4, seed=7)
    x = Tensor(rng.normal(size=(2, 4, 5)))
    mask = _mask(2, 5)
    a = rng.normal(size=5)
    out = mixed_op(x, Tensor(a), prims, mask)
    w = np.exp(a - a.max())
    w = w / w.sum()
    oracle = sum(w[i] * prims[i](x, mask).data for i in range(5))
    np.testing.assert_allclose(out.data, oracle, rtol=1e-12, atol=1e-15)
    # the zero primitive contributes weight * 0 exactly
    np.testing.assert_allclose(
        out.data,
        sum(w[i] * prims[i](x, mask).data for i in range(4)),
        rtol=1e-12, atol=1e-15,
    )


def test_mixed_op_weights_on_simplex():
    # scales up to 4: the search regime (alphas init at sigma=1e-3 and move
    # slowly); extreme logit gaps would round the top weight to exactly 1.0
    rng = np.random.default_rng(7)
    from seqnas.autodiff import softmax
    for _ in range(200):
        a = rng.normal(scale=rng.uniform(0.1, 4.0), size=5)
        w = softmax(Tensor(a), axis=0).data
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w > 0) and np.all(w < 1)


def test_mixed_op_saturated_on_zero_absorbs_everything():
    rng = np.random.default_rng(8)
    prims = default_primitive_set(channels=4, seed=9)
    x = Tensor(rng.normal(size=(2, 4, 3)))
    alphas = Tensor(np.array([-40.0, -40.0, -40.0, -40.0, 40.0]))
    out = mixed_op(x, alphas, prims, _mask(2, 3))
    np.testing.assert_allclose(out.data, np.zeros((2, 4, 3)), atol=1e-12)


def test_mixed_op_empty_primitive_list_rejected():
    with pytest.raises(ConfigError):
        mixed_op(Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros(0)), [], _mask(1, 2))


def test_mixed_op_alpha_gradient_flows():
    prims = default_primitive_set(channels=4, seed=8)
    x = Tensor(np.random.default_rng(9).normal(size=(1, 4, 3)))
    alphas = Tensor(np.zeros(5), requires_grad=True)
    err = grad_check(lambda a: _sq(mixed_op(x, a, prims, _mask(1, 3))), [alphas])
    assert err < 1e-5
    with record():
        backward(_sq(mixed_op(x, alphas, prims, _mask(1, 3))))
    assert np.any(alphas.grad != 0)


def _sq(t):
    return tsum(t * t)


# ---------------------------------------------------------------------------
# cell forward
# ---------------------------------------------------------------------------


def _saturated_alphas(config, op_name):
    idx = list(config.primitives).index(op_name)
    alphas = []
    for _ in range(config.edge_count):
        a = np.full(len(config.primitives), -40.0)
        a[idx] = 40.0
        alphas.append(Tensor(a))
    return alphas


def test_cell_skip_only_is_projected_sum_of_preprocessed_inputs():
    config = CellConfig(nodes=1, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(10))
    rng = np.random.default_rng(11)
    s0 = Tensor(rng.normal(size=(2, 4, 3)))
    s1 = Tensor(rng.normal(size=(2, 4, 3)))
    mask = _mask(2, 3)
    out = cell_forward(cell, s0, s1, _saturated_alphas(config, "skip_connect"),
                       mask, training=True)
    p0 = cell.pre0(s0, True)
    p1 = cell.pre1(s1, True)
    expected = conv1d(p0 + p1, cell.proj)
    np.testing.assert_allclose(out.data, expected.data, atol=1e-12)


def test_cell_zero_only_output_is_projection_of_zeros():
    config = CellConfig(nodes=2, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(12))
    rng = np.random.default_rng(13)
    s0 = Tensor(rng.normal(size=(1, 4, 3)))
    s1 = Tensor(rng.normal(size=(1, 4, 3)))
    out = cell_forward(cell, s0, s1, _saturated_alphas(config, "zero"),
                       _mask(1, 3), training=True)
    np.testing.assert_allclose(out.data, np.zeros((1, 4, 3)), atol=1e-12)


def test_cell_against_straight_line_dag_oracle():
    # independent reimplementation of the recurrence, using the same blocks
    config = CellConfig(nodes=2, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(14))
    rng = np.random.default_rng(15)
    s0 = Tensor(rng.normal(size=(2, 4, 5)))
    s1 = Tensor(rng.normal(size=(2, 4, 5)))
    mask = _mask(2, 5)
    alphas = [Tensor(rng.normal(size=5)) for _ in range(config.edge_count)]
    out = cell_forward(cell, s0, s1, alphas, mask, training=False)

    p0 = cell.pre0(s0, False)
    p1 = cell.pre1(s1, False)
    n0 = mixed_op(p0, alphas[0], cell.edges[0], mask) + \
        mixed_op(p1, alphas[1], cell.edges[1], mask)
    n1 = mixed_op(p0, alphas[2], cell.edges[2], mask) + \
        mixed_op(p1, alphas[3], cell.edges[3], mask) + \
        mixed_op(n0, alphas[4], cell.edges[4], mask)
    oracle = conv1d(concat([n0, n1], axis=1), cell.proj)
    np.testing.assert_allclose(out.data, oracle.data, rtol=1e-12, atol=1e-14)


def test_cell_alpha_count_mismatch_rejected():
    config = CellConfig(nodes=2, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(16))
    with pytest.raises(ConfigError):
        cell_forward(cell, Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros((1, 4, 2))),
                     [Tensor(np.zeros(5))] * 3, _mask(1, 2), training=True)


def test_cell_edge_count_formula():
    assert CellConfig(nodes=1, channels=4).edge_count == 2
    assert CellConfig(nodes=2, channels=4).edge_count == 5
    assert CellConfig(nodes=3, channels=4).edge_count == 9
    assert CellConfig(nodes=4, channels=4).edge_count == 14


def test_constant_shift_on_one_edge_leaves_output_bit_identical():
    # alphas and shifts on a dyadic grid make the addition lossless, so max
    # subtraction yields bitwise-equal softmax weights
    config = CellConfig(nodes=2, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(17))
    rng = np.random.default_rng(18)
    s0 = Tensor(_dyadic(rng, (1, 4, 3)))
    s1 = Tensor(_dyadic(rng, (1, 4, 3)))
    mask = _mask(1, 3)
    base_alphas = [_dyadic(rng, 5) for _ in range(config.edge_count)]
    base = cell_forward(cell, s0, s1, [Tensor(a) for a in base_alphas], mask,
                        training=False).data
    for edge in range(config.edge_count):
        shifted = [a.copy() for a in base_alphas]
        shifted[edge] = shifted[edge] + 512.25
        out = cell_forward(cell, s0, s1, [Tensor(a) for a in shifted], mask,
                           training=False).data
        assert np.array_equal(base, out), f"edge {edge}"


def test_alpha_gradient_nonzero_for_differing_primitive():
    config = CellConfig(nodes=1, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(19))
    rng = np.random.default_rng(20)
    s0 = Tensor(rng.normal(size=(1, 4, 3)))
    s1 = Tensor(rng.normal(size=(1, 4, 3)))
    mask = _mask(1, 3)
    alphas = [Tensor(np.zeros(5), requires_grad=True) for _ in range(2)]

    def loss(*a):
        return _sq(cell_forward(cell, s0, s1, list(a), mask, training=False))

    assert grad_check(loss, alphas, eps=1e-5) < 1e-4
    with record():
        backward(loss(*alphas))
    for a in alphas:
        assert np.any(a.grad != 0)


def test_cell_output_shape_invariant_to_dominant_primitive():
    config = CellConfig(nodes=2, channels=4)
    cell = Cell(config, c_in=4, rng=np.random.default_rng(21))
    rng = np.random.default_rng(22)
    s0 = Tensor(rng.normal(size=(2, 4, 6)))
    s1 = Tensor(rng.normal(size=(2, 4, 6)))
    for name in PRIMITIVE_NAMES:
        out = cell_forward(cell, s0, s1, _saturated_alphas(config, name),
                           _mask(2, 6), training=False)
        assert out.shape == (2, 4, 6)
