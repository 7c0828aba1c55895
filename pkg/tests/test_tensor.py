import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handover_ie import tensor as T

def rows(min_cols=2, max_cols=6):
    return st.lists(
        st.lists(st.floats(-50, 50), min_size=min_cols, max_size=max_cols),
        min_size=1, max_size=4,
    ).filter(lambda r: len({len(x) for x in r}) == 1)


def test_softmax_constant_row_is_uniform():
    for k in (1, 2, 5, 9):
        out = T.softmax_rows(T.constant(np.full((1, k), 3.25))).data
        assert np.allclose(out, 1.0 / k, atol=1e-12)


def test_softmax_closed_form():
    out = T.softmax_rows(T.constant(np.array([[0.0, math.log(2.0)]]))).data
    assert np.allclose(out, [[1 / 3, 2 / 3]], atol=1e-12)


@given(rows())
@settings(max_examples=80)
def test_softmax_rows_sum_to_one(data):
    out = T.softmax_rows(T.constant(np.array(data))).data
    assert np.abs(out.sum(axis=-1) - 1.0).max() < 1e-9


@given(rows(), st.floats(-30, 30))
@settings(max_examples=80)
def test_softmax_shift_invariance(data, c):
    x = np.array(data)
    a = T.softmax_rows(T.constant(x)).data
    b = T.softmax_rows(T.constant(x + c)).data
    assert np.abs(a - b).max() < 1e-9


def test_layer_norm_standardizes_rows():
    rng = np.random.default_rng(0)
    x = T.constant(rng.normal(3.0, 2.0, (5, 16)))
    gain = T.constant(np.ones(16))
    bias = T.constant(np.zeros(16))
    out = T.layer_norm(x, gain, bias).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-6


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(1)
    x = rng.normal(0, 3, (4, 7))
    a = T.log_softmax_rows(T.constant(x)).data
    b = np.log(T.softmax_rows(T.constant(x)).data)
    assert np.abs(a - b).max() < 1e-12


def test_shape_errors_name_both_shapes():
    with pytest.raises(T.ShapeError) as err:
        T.matmul(T.constant(np.zeros((2, 3))), T.constant(np.zeros((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)
    with pytest.raises(T.ShapeError):
        T.add(T.constant(np.zeros((2, 3))), T.constant(np.zeros((4,))))
    with pytest.raises(T.ShapeError):
        T.layer_norm(T.constant(np.zeros((2, 3))), T.constant(np.zeros(4)), T.constant(np.zeros(3)))


def test_embedding_range_check():
    table = T.Parameter(np.zeros((3, 2)), "t")
    with pytest.raises(IndexError):
        T.embedding_lookup(table, [0, 3])


def test_masked_nll_requires_unignored_position():
    lp = T.constant(np.log(np.full((2, 3), 1 / 3)))
    with pytest.raises(ValueError):
        T.masked_nll(lp, [-100, -100])


def test_grad_check_epsilon_validation():
    p = T.Parameter(np.ones(2), "p")
    with pytest.raises(ValueError):
        T.grad_check(lambda: T.reshape(p, (1, 2)), [p], epsilon=0.5)


def test_grad_check_rejects_nonfinite_value():
    p = T.Parameter(np.array([1.0]), "p")

    def f():
        out = T.reshape(p, (1, 1))
        out.data = np.array([[np.inf]])
        return T.reshape(out, ())

    with pytest.raises(ValueError):
        T.grad_check(f, [p])


def test_grad_check_linear_is_machine_precision():
    rng = np.random.default_rng(2)
    c = T.constant(rng.normal(0, 1, (1, 6)))
    p = T.Parameter(rng.normal(0, 1, (6, 1)), "p")
    err = T.grad_check(lambda: T.reshape(T.matmul(c, p), ()), [p])
    assert err < 1e-9


def test_grad_check_constant_function_is_zero():
    p = T.Parameter(np.ones(4), "p")
    c = T.constant(np.array(2.5))
    err = T.grad_check(lambda: T.add(c, T.constant(np.array(0.0))), [p])
    assert err == 0.0
    assert np.all(p.grad == 0.0)


def test_grad_check_cross_entropy_softmax_matmul():
    rng = np.random.default_rng(3)
    a = T.Parameter(rng.normal(0, 1, (4, 5)), "a")
    b = T.Parameter(rng.normal(0, 1, (5, 5)), "b")
    labels = [1, 4, 0, 2]

    def f():
        return T.masked_nll(T.log_softmax_rows(T.matmul(a, b)), labels)

    assert T.grad_check(f, [a, b], epsilon=1e-5) < 1e-6


PRIMITIVES = [
    "add", "mul", "scale", "matmul", "batched_matmul", "embedding",
    "softmax", "log_softmax", "layer_norm", "gelu", "dropout",
    "reshape_transpose", "masked_nll",
]


@pytest.mark.parametrize("primitive", PRIMITIVES)
def test_every_primitive_grad_checks_below_1e6(primitive):
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(1000 * PRIMITIVES.index(primitive) + trial)
        worst = max(worst, _primitive_check(primitive, rng))
    assert worst < 1e-6, (primitive, worst)


def _make_readout(size: int, rng):
    # drawn once: grad_check re-evaluates f, which must stay deterministic
    w = T.constant(rng.normal(0, 1, (size, 1)))

    def readout(x: T.Tensor) -> T.Tensor:
        return T.reshape(T.matmul(T.reshape(x, (1, x.data.size)), w), ())

    return readout


def _primitive_check(name: str, rng) -> float:
    def par(shape, scale=1.0, pname="p"):
        return T.Parameter(rng.normal(0, scale, shape), pname)

    if name == "add":
        a, b = par((3, 4)), par((4,), pname="q")
        out = _make_readout(12, rng)
        return T.grad_check(lambda: out(T.add(a, b)), [a, b])
    if name == "mul":
        a, b = par((3, 4)), par((3, 4), pname="q")
        out = _make_readout(12, rng)
        return T.grad_check(lambda: out(T.mul(a, b)), [a, b])
    if name == "scale":
        a = par((2, 5))
        out = _make_readout(10, rng)
        return T.grad_check(lambda: out(T.scale(a, -1.7)), [a])
    if name == "matmul":
        a, b = par((3, 4)), par((4, 2), pname="q")
        out = _make_readout(6, rng)
        return T.grad_check(lambda: out(T.matmul(a, b)), [a, b])
    if name == "batched_matmul":
        a, b = par((2, 3, 4)), par((2, 4, 3), pname="q")
        out = _make_readout(18, rng)
        return T.grad_check(lambda: out(T.matmul(a, b)), [a, b])
    if name == "embedding":
        tab = par((5, 3))
        ids = rng.integers(0, 5, 6)
        out = _make_readout(18, rng)
        return T.grad_check(lambda: out(T.embedding_lookup(tab, ids)), [tab])
    if name == "softmax":
        a = par((3, 5))
        out = _make_readout(15, rng)
        return T.grad_check(lambda: out(T.softmax_rows(a)), [a])
    if name == "log_softmax":
        a = par((3, 5))
        out = _make_readout(15, rng)
        return T.grad_check(lambda: out(T.log_softmax_rows(a)), [a])
    if name == "layer_norm":
        x, g, b = par((3, 6)), par((6,), 0.5, "g"), par((6,), 0.5, "b")
        g.data += 1.0
        out = _make_readout(18, rng)
        return T.grad_check(lambda: out(T.layer_norm(x, g, b)), [x, g, b])
    if name == "gelu":
        a = par((4, 4), 1.5)
        out = _make_readout(16, rng)
        return T.grad_check(lambda: out(T.gelu(a)), [a])
    if name == "dropout":
        a = par((4, 5))
        mask = T.dropout_mask((4, 5), 0.4, rng)
        out = _make_readout(20, rng)
        return T.grad_check(lambda: out(T.apply_dropout(a, mask)), [a])
    if name == "reshape_transpose":
        a = par((2, 3, 4))
        out = _make_readout(24, rng)
        return T.grad_check(
            lambda: out(T.reshape(T.transpose(a, (2, 0, 1)), (4, 6))), [a]
        )
    if name == "masked_nll":
        a = par((5, 3))
        labels = [0, -100, 2, 1, -100]
        return T.grad_check(lambda: T.masked_nll(T.log_softmax_rows(a), labels), [a])
    raise AssertionError(name)


def test_dropout_mask_properties():
    rng = np.random.default_rng(4)
    mask = T.dropout_mask((200, 50), 0.25, rng).data
    assert set(np.unique(mask)) <= {0.0, 1.0 / 0.75}
    assert abs((mask > 0).mean() - 0.75) < 0.02
    assert np.all(T.dropout_mask((3, 3), 0.0, rng).data == 1.0)
    with pytest.raises(ValueError):
        T.dropout_mask((2,), 1.0, rng)


def test_finite_check_mode():
    with np.errstate(over="ignore"):
        T.set_finite_checks(True)
        try:
            big = T.constant(np.array([[1e308, 1e308]]))
            with pytest.raises(FloatingPointError):
                T.add(big, big)
        finally:
            T.set_finite_checks(False)
        out = T.add(T.constant(np.array([[1e308]])), T.constant(np.array([[1e308]])))
        assert np.isinf(out.data).any()


def test_backward_accumulates_through_shared_nodes():
    p = T.Parameter(np.array([[2.0]]), "p")
    shared = T.scale(p, 3.0)
    out = T.add(shared, shared)
    T.backward(T.reshape(out, ()))
    assert p.grad[0, 0] == 6.0


def test_backward_requires_scalar_root():
    p = T.Parameter(np.ones((2, 2)), "p")
    with pytest.raises(T.ShapeError):
        T.backward(T.scale(p, 1.0))


def test_archive_round_trip_bytes(tmp_path):
    rng = np.random.default_rng(5)
    entries = [
        ("embeddings.token", rng.normal(0, 1, (4, 3))),
        ("f32 tensor", rng.normal(0, 1, (2, 2)).astype(np.float32)),
        ("scalarish", np.array([7.5])),
    ]
    first = tmp_path / "a.tarch"
    second = tmp_path / "b.tarch"
    T.save_archive(entries, str(first))
    loaded = T.load_archive(str(first))
    assert [k for k in loaded] == [name for name, _ in entries]
    for (name, arr), (k, v) in zip(entries, loaded.items()):
        assert np.array_equal(arr, v) and arr.dtype == v.dtype
    T.save_archive(list(loaded.items()), str(second))
    assert first.read_bytes() == second.read_bytes()


def test_archive_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.tarch"
    path.write_bytes(b"NOPE!!\n")
    with pytest.raises(ValueError):
        T.load_archive(str(path))


def test_archive_rejects_unknown_dtype(tmp_path):
    path = tmp_path / "int.tarch"
    with pytest.raises(ValueError):
        T.save_archive([("x", np.arange(3))], str(path))


def test_parameter_gradient_shape_invariant():
    p = T.Parameter(np.zeros((3, 2)), "w")
    assert p.grad.shape == p.data.shape
    assert p.name == "w"
    T.zero_grad([p])
    assert p.grad.shape == (3, 2)
