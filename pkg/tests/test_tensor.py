import io

import numpy as np
import pytest

from fuseseg import tensor as T
from fuseseg.errors import ContractError, NonFiniteError, ShapeError
from fuseseg.gradcheck import grad_check


def test_matmul_identity():
    eye = T.Tensor(np.eye(2))
    x = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(eye, x).data, x.data)


def test_matmul_hand_values():
    a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = T.Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal((a @ b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_zero():
    rng = np.random.default_rng(0)
    x = T.Tensor(rng.normal(size=(2, 2)))
    zero = T.Tensor(np.zeros((2, 2)))
    assert np.array_equal((zero @ x).data, np.zeros((2, 2)))


def test_matmul_shape_error_names_shapes():
    a = T.Tensor(np.zeros((2, 3)))
    b = T.Tensor(np.zeros((4, 2)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(a, b)


def test_matmul_gradients():
    rng = np.random.default_rng(1)
    a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    with T.record() as tape:
        loss = (a @ b).sum()
    T.backward(loss, tape)
    g = np.ones((3, 2))
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_batched_matmul_matches_loop():
    rng = np.random.default_rng(2)
    a = T.Tensor(rng.normal(size=(5, 3, 4)))
    b = T.Tensor(rng.normal(size=(5, 4, 2)))
    out = T.matmul(a, b).data
    for i in range(5):
        assert np.allclose(out[i], a.data[i] @ b.data[i])


def test_softmax_symmetry():
    out = T.softmax(T.Tensor([2.5, 2.5, 2.5])).data
    assert np.allclose(out, [1 / 3, 1 / 3, 1 / 3])


def test_softmax_closed_form():
    out = T.softmax(T.Tensor([0.0, np.log(2.0)])).data
    assert np.allclose(out, [1 / 3, 2 / 3])


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 7))
    a = T.softmax(T.Tensor(x), axis=-1).data
    b = T.softmax(T.Tensor(x + 11.25), axis=-1).data
    assert np.max(np.abs(a - b)) < 1e-7


def test_softmax_slices_sum_to_one():
    rng = np.random.default_rng(4)
    out = T.softmax(T.Tensor(rng.normal(size=(2, 3, 5)) * 10), axis=1).data
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(out > 0) and np.all(out < 1)


def test_masked_softmax_zeroes_masked_positions():
    rng = np.random.default_rng(5)
    x = T.Tensor(rng.normal(size=(2, 6)))
    mask = np.array([[1, 1, 0, 1, 0, 0], [1, 1, 1, 1, 1, 1]])
    out = T.masked_softmax(x, mask, axis=-1).data
    assert np.all(out[mask == 0] == 0.0)
    assert np.allclose(out.sum(axis=-1), 1.0)


def test_layer_norm_constant_vector_is_zero():
    x = T.Tensor(np.full((3, 5), 7.0))
    out = T.layer_norm(x, T.Tensor(np.ones(5)), T.Tensor(np.zeros(5)))
    assert np.allclose(out.data, 0.0)


def test_layer_norm_two_point_case():
    out = T.layer_norm(T.Tensor([1.0, 3.0]), T.Tensor(np.ones(2)),
                       T.Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [-1.0, 1.0], atol=1e-5)


def test_layer_norm_gamma_zero_collapses_to_beta():
    rng = np.random.default_rng(6)
    x = T.Tensor(rng.normal(size=(4, 3)))
    beta = T.Tensor([1.0, 2.0, 3.0])
    out = T.layer_norm(x, T.Tensor(np.zeros(3)), beta)
    assert np.allclose(out.data, np.broadcast_to(beta.data, (4, 3)))


def test_layer_norm_moments():
    rng = np.random.default_rng(7)
    x = T.Tensor(rng.normal(size=(10, 16)) * 3 + 1)
    out = T.layer_norm(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16))).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_backward_square():
    x = T.Tensor(3.0, requires_grad=True)
    with T.record() as tape:
        y = x * x
    T.backward(y, tape)
    assert np.allclose(x.grad, 6.0)


def test_backward_unreachable_leaf_gets_zero_grad():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    c = T.Tensor([4.0, 5.0])
    with T.record() as tape:
        loss = c.sum()
    T.backward(loss, tape)
    assert np.array_equal(x.grad, np.zeros(2))


def test_backward_requires_scalar():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.record() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        T.backward(y, tape)


def test_backward_visits_shared_subexpression_once():
    x = T.Tensor(2.0, requires_grad=True)
    with T.record() as tape:
        y = x * x      # dy/dx = 4
        z = y + y      # dz/dx = 8
    T.backward(z, tape)
    assert np.allclose(x.grad, 8.0)


def test_grad_check_linear():
    x = T.Tensor(np.random.default_rng(8).normal(size=(3, 3)))
    assert grad_check(lambda t: t.sum(), x) < 1e-10


def test_grad_check_quadratic():
    x = T.Tensor(np.random.default_rng(9).normal(size=(4, 2)))
    assert grad_check(lambda t: (t * t).sum(), x) < 1e-6


def test_grad_check_softmax_dot():
    rng = np.random.default_rng(10)
    w = np.array(rng.normal(size=6))
    x = T.Tensor(rng.normal(size=6))
    assert grad_check(lambda t: (T.softmax(t) * T.Tensor(w)).sum(), x) < 1e-5


def test_mlp_grads_match_finite_differences():
    rng = np.random.default_rng(11)
    w1 = np.array(rng.normal(size=(5, 8)) * 0.5)
    w2 = np.array(rng.normal(size=(8, 4)) * 0.5)
    w3 = np.array(rng.normal(size=(4, 1)) * 0.5)

    def f(t):
        h = T.relu(t @ T.Tensor(w1))
        h = T.tanh(h @ T.Tensor(w2))
        return (h @ T.Tensor(w3)).sum()

    x = T.Tensor(rng.normal(size=(3, 5)))
    assert grad_check(f, x) < 1e-6


@pytest.mark.parametrize("op", [T.exp, T.tanh, T.sigmoid, T.gelu, T.relu, T.neg])
def test_unary_op_gradients(op):
    rng = np.random.default_rng(12)
    for trial in range(4):
        x = T.Tensor(rng.normal(size=(3, 4)) + 0.05)  # offset avoids relu kinks
        assert grad_check(lambda t: op(t).sum(), x) < 1e-6


def test_every_op_grad_check_over_random_shapes():
    rng = np.random.default_rng(13)
    cases = []
    for _ in range(20):
        m, k, n = rng.integers(1, 5, size=3)
        cases.append((int(m), int(k), int(n)))
    for m, k, n in cases:
        b = np.array(rng.normal(size=(k, n)))
        w = np.array(rng.normal(size=(m, k)))
        x = T.Tensor(rng.normal(size=(m, k)))
        checks = {
            "matmul": lambda t: (t @ T.Tensor(b)).sum(),
            "softmax": lambda t: (T.softmax(t, axis=-1) * T.Tensor(w)).sum(),
            "mul_div": lambda t: ((t * t + 1.5) / (t * t + 2.0)).sum(),
            "reduce": lambda t: (t.mean(axis=0) * 3.0).sum(),
        }
        for name, f in checks.items():
            assert grad_check(f, x) < 1e-4, (name, (m, k, n))


def test_forward_determinism():
    rng = np.random.default_rng(14)
    x = T.Tensor(rng.normal(size=(16, 16)))
    w = T.Tensor(rng.normal(size=(16, 16)))
    a = T.softmax(T.gelu(x @ w), axis=-1).data
    b = T.softmax(T.gelu(x @ w), axis=-1).data
    assert np.array_equal(a, b)


def test_no_silent_broadcast_on_mismatched_dims():
    a = T.Tensor(np.zeros((3, 4)))
    b = T.Tensor(np.zeros((3, 5)))
    with pytest.raises(ShapeError):
        a + b


def test_singleton_broadcast_is_allowed():
    a = T.Tensor(np.ones((3, 4)), requires_grad=True)
    b = T.Tensor(np.ones((1, 4)), requires_grad=True)
    with T.record() as tape:
        loss = (a + b).sum()
    T.backward(loss, tape)
    assert np.array_equal(b.grad, np.full((1, 4), 3.0))


def test_nonfinite_forward_raises():
    x = T.Tensor([1000.0])
    with pytest.raises(NonFiniteError):
        T.exp(x)


def test_narrow_and_concat_roundtrip_gradient():
    rng = np.random.default_rng(15)
    x = T.Tensor(rng.normal(size=(2, 6)), requires_grad=True)
    with T.record() as tape:
        left = x.narrow(1, 0, 2)
        right = x.narrow(1, 2, 4)
        loss = (T.concat([left * 2.0, right], axis=1)).sum()
    T.backward(loss, tape)
    expected = np.concatenate([np.full((2, 2), 2.0), np.ones((2, 4))], axis=1)
    assert np.array_equal(x.grad, expected)


def test_take_rows_scatter_adds():
    w = T.Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    ids = np.array([[0, 2], [2, 2]])
    with T.record() as tape:
        out = T.take_rows(w, ids)
        loss = out.sum()
    assert out.shape == (2, 2, 3)
    T.backward(loss, tape)
    expected = np.zeros((4, 3))
    expected[0] = 1.0
    expected[2] = 3.0
    assert np.array_equal(w.grad, expected)


def test_bce_with_logits_matches_naive():
    rng = np.random.default_rng(16)
    z = rng.normal(size=(8, 8)) * 3
    t = (rng.random((8, 8)) > 0.5).astype(float)
    naive = -(t * np.log(1 / (1 + np.exp(-z))) + (1 - t) * np.log(1 - 1 / (1 + np.exp(-z))))
    out = T.bce_with_logits(T.Tensor(z), t)
    assert abs(out.item() - naive.mean()) < 1e-10


def test_serialization_roundtrip():
    rng = np.random.default_rng(17)
    for shape in [(3,), (2, 4), (2, 3, 5), ()]:
        arr = np.array(rng.normal(size=shape))
        buf = io.BytesIO()
        T.write_tensor(buf, arr)
        buf.seek(0)
        back = T.read_tensor(buf)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_serialization_is_little_endian_layout():
    buf = io.BytesIO()
    T.write_tensor(buf, np.array([[1.0, 2.0]]))
    raw = buf.getvalue()
    assert raw[:8] == (2).to_bytes(8, "little")
    assert raw[8:16] == (1).to_bytes(8, "little")
    assert raw[16:24] == (2).to_bytes(8, "little")
    assert np.frombuffer(raw[24:], dtype="<f8").tolist() == [1.0, 2.0]


def test_no_grad_disables_tracking():
    x = T.Tensor([1.0], requires_grad=True)
    with T.record() as tape:
        with T.no_grad():
            y = x * 2.0
    assert not y.requires_grad
    assert len(tape) == 0
