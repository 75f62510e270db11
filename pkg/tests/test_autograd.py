from __future__ import annotations

import numpy as np
import pytest
from scipy import signal

from dehazeguard import autograd as ag
from dehazeguard._errors import ConfigError, ContractError, ShapeError

SHAPE = (2, 2, 3, 3)
OPS = ("add", "sub", "mul", "square", "relu", "clamp01", "scale", "div")


def _f64(x: np.ndarray, requires_grad: bool = False) -> ag.Tensor:
    return ag.Tensor(x, requires_grad=requires_grad, dtype=np.float64)


def _check_grad(f, x: np.ndarray, h: float = 1e-6) -> None:  # type: ignore
    t = _f64(x, requires_grad=True)
    ag.backward(f(t))
    assert t.grad is not None
    expected = ag.finite_diff_grad(f, _f64(x), h=h).data
    np.testing.assert_allclose(t.grad, expected, rtol=1e-3, atol=1e-6)


def _composition(seed: int):  # type: ignore
    gen = np.random.default_rng(seed)
    ops = list(gen.choice(OPS, size=int(gen.integers(1, 5))))
    other = gen.normal(size=SHAPE)
    weights = gen.normal(size=SHAPE)

    def f(x: ag.Tensor) -> ag.Tensor:
        c = _f64(other)
        y = x
        for op in ops:
            if op == "add":
                y = ag.add(y, c)
            elif op == "sub":
                y = ag.sub(c, y)
            elif op == "mul":
                y = ag.mul(y, c)
            elif op == "square":
                y = ag.square(y)
            elif op == "relu":
                y = ag.relu(y)
            elif op == "clamp01":
                y = ag.clamp01(y)
            elif op == "scale":
                y = ag.scale(y, 0.7)
            else:
                y = ag.div(y, ag.add_scalar(ag.square(c), 1.0))
        return ag.sum(ag.mul(y, _f64(weights)))

    return f, gen.normal(size=SHAPE)


@pytest.mark.parametrize("seed", range(100))
def test_random_compositions_match_finite_differences(seed: int) -> None:
    f, x = _composition(seed)
    _check_grad(f, x)


@pytest.mark.parametrize("seed", range(10))
def test_backward_is_linear(seed: int) -> None:
    f, x = _composition(seed)
    g, _ = _composition(seed + 100)
    a, b = np.random.default_rng(seed).normal(size=2)

    def grad(loss) -> np.ndarray:  # type: ignore
        t = _f64(x, requires_grad=True)
        ag.backward(loss(t))
        assert t.grad is not None
        return t.grad

    combined = grad(lambda t: ag.add(ag.scale(f(t), a), ag.scale(g(t), b)))
    np.testing.assert_allclose(combined, a * grad(f) + b * grad(g), atol=1e-6)


def test_gradients_are_bitwise_reproducible() -> None:
    gen = np.random.default_rng(8)
    x = gen.random((2, 3, 9, 9)).astype(np.float32)
    w1 = gen.normal(size=(4, 3, 3, 3)).astype(np.float32)
    w2 = gen.normal(size=(3, 4, 3, 3)).astype(np.float32)
    b = np.zeros(4, dtype=np.float32)

    def run() -> tuple[np.ndarray, np.ndarray]:
        t = ag.Tensor(x, requires_grad=True)
        weight = ag.Tensor(w1, requires_grad=True)
        hidden = ag.relu(ag.conv2d(t, weight, ag.Tensor(b), 1, 1))
        out = ag.conv2d(hidden, ag.Tensor(w2), ag.Tensor(b[:3]), 1, 1)
        ag.backward(ag.mean(ag.square(out)))
        assert t.grad is not None and weight.grad is not None
        return t.grad, weight.grad

    first, again = run(), run()
    for got, expected in zip(first, again):
        assert got.tobytes() == expected.tobytes()


def _brute_conv(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int
) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    rows = slice(i * stride, i * stride + kh)
                    cols = slice(j * stride, j * stride + kw)
                    patch = xp[ni, :, rows, cols]
                    out[ni, oi, i, j] = np.sum(patch * w[oi]) + b[oi]
    return out


@pytest.mark.parametrize("seed", range(50))
def test_conv2d_matches_brute_force(seed: int) -> None:
    gen = np.random.default_rng(seed)
    n, c, o = (int(v) for v in gen.integers(1, 4, size=3))
    h, w = (int(v) for v in gen.integers(3, 8, size=2))
    kh, kw = (int(v) for v in gen.integers(1, 4, size=2))
    stride = int(gen.integers(1, 3))
    padding = int(gen.integers(0, 2))
    x = gen.normal(size=(n, c, h, w)).astype(np.float32)
    wt = gen.normal(size=(o, c, kh, kw)).astype(np.float32)
    b = gen.normal(size=o).astype(np.float32)

    out = ag.conv2d(ag.Tensor(x), ag.Tensor(wt), ag.Tensor(b), stride, padding)
    x64, w64, b64 = (a.astype(np.float64) for a in (x, wt, b))
    expected = _brute_conv(x64, w64, b64, stride, padding)
    assert out.shape == expected.shape
    assert out.shape[2] == ag.conv_output_size(h, kh, stride, padding)
    np.testing.assert_allclose(out.data, expected, atol=1e-5)


@pytest.mark.parametrize("stride, padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_gradients(stride: int, padding: int) -> None:
    gen = np.random.default_rng(stride * 10 + padding)
    x = gen.normal(size=(2, 2, 5, 5))
    w = gen.normal(size=(3, 2, 3, 3))
    b = gen.normal(size=3)
    proj = gen.normal(size=(2, 3, *(ag.conv_output_size(5, 3, stride, padding),) * 2))

    def loss_x(t: ag.Tensor) -> ag.Tensor:
        out = ag.conv2d(t, _f64(w), _f64(b), stride, padding)
        return ag.sum(ag.mul(out, _f64(proj)))

    def loss_w(t: ag.Tensor) -> ag.Tensor:
        out = ag.conv2d(_f64(x), t, _f64(b), stride, padding)
        return ag.sum(ag.mul(out, _f64(proj)))

    def loss_b(t: ag.Tensor) -> ag.Tensor:
        out = ag.conv2d(_f64(x), _f64(w), t, stride, padding)
        return ag.sum(ag.mul(out, _f64(proj)))

    _check_grad(loss_x, x)
    _check_grad(loss_w, w)
    _check_grad(loss_b, b)


def test_conv2d_errors() -> None:
    x = ag.Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ConfigError):
        ag.conv2d(x, ag.Tensor(np.zeros((1, 2, 3, 3))), stride=0)
    with pytest.raises(ShapeError, match="channels"):
        ag.conv2d(x, ag.Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="larger"):
        ag.conv2d(x, ag.Tensor(np.zeros((1, 2, 5, 5))))
    with pytest.raises(ShapeError):
        ag.conv2d(ag.Tensor(np.zeros((2, 4, 4))), ag.Tensor(np.zeros((1, 2, 3, 3))))


def test_gaussian_blur_matches_scipy() -> None:
    gen = np.random.default_rng(0)
    x = gen.random((2, 3, 12, 12))
    kernel = gen.random((5, 5))
    out = ag.gaussian_blur(_f64(x), kernel)
    assert out.shape == (2, 3, 8, 8)
    for n in range(2):
        for c in range(3):
            expected = signal.correlate2d(x[n, c], kernel, mode="valid")
            np.testing.assert_allclose(out.data[n, c], expected, rtol=1e-10)

    proj = gen.normal(size=out.shape)
    _check_grad(lambda t: ag.sum(ag.mul(ag.gaussian_blur(t, kernel), _f64(proj))), x)


def test_concat_and_reshape_gradients() -> None:
    gen = np.random.default_rng(1)
    a = gen.normal(size=(1, 2, 3, 3))
    other = _f64(gen.normal(size=(1, 1, 3, 3)))
    proj = _f64(gen.normal(size=(3, 9)))

    def f(t: ag.Tensor) -> ag.Tensor:
        joined = ag.concat_channels(t, other)
        return ag.sum(ag.mul(ag.reshape(joined, (3, 9)), proj))

    _check_grad(f, a)


def test_mean_and_operators() -> None:
    x = ag.Tensor([[1.0, 2.0], [3.0, 6.0]], requires_grad=True)
    loss = ag.mean((x * 2.0 - 1.0) / 2.0 + 0.5)
    assert loss.item() == pytest.approx(3.0)
    loss.backward()
    assert x.grad is not None
    np.testing.assert_allclose(x.grad, np.full((2, 2), 0.25))


def test_relu_and_clamp_gradients_at_boundaries() -> None:
    x = ag.Tensor([-1.0, 0.0, 0.5, 1.0, 2.0], requires_grad=True)
    ag.sum(ag.clamp01(x)).backward()
    assert x.grad is not None
    np.testing.assert_array_equal(x.grad, [0, 0, 1, 0, 0])

    y = ag.Tensor([-1.0, 0.0, 0.5], requires_grad=True)
    ag.sum(ag.relu(y)).backward()
    assert y.grad is not None
    np.testing.assert_array_equal(y.grad, [0, 0, 1])


def test_gradients_accumulate_on_leaves() -> None:
    x = ag.Tensor([1.0, 2.0], requires_grad=True)
    ag.sum(ag.square(x)).backward()
    ag.sum(ag.square(x)).backward()
    assert x.grad is not None
    np.testing.assert_allclose(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression() -> None:
    x = ag.Tensor([3.0], requires_grad=True)
    y = ag.mul(x, x)
    ag.sum(ag.add(y, y)).backward()
    assert x.grad is not None
    np.testing.assert_allclose(x.grad, [12.0])


def test_backward_contract() -> None:
    x = ag.Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        ag.backward(ag.square(x))
    with pytest.raises(ContractError, match="requires grad"):
        ag.backward(ag.sum(ag.Tensor(np.ones(3))))
    with pytest.raises(ContractError):
        ag.Tensor(np.ones(3)).item()


def test_backward_counter() -> None:
    x = ag.Tensor([1.0], requires_grad=True)
    before = ag.backward_calls()
    ag.sum(x).backward()
    ag.sum(x).backward()
    assert ag.backward_calls() == before + 2


def test_tape_is_topologically_ordered() -> None:
    a = ag.Tensor([1.0], requires_grad=True)
    b = ag.Tensor([2.0], requires_grad=True)
    c = ag.mul(a, b)
    d = ag.add(c, a)
    loss = ag.sum(ag.mul(d, c))
    tape = ag.Tape.from_loss(loss)
    position = {id(t): i for i, t in enumerate(tape.nodes)}
    for t in tape.nodes:
        if t._node is not None:
            for parent in t._node.parents:
                assert position[id(parent)] < position[id(t)]
    assert tape.nodes[-1] is loss


def test_deep_graph_does_not_recurse() -> None:
    x = ag.Tensor([0.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = ag.add_scalar(y, 1.0)
    ag.sum(y).backward()
    assert x.grad is not None
    np.testing.assert_allclose(x.grad, [1.0])


def test_no_graph_without_requires_grad() -> None:
    y = ag.add(ag.Tensor([1.0]), ag.Tensor([2.0]))
    assert y.is_leaf
    assert not y.requires_grad


def test_elementwise_dispatch() -> None:
    a = ag.Tensor([1.0, 2.0])
    b = ag.Tensor([3.0, 4.0])
    np.testing.assert_allclose(ag.elementwise("mul", a, b).data, [3.0, 8.0])
    np.testing.assert_allclose(ag.elementwise("scale", a, factor=3).data, [3.0, 6.0])
    with pytest.raises(ConfigError):
        ag.elementwise("pow", a, b)  # type: ignore[arg-type]
    with pytest.raises(ShapeError):
        ag.elementwise("add", a)
    with pytest.raises(ShapeError):
        ag.add(a, ag.Tensor([1.0, 2.0, 3.0]))


def test_float32_default_and_float64_opt_in() -> None:
    assert ag.Tensor([1, 2]).dtype == np.float32
    t = ag.Tensor([1, 2], dtype=np.float64)
    assert ag.mean(t).dtype == np.float64
    assert ag.as_tensor(t) is t


def test_finite_diff_rejects_bad_step() -> None:
    with pytest.raises(ConfigError):
        ag.finite_diff_grad(lambda t: ag.sum(t), ag.Tensor([1.0]), h=0)
