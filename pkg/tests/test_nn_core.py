import numpy as np
import pytest

from cycledcd.nn import Parameter, Tensor, functional as fn, grad_check, kernels
from cycledcd.nn.layers import Conv2d, Module
from cycledcd.nn.param_store import StoreFormatError, load_store, save_store


def conv_loop(x, w, b, stride, pad, dil):
    """Direct loop nest of out[n,o,t,f] = b[o] + sum x[n,i,t*sT-pT+dT*a, f*sF-pF+dF*c] w[o,i,a,c]."""
    nb, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad[0] - dil[0] * (kh - 1) - 1) // stride[0] + 1
    wo = (wd + 2 * pad[1] - dil[1] * (kw - 1) - 1) // stride[1] + 1
    out = np.zeros((nb, cout, ho, wo))
    for n in range(nb):
        for o in range(cout):
            for t in range(ho):
                for f in range(wo):
                    acc = b[o]
                    for i in range(cin):
                        for a in range(kh):
                            ti = t * stride[0] - pad[0] + dil[0] * a
                            if not 0 <= ti < h:
                                continue
                            for c in range(kw):
                                fi = f * stride[1] - pad[1] + dil[1] * c
                                if 0 <= fi < wd:
                                    acc += x[n, i, ti, fi] * w[o, i, a, c]
                    out[n, o, t, f] = acc
    return out


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def test_conv_identity_1x1():
    x = np.random.default_rng(0).standard_normal((2, 1, 4, 5))
    out = fn.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_sum_of_entries(backend):
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = fn.conv2d(Tensor(x), Tensor(np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(out.data, [[[[10.0]]]])


@pytest.mark.parametrize("stride,pad,dil", [((1, 2), (1, 2), (1, 1)), ((1, 1), (2, 2), (2, 1)),
                                            ((2, 2), (0, 1), (1, 1)), ((1, 2), (4, 2), (4, 1))])
def test_conv_matches_loop_nest(backend, stride, pad, dil):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 7, 11))
    w = rng.standard_normal((4, 3, 3, 5))
    b = rng.standard_normal(4)
    got = fn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, dil).data
    np.testing.assert_allclose(got, conv_loop(x, w, b, stride, pad, dil), atol=1e-12)


@pytest.mark.parametrize("f", [11, 12, 161, 6, 1])
def test_conv_freq_halving_is_ceil(f):
    x = Tensor(np.random.default_rng(2).standard_normal((1, 1, 3, f)))
    out = fn.conv2d(x, Tensor(np.ones((1, 1, 3, 5))), None, (1, 2), (1, 2))
    assert out.shape == (1, 1, 3, -(-f // 2))


def test_backends_agree():
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 9, 21))
    res = {}
    for name in kernels.available_backends():
        kernels.use_backend(name)
        cols = kernels.im2col(x, (3, 5), (1, 2), (2, 2), (2, 1), (9, 11))
        res[name] = (cols, kernels.col2im(cols, x.shape, (3, 5), (1, 2), (2, 2), (2, 1), (9, 11)))
    kernels.use_backend("cython")
    np.testing.assert_array_equal(res["cython"][0], res["python"][0])
    np.testing.assert_allclose(res["cython"][1], res["python"][1], rtol=0, atol=1e-13)


def test_deconv_identity_1x1():
    y = np.random.default_rng(4).standard_normal((1, 1, 4, 6))
    out = fn.deconv2d(Tensor(y), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, y)


@pytest.mark.parametrize("geom", [((1, 1), (1, 1), (1, 1)), ((1, 2), (1, 2), (1, 1)), ((1, 1), (2, 2), (2, 1))])
def test_deconv_is_adjoint_of_conv(backend, geom):
    stride, pad, dil = geom
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 6))
    w = rng.standard_normal((2, 3, 3, 5))
    cx = fn.conv2d(Tensor(x), Tensor(w), None, stride, pad, dil)
    y = rng.standard_normal(cx.shape)
    dy = fn.deconv2d(Tensor(y), Tensor(w), None, stride, pad, dil, output_size=x.shape[2:])
    assert dy.shape == x.shape
    assert abs(np.vdot(cx.data, y) - np.vdot(x, dy.data)) < 1e-9


def test_deconv_stride_doubles_freq():
    y = Tensor(np.ones((1, 2, 3, 81)))
    w = Tensor(np.ones((2, 1, 3, 5)))
    assert fn.deconv2d(y, w, None, (1, 2), (1, 2)).shape == (1, 1, 3, 161)
    assert fn.deconv2d(y, w, None, (1, 2), (1, 2), output_size=(3, 162)).shape == (1, 1, 3, 162)
    with pytest.raises(ValueError):
        fn.deconv2d(y, w, None, (1, 2), (1, 2), output_size=(3, 163))


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        fn.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 1, 1))))


def test_instance_norm_cases():
    one, zero = Tensor(np.ones(1)), Tensor(np.zeros(1))
    const = fn.instance_norm(Tensor(np.full((1, 1, 3, 4), 7.0)), one, zero, 1e-5)
    np.testing.assert_array_equal(const.data, 0.0)
    pm = np.array([[[[-1.0, 1.0]]]])
    np.testing.assert_allclose(fn.instance_norm(Tensor(pm), one, zero, 0.0).data, pm)
    x = np.random.default_rng(6).standard_normal((2, 3, 16, 20)) * 4 + 3
    out = fn.instance_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), 1e-5).data
    assert np.abs(out.mean(axis=(2, 3))).max() < 1e-6
    assert np.abs(out.std(axis=(2, 3)) - 1).max() < 1e-3


def test_prelu_and_glu():
    assert fn.prelu(Tensor(np.full((1, 1, 1, 1), -2.0)), Tensor([0.25])).item() == -0.5
    v = np.random.default_rng(7).standard_normal((1, 32, 2, 3))
    x = np.concatenate([v, np.zeros_like(v)], axis=1)
    out = fn.glu(Tensor(x))
    assert out.shape[1] == 32
    np.testing.assert_array_equal(out.data, v * 0.5)
    with pytest.raises(ValueError):
        fn.glu(Tensor(np.zeros((1, 3, 1, 1))))


def test_spectral_norm_examples():
    w = Tensor(np.diag([3.0, 1.0]))
    u0 = np.array([0.6, 0.8])
    out, _ = fn.spectral_norm(w, u0, 5)
    np.testing.assert_allclose(out.data, np.diag([3.0, 1.0]) / np.linalg.svd(w.data)[1][0], rtol=1e-4)
    unit = Tensor(np.diag([1.0, 0.5]))
    out1, _ = fn.spectral_norm(unit, u0, 20)
    np.testing.assert_allclose(out1.data, unit.data, rtol=1e-8)
    k = np.random.default_rng(8).standard_normal((4, 3, 3, 5))
    u = np.random.default_rng(9).standard_normal(4)
    a, _ = fn.spectral_norm(Tensor(k), u, 1)
    b, _ = fn.spectral_norm(Tensor(10 * k), u, 1)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12)


def test_spectral_norm_converges_to_unit_sigma():
    k = np.random.default_rng(10).standard_normal((8, 12))
    out, _ = fn.spectral_norm(Tensor(k), np.ones(8), 50)
    assert abs(np.linalg.svd(out.data)[1][0] - 1.0) < 1e-8


# -- gradient checks ---------------------------------------------------------------

def _rand_param(rng, shape, name):
    return Parameter(rng.standard_normal(shape), name=name)


def test_gradcheck_constant_and_quadratic():
    x = Parameter(np.random.default_rng(11).standard_normal(5), name="x")
    rep = grad_check(lambda: Tensor(3.0) + x.sum() * 0.0, [x])
    assert rep.passed and rep.max_rel_error == 0.0
    np.testing.assert_array_equal(x.grad, 0.0)
    x.grad = None
    ((x * x).sum() * 0.5).backward()
    np.testing.assert_array_equal(x.grad, x.data)


def test_gradcheck_conv_sum():
    rng = np.random.default_rng(12)
    x = _rand_param(rng, (2, 3, 5, 9), "x")
    w = _rand_param(rng, (4, 3, 3, 5), "w")
    rep = grad_check(lambda: fn.conv2d(x, w, None, (1, 2), (1, 2)).sum(), [x, w], eps=1e-4)
    assert rep.max_rel_error < 1e-5


def _weighted(out, rng_seed=99):
    r = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return (out * Tensor(r)).sum()


@pytest.mark.parametrize("name", ["conv2d", "deconv2d", "instance_norm", "prelu", "glu", "softmax",
                                  "tanh", "sigmoid", "softplus", "sqrt", "spectral_norm", "matmul", "concat"])
def test_gradcheck_ops(name):
    rng = np.random.default_rng(13)
    x = _rand_param(rng, (2, 4, 5, 7), "x")
    if name == "conv2d":
        w, b = _rand_param(rng, (3, 4, 3, 5), "w"), _rand_param(rng, (3,), "b")
        f, ps = lambda: _weighted(fn.conv2d(x, w, b, (1, 2), (2, 2), (2, 1))), [x, w, b]
    elif name == "deconv2d":
        w, b = _rand_param(rng, (4, 2, 3, 5), "w"), _rand_param(rng, (2,), "b")
        f, ps = lambda: _weighted(fn.deconv2d(x, w, b, (1, 2), (1, 2), output_size=(5, 14))), [x, w, b]
    elif name == "instance_norm":
        g, b = _rand_param(rng, (4,), "g"), _rand_param(rng, (4,), "b")
        f, ps = lambda: _weighted(fn.instance_norm(x, g, b, 1e-5)), [x, g, b]
    elif name == "prelu":
        a = _rand_param(rng, (4,), "a")
        f, ps = lambda: _weighted(fn.prelu(x, a)), [x, a]
    elif name == "glu":
        f, ps = lambda: _weighted(fn.glu(x)), [x]
    elif name == "softmax":
        f, ps = lambda: _weighted(fn.softmax(x, -1)), [x]
    elif name == "sqrt":
        f, ps = lambda: _weighted(fn.sqrt(x * x + 0.5)), [x]
    elif name == "spectral_norm":
        u = rng.standard_normal(2)
        w = _rand_param(rng, (2, 4, 1, 1), "w")
        f, ps = lambda: _weighted(fn.conv2d(x, fn.spectral_norm(w, u, 0)[0])), [x, w]
    elif name == "matmul":
        y = _rand_param(rng, (2, 4, 7, 3), "y")
        f, ps = lambda: _weighted(x @ y), [x, y]
    elif name == "concat":
        y = _rand_param(rng, (2, 1, 5, 7), "y")
        f, ps = lambda: _weighted(fn.concat([x, y], axis=1)), [x, y]
    else:
        op = getattr(fn, name)
        f, ps = lambda: _weighted(op(x)), [x]
    rep = grad_check(f, ps, eps=1e-4, tol=1e-3)
    assert rep.passed, rep.per_param


def test_fanout_accumulates():
    x = Parameter(np.array([2.0, -1.0]))
    y = x * x + x * 3.0 + x
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data + 4.0)


def test_nonfinite_forward_is_error():
    from cycledcd.nn import NonFiniteError
    with pytest.raises(NonFiniteError):
        fn.log(Tensor(np.array([0.0])) * 1.0)


def test_determinism_bit_identical():
    rng = np.random.default_rng(14)
    x, w = rng.standard_normal((2, 3, 8, 9)), rng.standard_normal((4, 3, 3, 5))
    a = fn.conv2d(Tensor(x), Tensor(w), None, (1, 2), (1, 2)).data
    b = fn.conv2d(Tensor(x), Tensor(w), None, (1, 2), (1, 2)).data
    assert a.tobytes() == b.tobytes()


class _Tiny(Module):
    def __init__(self):
        self.conv = Conv2d(2, 3, rng=np.random.default_rng(0), spectral_norm=True)
        self.blocks = [Conv2d(3, 3, rng=np.random.default_rng(1))]


def test_module_names_and_state_round_trip(tmp_path):
    m = _Tiny()
    names = [n for n, _ in m.named_parameters()]
    assert names == ["conv.weight", "conv.bias", "blocks.0.weight", "blocks.0.bias"]
    state = m.state_dict()
    assert "buffer:conv.sn_u" in state
    save_store(tmp_path / "s", state, {"kind": "test"})
    loaded, header = load_store(tmp_path / "s")
    assert header == {"kind": "test"}
    for k in state:
        assert loaded[k].tobytes() == state[k].tobytes()
    m2 = _Tiny()
    m2.conv.weight.data[:] = 0
    m2.load_state_dict(loaded)
    assert m2.conv.weight.data.tobytes() == m.conv.weight.data.tobytes()


def test_store_rejects_bad_version(tmp_path):
    save_store(tmp_path / "s", {"a": np.zeros(2)})
    idx = tmp_path / "s" / "index.txt"
    idx.write_text(idx.read_text().replace("cycledcd-param-store 1", "cycledcd-param-store 9"))
    with pytest.raises(StoreFormatError):
        load_store(tmp_path / "s")


def test_store_keeps_scalar_and_empty_shapes(tmp_path):
    arrays = {"s": np.array(0.25), "e": np.zeros((0, 3)), "i": np.arange(4, dtype=np.int64)}
    save_store(tmp_path / "s", arrays)
    loaded, _ = load_store(tmp_path / "s")
    for k, v in arrays.items():
        assert loaded[k].shape == v.shape and loaded[k].dtype == v.dtype
        assert np.array_equal(loaded[k], v)
