import numpy as np
import pytest

from lsphase import _kernels_np
from lsphase.kernels import BACKEND, conv2d_backward, conv2d_forward

try:
    from lsphase import _kernels_cy
except ImportError:
    _kernels_cy = None

needs_ext = pytest.mark.skipif(_kernels_cy is None,
                               reason="compiled kernels not built")


def direct_conv(x, w, b):
    """Straight-line reference: quadruple loop over output positions."""
    bs, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((bs, o, h, wd))
    for n in range(bs):
        for co in range(o):
            for i in range(h):
                for j in range(wd):
                    out[n, co, i, j] = b[co] + np.sum(w[co] * xp[n, :, i:i + k, j:j + k])
    return out


def random_case(seed, shape=(2, 3, 6, 6), cout=4, k=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((cout, shape[1], k, k))
    b = rng.standard_normal(cout)
    return x, w, b


class TestDispatch:
    def test_backend_reported(self):
        assert BACKEND in ("cython", "numpy")

    @pytest.mark.parametrize("seed", [0, 1])
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_forward_matches_direct_loops(self, seed, k):
        x, w, b = random_case(seed, k=k)
        out = conv2d_forward(x, w, b)
        assert np.allclose(out, direct_conv(x, w, b), atol=1e-12)

    def test_numpy_fallback_matches_direct_loops(self):
        x, w, b = random_case(7)
        assert np.allclose(_kernels_np.conv2d_forward(x, w, b),
                           direct_conv(x, w, b), atol=1e-12)

    @needs_ext
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_backends_agree(self, seed):
        x, w, b = random_case(seed, shape=(3, 5, 8, 8), cout=6)
        fwd_cy = _kernels_cy.conv2d_forward(x, w, b)
        fwd_np = _kernels_np.conv2d_forward(x, w, b)
        assert np.allclose(fwd_cy, fwd_np, atol=1e-12)
        gy = np.random.default_rng(seed + 10).standard_normal(fwd_cy.shape)
        dw_cy, db_cy = _kernels_cy.conv2d_grad_weights(x, gy, 3)
        dw_np, db_np = _kernels_np.conv2d_grad_weights(x, gy, 3)
        assert np.allclose(dw_cy, dw_np, atol=1e-11)
        assert np.allclose(db_cy, db_np, atol=1e-11)


class TestBackwardMath:
    def test_gradients_match_finite_differences(self):
        x, w, b = random_case(3, shape=(2, 2, 5, 5), cout=3)
        gy = np.random.default_rng(4).standard_normal((2, 3, 5, 5))
        dx, dw, db = conv2d_backward(x, w, gy)

        def objective(xx, ww, bb):
            return float((conv2d_forward(xx, ww, bb) * gy).sum())

        h = 1e-6
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            flat = arr.ravel()
            idx = 7 % flat.size
            base = objective(x, w, b)
            flat[idx] += h
            bumped = objective(x, w, b)
            flat[idx] -= h
            fd = (bumped - base) / h
            assert fd == pytest.approx(grad.ravel()[idx], rel=1e-4, abs=1e-8)

    def test_bias_gradient_is_sum(self):
        x, w, b = random_case(5)
        gy = np.random.default_rng(6).standard_normal((2, 4, 6, 6))
        _, _, db = conv2d_backward(x, w, gy)
        assert np.allclose(db, gy.sum(axis=(0, 2, 3)))
