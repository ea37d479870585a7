import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import betainc as sp_betainc

from slice_attrib import kernels as k


def _pairs(rng):
    n_t, n, p = 300, 4, 3
    drive = rng.standard_normal((n_t, n))
    return {
        "simulate_var": (rng.uniform(-0.3, 0.3, (n, p)), np.array([0, 1], dtype=np.int64),
                         np.array([1, 2], dtype=np.int64), np.array([1, 4], dtype=np.int64),
                         np.array([0.5, -0.3]), np.array([10, 100], dtype=np.int64), drive),
        "ar1_filter": (rng.standard_normal((500, 3)), 0.4),
        "cusum_gaussian": (np.r_[rng.standard_normal(200), rng.standard_normal(200) + 2.0],
                           0.0, 1.5, 1.0, 0.5, 4.6),
        "banded_apply": (0.7 ** np.arange(6), rng.standard_normal((120, 4))),
        "betainc": (rng.uniform(0.1, 40, 300), rng.uniform(0.1, 400, 300), rng.uniform(0, 1, 300)),
        "f_sf": (rng.uniform(0, 8, 300), rng.uniform(0.5, 12, 300), rng.uniform(3, 900, 300)),
    }


def _flat(out):
    if isinstance(out, tuple):
        return [np.asarray(o, dtype=float) for o in out]
    return [np.asarray(out, dtype=float)]


@pytest.mark.parametrize("name", ["simulate_var", "ar1_filter", "cusum_gaussian", "banded_apply",
                                  "betainc", "f_sf"])
def test_backends_agree(name):
    args = _pairs(np.random.default_rng(0))[name]
    a = _flat(getattr(k, f"{name}_jit")(*args))
    b = _flat(getattr(k, f"{name}_numpy")(*args))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-11, atol=1e-13)


def test_banded_apply_matches_dense():
    from scipy.linalg import toeplitz

    rng = np.random.default_rng(1)
    gamma = rng.uniform(-1, 1, 5)
    q = rng.standard_normal((40, 3))
    full = toeplitz(np.r_[gamma, np.zeros(35)])
    np.testing.assert_allclose(k.banded_apply(gamma, q), full @ q, rtol=1e-12, atol=1e-12)


@given(st.floats(0.05, 200), st.floats(0.05, 200), st.floats(0.0, 1.0))
def test_betainc_matches_scipy(a, b, x):
    assert float(k.betainc(a, b, x)) == pytest.approx(sp_betainc(a, b, x), rel=1e-9, abs=1e-14)


def test_scalar_calls_return_scalars():
    assert np.ndim(k.f_sf(2.0, 3.0, 40.0)) == 0
    assert np.ndim(k.betainc(2.0, 3.0, 0.4)) == 0


def test_backend_switch_by_environment():
    code = "from slice_attrib import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, SLICE_ATTRIB_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["SLICE_ATTRIB_BACKEND"] = "numba"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"
