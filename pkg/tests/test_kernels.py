import os
import subprocess
import sys

import numpy as np
import pytest

from lbtest import _kernels
from lbtest._kernels import NUMBA_IMPL, NUMPY_IMPL

pytestmark = pytest.mark.skipif(not NUMBA_IMPL, reason="numba not importable")

LLR = (np.log(3.0), np.log(0.85 / 0.95), np.log(19.0), np.log(1 / 19))


def _step_state(m):
    return (np.zeros(m, np.int64), np.zeros(m, np.int64), np.zeros(m, np.int64), np.zeros(m, np.int64))


def test_sprt_step_parity(rng):
    m = 500
    a, b = _step_state(m), _step_state(m)
    for it in range(1, 60):
        d = rng.random(m) < 0.3
        NUMPY_IMPL["sprt_step"](*a, d, *LLR, it)
        NUMBA_IMPL["sprt_step"](*b, d, *LLR, it)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_sprt_simulate_parity(rng):
    u = rng.random((2000, 300))
    for p in (0.05, 0.1, 0.15):
        s1, n1 = NUMPY_IMPL["sprt_simulate"](u, p, *LLR)
        s2, n2 = NUMBA_IMPL["sprt_simulate"](u, p, *LLR)
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(n1, n2)


def test_distinct_prefix_parity(rng):
    codes = rng.integers(-1, 25, 5000)
    a = NUMPY_IMPL["distinct_prefix"](codes, 25)
    np.testing.assert_array_equal(a, NUMBA_IMPL["distinct_prefix"](codes, 25))
    assert np.all(np.diff(a) >= 0) and a[-1] == len(set(codes[codes >= 0]))


def test_nearest_parity(rng):
    q, r = rng.random((300, 7)), rng.random((800, 7))
    d1, j1 = NUMPY_IMPL["nearest"](q, r)
    d2, j2 = NUMBA_IMPL["nearest"](q, r)
    np.testing.assert_array_equal(j1, j2)
    np.testing.assert_allclose(d1, d2, rtol=1e-10, atol=1e-14)
    brute = ((q[:, None, :] - r[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(j1, brute.argmin(axis=1))


def test_gauss_lse_parity(rng):
    q, r = rng.random((200, 5)), rng.random((600, 5))
    a = NUMPY_IMPL["gauss_lse"](q, r, 0.2)
    np.testing.assert_allclose(a, NUMBA_IMPL["gauss_lse"](q, r, 0.2), rtol=1e-10)
    direct = np.log(np.exp(-((q[:, None, :] - r[None]) ** 2).sum(-1) / (2 * 0.04)).sum(axis=1))
    np.testing.assert_allclose(a, direct, rtol=1e-10)


def test_gauss_lse_no_underflow():
    # far-away queries would underflow a direct density to zero
    q, r = np.full((2, 3), 50.0), np.zeros((4, 3))
    for impl in (NUMPY_IMPL, NUMBA_IMPL):
        out = impl["gauss_lse"](q, r, 0.1)
        assert np.all(np.isfinite(out))


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    if flag is None:
        env.pop("LBTEST_NUMBA", None)
    else:
        env["LBTEST_NUMBA"] = flag
    out = subprocess.run([sys.executable, "-c", "from lbtest import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_flag_selects_backend():
    assert _backend_in_subprocess("0") == "numpy"
    assert _backend_in_subprocess("1") == "numba"
    assert _backend_in_subprocess(None) == "numba"


def test_env_flag_read_at_call_time(monkeypatch):
    monkeypatch.setenv("LBTEST_NUMBA", "0")
    assert _kernels.backend() == "numpy"
    monkeypatch.setenv("LBTEST_NUMBA", "1")
    assert _kernels.backend() == "numba"
