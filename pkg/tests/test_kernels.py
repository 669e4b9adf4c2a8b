import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frkrem import _kernels as K
from frkrem.core import bisquare_eval, grid_centers

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def _close(a, b, rtol=1e-12, atol=1e-12):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _close(x, y, rtol, atol)
    else:
        np.testing.assert_allclose(a, b, rtol=rtol, atol=atol)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 300), st.sampled_from([30.0, 80.0, 200.0]))
def test_backends_agree(seed, n, tau):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 600, (n, 2))
    centers = grid_centers((0, 0, 600, 600), tau)
    r = centers.shape[0]
    w = rng.standard_normal(r)
    A = rng.standard_normal((r, r))
    C = A @ A.T / r
    labels = rng.integers(0, 7, n)
    _close(K.bisquare_matrix_numpy(pts, centers, tau), K.bisquare_matrix_numba(pts, centers, tau))
    _close(K.predict_points_numpy(pts, centers, tau, w, C),
           K.predict_points_numba(pts, centers, tau, w, C), atol=1e-10)
    _close(K.pairwise_distance_numpy(pts, centers), K.pairwise_distance_numba(pts, centers))
    _close(K.bin_sums_numpy(labels, pts[:, 0], 7), K.bin_sums_numba(labels, pts[:, 0], 7),
           rtol=1e-10)
    S = K.bisquare_matrix_numpy(pts, centers, tau)
    _close(K.bin_rows_mean_numpy(labels, S, 7), K.bin_rows_mean_numba(labels, S, 7))


def test_bisquare_matches_scalar_formula():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 100, (40, 2))
    centers = rng.uniform(0, 100, (6, 2))
    S = K.bisquare_matrix(pts, centers, 35.0)
    for i in range(40):
        for j in range(6):
            assert S[i, j] == pytest.approx(bisquare_eval(pts[i], centers[j], 35.0), abs=1e-15)


@pytest.mark.parametrize("flag,expect", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expect):
    env = dict(os.environ, FRKREM_NO_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c",
                          "from frkrem import _kernels as K; print(K.BACKEND, "
                          "K.predict_points.__name__)"],
                         capture_output=True, text=True, env=env, check=True)
    backend, name = out.stdout.split()
    assert backend == expect and name.endswith(expect)
