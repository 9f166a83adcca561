"""The jitted and pure-numpy kernels must agree (up to summation order)."""

import os
import subprocess
import sys

import numpy as np
import pytest

from intnav import _kernels_nb as kb
from intnav import _kernels_np as kn
from intnav import backend


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 0), (1, 1), (2, 1), (3, 2)])
def test_conv2d_backends_agree(stride, pad):
    rng = np.random.default_rng(10)
    x = rng.standard_normal((3, 2, 12, 17))
    w = rng.standard_normal((5, 2, 3, 3))
    b = rng.standard_normal(5)
    y_np = kn.conv2d_forward(x, w, b, stride, pad)
    y_nb = kb.conv2d_forward(x, w, b, stride, pad)
    assert y_np.shape == y_nb.shape
    np.testing.assert_allclose(y_np, y_nb, rtol=1e-12, atol=1e-12)
    gy = rng.standard_normal(y_np.shape)
    for a, c in zip(kn.conv2d_backward(x, w, gy, stride, pad), kb.conv2d_backward(x, w, gy, stride, pad)):
        np.testing.assert_allclose(a, c, rtol=1e-11, atol=1e-11)


def test_raycast_backends_agree():
    rng = np.random.default_rng(11)
    angles = np.linspace(-1.2, 1.2, 48)
    for _ in range(50):
        obstacles = rng.uniform(-4, 4, (6, 3))
        obstacles[:, 2] = rng.uniform(0.2, 0.8, 6)
        px, py = rng.uniform(-3, 3, 2)
        yaw = rng.uniform(-np.pi, np.pi)
        d_np = kn.raycast_depths(px, py, yaw, angles, obstacles, 5.0, 5.0, 7.0)
        d_nb = kb.raycast_depths(px, py, yaw, angles, obstacles, 5.0, 5.0, 7.0)
        np.testing.assert_allclose(d_np, d_nb, rtol=0, atol=1e-12)


def test_raycast_no_obstacles():
    angles = np.linspace(-1.0, 1.0, 16)
    empty = np.zeros((0, 3))
    d = kn.raycast_depths(0.0, 0.0, 0.0, angles, empty, 100.0, 100.0, 5.0)
    assert np.all(d == 5.0)
    d = kb.raycast_depths(0.0, 0.0, 0.0, angles, empty, 100.0, 100.0, 5.0)
    assert np.all(d == 5.0)


def test_raycast_inside_obstacle_is_zero():
    obstacles = np.array([[0.0, 0.0, 1.0]])
    angles = np.array([0.0, 0.7])
    for mod in (kn, kb):
        d = mod.raycast_depths(0.0, 0.0, 0.0, angles, obstacles, 10.0, 10.0, 5.0)
        assert np.all(d == 0.0)


def test_active_backend_reports_selection():
    assert backend.active_backend() in ("numba", "numpy")


def _backend_in_subprocess(env_value: str) -> str:
    env = dict(os.environ, INTNAV_BACKEND=env_value)
    out = subprocess.run(
        [sys.executable, "-c", "from intnav import backend; print(backend.active_backend())"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.returncode == 0, out.stderr
    return out.stdout.strip()


def test_env_flag_selects_numpy():
    assert _backend_in_subprocess("numpy") == "numpy"


def test_env_flag_selects_numba():
    assert _backend_in_subprocess("numba") == "numba"


def test_env_flag_rejects_garbage():
    env = dict(os.environ, INTNAV_BACKEND="cuda")
    out = subprocess.run(
        [sys.executable, "-c", "import intnav.backend"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.returncode != 0
    assert "INTNAV_BACKEND" in out.stderr
