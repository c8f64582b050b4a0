"""Shared helpers and fixtures for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_point_camera(rng: np.random.Generator) -> np.ndarray:
    """Random full-rank 3x4 point projection matrix with sane conditioning."""
    fx, fy = rng.uniform(500, 3000, size=2)
    u0, v0 = rng.uniform(200, 1000, size=2)
    k = np.array([[fx, 0, u0], [0, fy, v0], [0, 0, 1.0]])
    r = random_rotation(rng)
    t = rng.uniform(-500, 500, size=3)
    t[2] = rng.uniform(800, 3000)
    return k @ np.hstack([r, t.reshape(3, 1)])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
