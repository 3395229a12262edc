"""Shared helpers: random scene synthesis and scipy-based rotation oracles.

The oracle helpers deliberately go through scipy.spatial.transform instead of
gatesim.geometry so rotation math is checked against an independent
implementation (note the wxyz -> xyzw order change at the boundary).
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gatesim.scene import GaussianScene


def scipy_rotation(q_wxyz):
    """gatesim quaternion (w, x, y, z) as a scipy Rotation."""
    q = np.asarray(q_wxyz, dtype=np.float64)
    return Rotation.from_quat(np.stack(
        [q[..., 1], q[..., 2], q[..., 3], q[..., 0]], axis=-1))


def random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_scene(rng, n, span=5.0):
    """A valid random scene of n gaussians spread over a +-span box."""
    rots = random_unit_quats(rng, n)
    return GaussianScene(
        means=rng.uniform(-span, span, size=(n, 3)),
        rotations=rots,
        scales=rng.uniform(0.01, 0.5, size=(n, 3)),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
        opacities=rng.uniform(0.05, 1.0, size=n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
