from __future__ import annotations

import numpy as np
import pytest

from brachyfuse.geometry import Contour, ContourStack


def regular_polygon(n: int, radius: float, center=(0.0, 0.0), phase: float = 0.0):
    ang = phase + 2.0 * np.pi * np.arange(n) / n
    return np.column_stack(
        [center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)]
    )


def square(side: float, offset=(0.0, 0.0)):
    ox, oy = offset
    return np.array(
        [[ox, oy], [ox + side, oy], [ox + side, oy + side], [ox, oy + side]]
    )


def cube_stack(side=10.0, offset=0.0, spacing=1.0, structure="prostate", frame="TRUS"):
    """Cube as a contour stack with cell-centered slice planes, so its
    planimetric volume is exactly side^2 * n * spacing."""
    sq = square(side, (offset, offset))
    n = int(round(side / spacing))
    contours = [
        Contour(k, offset + spacing / 2.0 + k * spacing, sq) for k in range(n)
    ]
    return ContourStack(structure, frame, spacing, contours)


def sphere_stack(radius=20.0, spacing=1.0, n_vertices=64, frame="TRUS"):
    """Sphere sampled as a stack of circles at cell-centered planes."""
    contours = []
    z = -radius + spacing / 2.0
    k = 0
    while z < radius:
        r_sq = radius**2 - z**2
        if r_sq > 0.25:  # skip near-degenerate caps
            contours.append(Contour(k, z, regular_polygon(n_vertices, np.sqrt(r_sq))))
        z += spacing
        k += 1
    return ContourStack("prostate", frame, spacing, contours)


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)
