"""Synthetic registration phantoms with known ground truth.

An ellipsoidal gland-scale surface is sampled two ways: sparse axial
rings standing in for segmented ultrasound contours (source) and a
dense quasi-uniform covering (target). The target is carried through a
known rigid move plus a smooth radial-basis deformation, optionally
with isotropic sampling noise; a central-axis polyline provides interior
landmarks that never participate in surface matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import SurfaceModel
from brachyfuse.registration.rigid import RigidTransform

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class PhantomCase:
    source: SurfaceModel
    target: SurfaceModel
    source_landmarks: np.ndarray = field(repr=False)
    target_landmarks: np.ndarray = field(repr=False)
    deform: Callable = field(repr=False)  # exact source->target ground truth
    rigid_true: RigidTransform = field(repr=False)
    amplitude_mm: float = 0.0
    noise_sd_mm: float = 0.0
    semi_axes: tuple = ()


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform unit directions via the golden-angle spiral."""
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    theta = GOLDEN_ANGLE * k
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def _ring_points(axes: np.ndarray, n_rings: int, per_ring: int, phase: float) -> np.ndarray:
    a, b, c = axes
    zs = np.linspace(-0.8 * c, 0.8 * c, n_rings)
    pts = []
    for z in zs:
        shrink = np.sqrt(max(1.0 - (z / c) ** 2, 0.0))
        ang = phase + np.linspace(0.0, 2.0 * np.pi, per_ring, endpoint=False)
        pts.append(
            np.column_stack(
                [a * shrink * np.cos(ang), b * shrink * np.sin(ang), np.full(per_ring, z)]
            )
        )
    return np.concatenate(pts)


def _gaussian_bump_field(rng: np.random.Generator, axes: np.ndarray, n_bumps: int = 4):
    """Smooth vector field: sum of Gaussian radial-basis bumps anchored
    near the surface."""
    dirs = _fibonacci_sphere(64)[rng.integers(0, 64, size=n_bumps)]
    centers = dirs * axes
    sigmas = rng.uniform(10.0, 16.0, size=n_bumps)
    vectors = rng.normal(size=(n_bumps, 3))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

    def phi(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        out = np.zeros_like(pts)
        for ctr, sig, vec in zip(centers, sigmas, vectors):
            w = np.exp(-np.sum((pts - ctr) ** 2, axis=1) / (2.0 * sig**2))
            out += w[:, None] * vec
        return out

    return phi


def generate_phantom(
    seed: int, amplitude_mm: float = 3.0, noise_sd_mm: float = 0.0
) -> PhantomCase:
    """Deterministic phantom: same seed, same outputs.

    The deformation field is rescaled so its largest magnitude over the
    target sampling equals ``amplitude_mm``; landmarks are mapped by the
    exact ground truth with no noise.
    """
    if amplitude_mm < 0:
        raise InputError("deformation amplitude must be >= 0")
    if noise_sd_mm < 0:
        raise InputError("noise sd must be >= 0")
    rng = np.random.default_rng(seed)

    axes = rng.uniform(15.0, 25.0, size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ring_pts = _ring_points(axes, n_rings=9, per_ring=24, phase=phase)
    dense_pts = _fibonacci_sphere(600) * axes
    cloud = np.concatenate([ring_pts, dense_pts])

    angle = np.deg2rad(rng.uniform(2.0, 8.0))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    translation = rng.uniform(-8.0, 8.0, size=3)
    rigid_true = RigidTransform.from_params(angle * axis, translation)

    raw_phi = _gaussian_bump_field(rng, axes)
    if amplitude_mm > 0:
        peak = float(np.linalg.norm(raw_phi(cloud), axis=1).max())
        scale = amplitude_mm / peak

        def phi(points):
            return scale * raw_phi(points)

    else:

        def phi(points):
            return np.zeros_like(np.atleast_2d(points))

    def deform(points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return rigid_true.apply(pts + phi(pts))

    target_pts = deform(cloud)
    if noise_sd_mm > 0:
        target_pts = target_pts + rng.normal(0.0, noise_sd_mm, size=target_pts.shape)

    n_landmarks = 7
    c = axes[2]
    landmarks = np.zeros((n_landmarks, 3))
    landmarks[:, 2] = np.linspace(-0.6 * c, 0.6 * c, n_landmarks)

    source = SurfaceModel("TRUS", ring_pts, tags=("axial",) * len(ring_pts))
    target = SurfaceModel("MRI", target_pts)
    return PhantomCase(
        source=source,
        target=target,
        source_landmarks=landmarks,
        target_landmarks=deform(landmarks),
        deform=deform,
        rigid_true=rigid_true,
        amplitude_mm=float(amplitude_mm),
        noise_sd_mm=float(noise_sd_mm),
        semi_axes=tuple(float(a) for a in axes),
    )
