"""Geometric narrowband channels for uniform planar arrays, plus CSI error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array in the y-z plane.

    ``spacing`` is the element spacing in wavelengths, so the phase
    increment between neighbours is ``2*pi*spacing``.
    """

    n_y: int
    n_z: int
    spacing: float = 0.5

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError(f"array dims must be positive, got {self.n_y}x{self.n_z}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def size(self) -> int:
        return self.n_y * self.n_z

    @classmethod
    def for_elements(cls, n: int, spacing: float = 0.5) -> "ArrayGeometry":
        """Most nearly square ``n_y x n_z`` layout with ``n_y <= n_z``."""
        if n < 1:
            raise ValueError(f"element count must be positive, got {n}")
        n_y = int(math.isqrt(n))
        while n % n_y:
            n_y -= 1
        return cls(n_y, n // n_y, spacing)


@dataclass(frozen=True)
class PathParams:
    gain: complex
    aoa_azimuth: float
    aoa_elevation: float
    aod_azimuth: float
    aod_elevation: float


@dataclass
class ChannelRealization:
    """Per-user channels ``H_i`` (N_r x N_t) and their row stack ``H``."""

    per_user: List[np.ndarray]
    stacked: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.per_user:
            raise ValueError("need at least one user channel")
        shape = self.per_user[0].shape
        for h in self.per_user:
            if h.ndim != 2 or h.shape != shape:
                raise ValueError("all user channels must share one 2-D shape")
        self.per_user = [np.asarray(h, dtype=complex) for h in self.per_user]
        self.stacked = np.vstack(self.per_user)

    @property
    def n_users(self) -> int:
        return len(self.per_user)

    @property
    def n_rx(self) -> int:
        return self.per_user[0].shape[0]

    @property
    def n_tx(self) -> int:
        return self.per_user[0].shape[1]


@dataclass(frozen=True)
class CsiErrorModel:
    sigma_e: float = 0.0

    def __post_init__(self):
        if self.sigma_e < 0:
            raise ValueError(f"sigma_e must be nonnegative, got {self.sigma_e}")


def steering_vector(geom: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Array response ``a(phi, theta)``, unit Euclidean norm.

    Element ``(p, q)`` sits at flat index ``p * n_z + q``.
    """
    p = np.arange(geom.n_y)[:, None]
    q = np.arange(geom.n_z)[None, :]
    kd = 2 * np.pi * geom.spacing
    phase = kd * (p * np.sin(azimuth) * np.sin(elevation) + q * np.cos(elevation))
    return np.exp(1j * phase).ravel() / np.sqrt(geom.size)


def random_paths(rng: np.random.Generator, n_paths: int) -> List[PathParams]:
    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2)
    angles = rng.uniform(0.0, 2 * np.pi, size=(n_paths, 4))
    return [PathParams(complex(g), *map(float, a)) for g, a in zip(gains, angles)]


def channel_from_paths(
    paths: Sequence[PathParams], tx_geom: ArrayGeometry, rx_geom: ArrayGeometry
) -> np.ndarray:
    n_t, n_r = tx_geom.size, rx_geom.size
    h = np.zeros((n_r, n_t), dtype=complex)
    for path in paths:
        a_r = steering_vector(rx_geom, path.aoa_azimuth, path.aoa_elevation)
        a_t = steering_vector(tx_geom, path.aod_azimuth, path.aod_elevation)
        h += path.gain * np.outer(a_r, a_t.conj())
    return np.sqrt(n_t * n_r / len(paths)) * h


def sample_channel(
    rng: np.random.Generator,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    n_paths: int,
) -> np.ndarray:
    """Draw one ``N_r x N_t`` multipath channel.

    Path gains are standard complex normal and all four angles are uniform
    on ``[0, 2*pi)``, which gives ``E||H||_F^2 = N_t * N_r``.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    return channel_from_paths(random_paths(rng, n_paths), tx_geom, rx_geom)


def sample_realization(
    rng: np.random.Generator,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    n_users: int,
    n_paths: int,
) -> ChannelRealization:
    return ChannelRealization(
        [sample_channel(rng, tx_geom, rx_geom, n_paths) for _ in range(n_users)]
    )


def perturb_csi(
    h: ChannelRealization, model: CsiErrorModel, rng: np.random.Generator
) -> ChannelRealization:
    """Estimated CSI ``H + E`` with ``E ~ CN(0, sigma_e^2)`` per entry."""
    if model.sigma_e == 0:
        return ChannelRealization([u.copy() for u in h.per_user])
    scale = model.sigma_e / np.sqrt(2)
    noisy = []
    for u in h.per_user:
        e = scale * (rng.standard_normal(u.shape) + 1j * rng.standard_normal(u.shape))
        noisy.append(u + e)
    return ChannelRealization(noisy)
