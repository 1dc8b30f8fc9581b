"""Macroscopic strain paths: GP-sampled non-proportional paths and proportional paths."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "GpConfig",
    "ProportionalConfig",
    "StrainPath",
    "gp_covariance",
    "gp_covariance_matrix",
    "gp_sample",
    "gp_samples",
    "fundamental_directions",
    "random_direction",
    "magnitude_series",
    "default_unload_windows",
    "proportional_path",
]

PROVENANCES = ("gp", "proportional_fundamental", "proportional_random")


@dataclass(frozen=True)
class GpConfig:
    variance: float = 1.667e-4
    length_scale: float = 200.0
    n_steps: int = 100
    mean: tuple = (0.0, 0.0, 0.0)
    rng_seed: int = 0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("GP variance must be > 0")
        if not self.length_scale > 0:
            raise ValueError("GP length scale must be > 0")
        if self.n_steps < 2:
            raise ValueError("GP paths need at least 2 steps")
        if len(self.mean) != 3:
            raise ValueError("GP mean must have 3 components")


@dataclass(frozen=True)
class ProportionalConfig:
    direction: tuple = (1.0, 0.0, 0.0)
    step: float = 1.67e-3
    magnitude_fn: str = "monotonic"
    n_steps: int = 30
    unload_windows: tuple = ()

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise ValueError("loading direction must be a unit vector")
        if not self.step > 0:
            raise ValueError("magnitude increment must be > 0")
        if self.magnitude_fn not in ("monotonic", "one_cycle", "two_cycles"):
            raise ValueError(f"unknown magnitude function {self.magnitude_fn!r}")


@dataclass
class StrainPath:
    """Ordered macroscopic strains ``(n_steps, 3)`` with their origin."""

    steps: np.ndarray
    provenance: str = "gp"
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.steps)):
            raise ValueError("strain path contains non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return self.steps.shape[0]


# --------------------------------------------------------------------------
# Gaussian-process paths
# --------------------------------------------------------------------------

def gp_covariance(i, j, config: GpConfig):
    """Squared-exponential kernel between time steps ``i`` and ``j``."""
    d = np.asarray(i, dtype=float) - np.asarray(j, dtype=float)
    return config.variance * np.exp(-0.5 * d * d / config.length_scale ** 2)


def gp_covariance_matrix(config: GpConfig):
    x = np.arange(config.n_steps)
    return gp_covariance(x[:, None], x[None, :], config)


def _factor(cov, variance):
    # the squared-exponential Gram matrix is numerically singular for long
    # length scales; escalate the diagonal jitter until Cholesky succeeds
    jitter = 1e-12 * variance
    for _ in range(12):
        try:
            return linalg.cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    # symmetric eigen-factor as a last resort
    w, v = linalg.eigh(cov)
    if np.min(w) < -1e-6 * variance:
        raise linalg.LinAlgError("GP covariance factorization failed after jitter escalation")
    return v * np.sqrt(np.clip(w, 0.0, None))


def gp_sample(config: GpConfig, rng=None) -> StrainPath:
    """Draw one path; each strain component is an independent GP draw."""
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    L = _factor(gp_covariance_matrix(config), config.variance)
    z = rng.standard_normal((config.n_steps, 3))
    steps = np.asarray(config.mean, dtype=float)[None, :] + L @ z
    return StrainPath(steps, "gp", config.rng_seed, asdict(config))


def gp_samples(config: GpConfig, n_paths):
    """Many paths sharing one factorization; path ``k`` uses seed ``rng_seed + k``."""
    L = _factor(gp_covariance_matrix(config), config.variance)
    mean = np.asarray(config.mean, dtype=float)[None, :]
    paths = []
    for k in range(n_paths):
        seed = config.rng_seed + k
        z = np.random.default_rng(seed).standard_normal((config.n_steps, 3))
        cfg = asdict(config)
        cfg["rng_seed"] = seed
        paths.append(StrainPath(mean + L @ z, "gp", seed, cfg))
    return paths


# --------------------------------------------------------------------------
# Proportional paths
# --------------------------------------------------------------------------

def fundamental_directions():
    """The 18 frozen calibration directions in ``(exx, eyy, gxy)`` space.

    Uniaxial tension/compression along each axis (the third axis is pure
    shear), equi- and opposite-biaxial loading, and axial strain combined with
    positive or negative shear.
    """
    r = 1.0 / np.sqrt(2.0)
    dirs = [
        (1, 0, 0), (-1, 0, 0),
        (0, 1, 0), (0, -1, 0),
        (0, 0, 1), (0, 0, -1),
        (r, r, 0), (-r, -r, 0),
        (r, -r, 0), (-r, r, 0),
        (r, 0, r), (-r, 0, -r),
        (0, r, r), (0, -r, -r),
        (r, 0, -r), (-r, 0, r),
        (0, r, -r), (0, -r, r),
    ]
    return np.array(dirs, dtype=float)


def random_direction(seed=None, rng=None):
    """Unit vector from three standard normal draws."""
    rng = np.random.default_rng(seed) if rng is None else rng
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 0.0:
            return v / n


def default_unload_windows(magnitude_fn, n_steps):
    """Unload windows as ``(first_step, length)`` pairs, 1-based steps."""
    if magnitude_fn == "monotonic":
        return ()
    if magnitude_fn == "one_cycle":
        return ((int(round(0.5 * n_steps)) + 1, max(1, int(round(0.2 * n_steps)))),)
    if magnitude_fn == "two_cycles":
        length = max(1, int(round(0.15 * n_steps)))
        return ((int(round(0.35 * n_steps)) + 1, length), (int(round(0.70 * n_steps)) + 1, length))
    raise ValueError(f"unknown magnitude function {magnitude_fn!r}")


def magnitude_series(magnitude_fn, n_steps, step, unload_windows=None):
    """Piecewise-linear load magnitude at steps ``1..n_steps``.

    Slope ``+step`` while loading and ``-step`` inside each unload window,
    where a window ``(first, length)`` covers steps ``first .. first+length-1``.

    >>> magnitude_series("one_cycle", 6, 1.0, ((3, 2),))
    array([1., 2., 1., 0., 1., 2.])
    """
    if unload_windows is None:
        unload_windows = default_unload_windows(magnitude_fn, n_steps)
    expected = {"monotonic": 0, "one_cycle": 1, "two_cycles": 2}[magnitude_fn]
    if len(unload_windows) != expected:
        raise ValueError(f"{magnitude_fn} needs {expected} unload window(s), got {len(unload_windows)}")
    slope = np.ones(n_steps)
    covered = np.zeros(n_steps, dtype=bool)
    for first, length in unload_windows:
        if first < 1 or length < 1 or first + length - 1 > n_steps:
            raise ValueError(f"unload window {(first, length)} outside [1, {n_steps}]")
        idx = slice(first - 1, first - 1 + length)
        if np.any(covered[idx]):
            raise ValueError("unload windows overlap")
        covered[idx] = True
        slope[idx] = -1.0
    mag = step * np.cumsum(slope)
    if np.any(mag < -1e-12 * step):
        raise ValueError("unload windows drive the magnitude below zero")
    return np.maximum(mag, 0.0)


def proportional_path(config: ProportionalConfig, provenance="proportional_fundamental", seed=None):
    windows = config.unload_windows or None
    mag = magnitude_series(config.magnitude_fn, config.n_steps, config.step, windows)
    steps = mag[:, None] * np.asarray(config.direction, dtype=float)[None, :]
    cfg = asdict(config)
    return StrainPath(steps, provenance, seed, cfg)
