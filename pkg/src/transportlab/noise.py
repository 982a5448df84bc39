"""Brownian path generation and Wong-Zakai smoothing.

Paths are generated by the counter-based Philox generator keyed by
(seed, stream_id): each stream is an independent, bit-reproducible source,
so ensembles can be produced in any order or in parallel with no shared
state.  Paths are immutable after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .drift import bump_value, bump_derivative, _gauss_nodes

__all__ = [
    "BrownianPath",
    "SmoothedPath",
    "BumpKernel",
    "sample_brownian",
    "zero_path",
    "path_from_increments",
    "evaluate",
    "grid_values",
    "wong_zakai_smooth",
    "path_to_csv",
]


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class BrownianPath:
    """Discrete d-dimensional Brownian trajectory on a uniform grid from 0.

    ``increments[k]`` is W((k+1) dt) - W(k dt); grid values are the prefix
    sums with W(0) = 0.
    """

    dt: float
    increments: np.ndarray  # (n_steps, d)
    seed: int | None = None
    stream_id: int | None = None
    _grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2:
            raise NoiseError("increments must have shape (n_steps, d)")
        object.__setattr__(self, "increments", inc)
        w = np.zeros((inc.shape[0] + 1, inc.shape[1]))
        np.cumsum(inc, axis=0, out=w[1:])
        object.__setattr__(self, "_grid", w)

    @property
    def d(self):
        return self.increments.shape[1]

    @property
    def n_steps(self):
        return self.increments.shape[0]

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t, name="time"):
        """Grid index of t, which must sit on the grid up to rounding."""
        k = int(round(t / self.dt))
        if not (0 <= k <= self.n_steps) or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise NoiseError(f"{name}={t} is not on the path grid (dt={self.dt})")
        return k


def _philox(seed, stream_id):
    if seed is None or seed < 0 or stream_id is None or stream_id < 0:
        raise NoiseError("seed and stream_id must be non-negative integers")
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_brownian(seed, stream_id, d, T, dt):
    """Sample one path; identical (seed, stream_id) give bit-identical output."""
    if T <= 0 or dt <= 0 or dt > T:
        raise NoiseError("need 0 < dt <= T")
    n = int(round(T / dt))
    if abs(n * dt - T) > 4.0 * np.spacing(T):
        raise NoiseError(f"dt={dt} does not divide T={T}; grids must align")
    rng = _philox(seed, stream_id)
    inc = rng.standard_normal((n, d)) * np.sqrt(dt)
    return BrownianPath(dt=dt, increments=inc, seed=seed, stream_id=stream_id)


def sample_increments(seed, d, T, dt, n_paths, stream_offset=0):
    """Increments for streams [offset, offset + n_paths) as (n_steps, n_paths, d).

    Column j equals sample_brownian(seed, offset + j, ...).increments exactly;
    used by ensemble experiments to integrate all members at once.
    """
    n = int(round(T / dt))
    if abs(n * dt - T) > 4.0 * np.spacing(T):
        raise NoiseError(f"dt={dt} does not divide T={T}; grids must align")
    out = np.empty((n, n_paths, d))
    root = np.sqrt(dt)
    for j in range(n_paths):
        rng = _philox(seed, stream_offset + j)
        out[:, j, :] = rng.standard_normal((n, d)) * root
    return out


def zero_path(d, T, dt):
    """Deterministic path W == 0 (for noiseless companion runs)."""
    n = int(round(T / dt))
    return BrownianPath(dt=dt, increments=np.zeros((n, d)))


def path_from_increments(increments, dt):
    """Wrap externally supplied increments (test injection)."""
    return BrownianPath(dt=dt, increments=np.asarray(increments, dtype=float))


def grid_values(path: BrownianPath):
    """All grid values W(k dt), shape (n_steps + 1, d)."""
    return path._grid


def evaluate(path: BrownianPath, t):
    """W(t): exact at grid times, linear interpolation in between."""
    if t < -1e-12 or t > path.T + 1e-9 * max(1.0, path.T):
        raise NoiseError(f"t={t} outside the path range [0, {path.T}]")
    t = min(max(t, 0.0), path.T)
    pos = t / path.dt
    k = int(np.floor(pos))
    if k >= path.n_steps:
        return path._grid[path.n_steps].copy()
    frac = pos - k
    if frac == 0.0:
        return path._grid[k].copy()
    return (1.0 - frac) * path._grid[k] + frac * path._grid[k + 1]


def path_to_csv(path: BrownianPath, fileobj):
    """Write (t, W^1, ..., W^d) rows."""
    writer = csv.writer(fileobj)
    writer.writerow(["t"] + [f"W{i + 1}" for i in range(path.d)])
    for t, w in zip(path.times, path._grid):
        writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in w])


# ---------------------------------------------------------------------------
# Wong-Zakai smoothing W_n(t) = int n theta(n (t - s)) W(s) ds


@dataclass(frozen=True)
class BumpKernel:
    """Smooth non-negative profile with support (-1, 1) and unit integral."""

    def value(self, u):
        return bump_value(u) / _bump_mass_1d()

    def derivative(self, u):
        return bump_derivative(u) / _bump_mass_1d()


_MASS_1D = []


def _bump_mass_1d():
    if not _MASS_1D:
        u, w = _gauss_nodes(200)
        _MASS_1D.append(float(np.sum(w * bump_value(u))))
    return _MASS_1D[0]


@dataclass(frozen=True)
class SmoothedPath:
    """Differentiable approximation of a Brownian path.

    value(t) convolves the base path against n theta(n(t-s)); derivative(t)
    against n^2 theta'(n(t-s)).  The base path is extended by 0 below 0 and
    by W(T) above T, so value(t) reads the path only on (t-1/n, t+1/n).
    Quadrature nodes are fixed per instance; weights are normalized so that
    affine test paths are reproduced exactly away from the ends.
    """

    base: BrownianPath
    n: int
    kernel: BumpKernel = field(default_factory=BumpKernel)
    quad_points: int = 32

    def __post_init__(self):
        if self.n < 1:
            raise NoiseError("smoothing index n must be >= 1")
        if self.quad_points < 16:
            raise NoiseError("smoothing quadrature needs at least 16 nodes")
        u, w = _gauss_nodes(self.quad_points + self.quad_points % 2)
        kv = w * self.kernel.value(u)
        object.__setattr__(self, "_u", u)
        object.__setattr__(self, "_wval", kv / kv.sum())
        if not hasattr(self.kernel, "derivative"):
            raise NoiseError("kernel lacks a derivative rule")
        kd = w * self.kernel.derivative(u)
        # enforce int u theta'(u) du = -1 discretely so d/dt of affine is exact
        scale = -float(np.sum(kd * u))
        object.__setattr__(self, "_wder", kd / scale)

    def _w_many(self, times):
        """Base path at several times, constant-extended outside [0, T]."""
        ts = np.clip(np.asarray(times, dtype=float), 0.0, self.base.T)
        grid = grid_values(self.base)
        tg = self.base.times
        return np.stack(
            [np.interp(ts, tg, grid[:, i]) for i in range(self.base.d)], axis=-1
        )

    def value(self, t):
        w = self._w_many(t - self._u / self.n)
        return self._wval @ w

    def derivative(self, t):
        w = self._w_many(t - self._u / self.n)
        return self.n * (self._wder @ w)


def wong_zakai_smooth(path: BrownianPath, n, kernel=None, quad_points=32):
    """Smoothed path W_n with value(t) and derivative(t) accessors."""
    if kernel is None:
        kernel = BumpKernel()
    return SmoothedPath(base=path, n=int(n), kernel=kernel, quad_points=quad_points)
