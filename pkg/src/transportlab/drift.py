"""Catalogue of drift fields b(t, x): evaluation, divergences, mollification.

All drifts are pure values: evaluating one never mutates state, so instances
can be shared freely across threads.  Points are numpy arrays whose last axis
is the space dimension; for ``dim == 1`` any array shape is accepted and
treated elementwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Drift",
    "ZeroDrift",
    "HolderPowerDrift",
    "Rotation2DDrift",
    "LinearDrift",
    "RandomShiftSqrtDrift",
    "MollifiedDrift",
    "GridSampledDrift",
    "Mollifier",
    "bump_value",
    "bump_derivative",
    "eval_drift",
    "eval_divergence",
    "mollify_drift",
    "holder_seminorm_estimate",
    "drift_to_dict",
    "drift_from_dict",
    "drift_to_json",
    "drift_from_json",
]


class DriftError(ValueError):
    pass


# ---------------------------------------------------------------------------
# smooth compactly supported bump kernel, shared by mollifiers and smoothing


def bump_value(u):
    """Unnormalized C^inf bump exp(-1/(1-u^2)) on (-1, 1), zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui))
    return out


def bump_derivative(u):
    """Derivative of the unnormalized bump."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    g = 1.0 - ui * ui
    out[inside] = np.exp(-1.0 / g) * (-2.0 * ui / (g * g))
    return out


def _gauss_nodes(n):
    x, w = np.polynomial.legendre.leggauss(int(n))
    return x, w


@dataclass(frozen=True)
class Mollifier:
    """Normalized bump kernel of radius ``eps`` in dimension ``dim``.

    The profile is exp(-1/(1-|x|^2)) on the unit ball, scaled to unit mass;
    it is even, smooth and supported in B(eps).  Quadrature against the
    kernel uses fixed Gauss-Legendre nodes, with the weights renormalized to
    sum exactly to one so that constants (and, by symmetry, affine fields)
    are reproduced exactly.
    """

    eps: float
    dim: int = 1
    quad_points: int = 32

    def __post_init__(self):
        if self.eps <= 0:
            raise DriftError("mollifier radius must be positive")
        if self.quad_points < 8:
            raise DriftError("mollifier needs at least 8 quadrature points")

    def kernel(self, x):
        """Kernel value theta_eps(x); x has shape (..., dim) (any shape if dim=1)."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            r = np.abs(x)
        else:
            r = np.sqrt(np.sum(x * x, axis=-1))
        return bump_value(r / self.eps) / (self._mass() * self.eps**self.dim)

    def _mass(self):
        return _bump_mass(self.dim)

    def nodes(self):
        """Offsets y_i and normalized weights w_i with sum(w_i) == 1.

        The discrete convolution is (theta_eps * g)(x) = sum_i w_i g(x - y_i).
        Offsets come in symmetric pairs, so odd functions convolve to zero at
        the origin exactly.
        """
        return _mollifier_nodes(self.eps, self.dim, self.quad_points)


def _bump_mass(dim):
    # integral of the unnormalized bump over R^dim, cached per dimension
    if dim not in _BUMP_MASS:
        u, w = _gauss_nodes(200)
        if dim == 1:
            _BUMP_MASS[dim] = float(np.sum(w * bump_value(u)))
        elif dim == 2:
            # radial: 2*pi * int_0^1 r exp(-1/(1-r^2)) dr on [0,1] nodes
            r = 0.5 * (u + 1.0)
            wr = 0.5 * w
            _BUMP_MASS[dim] = float(2.0 * np.pi * np.sum(wr * r * bump_value(r)))
        else:
            raise DriftError(f"mollifier not implemented for dim={dim}")
    return _BUMP_MASS[dim]


_BUMP_MASS: dict[int, float] = {}
_NODE_CACHE: dict[tuple, tuple] = {}
_STIELTJES_CACHE: dict[tuple, tuple] = {}


def _stieltjes_kernel(eps, cells):
    """Cell edges on [-eps, eps] and normalized kernel values at midpoints.

    Supports the Stieltjes convolution sum_j theta_eps(mid_j) (b(x+e_{j+1}) -
    b(x+e_j)); weights are scaled so a linear b yields its exact slope.
    """
    key = (float(eps), int(cells))
    if key not in _STIELTJES_CACHE:
        m = int(cells) + int(cells) % 2
        edges = np.linspace(-eps, eps, m + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        k = bump_value(mids / eps)
        k = k / np.sum(k * np.diff(edges))
        _STIELTJES_CACHE[key] = (edges, k)
    return _STIELTJES_CACHE[key]


def _mollifier_nodes(eps, dim, quad_points):
    key = (float(eps), int(dim), int(quad_points))
    if key not in _NODE_CACHE:
        n = int(quad_points)
        if n % 2:
            n += 1  # even count keeps all nodes off the kernel's center
        u, w = _gauss_nodes(n)
        if dim == 1:
            y = eps * u
            raw = w * bump_value(u)
            offsets = y.reshape(-1, 1)
        elif dim == 2:
            uu, vv = np.meshgrid(u, u, indexing="ij")
            ww = np.outer(w, w)
            rr = np.sqrt(uu**2 + vv**2)
            raw = (ww * bump_value(rr)).ravel()
            offsets = eps * np.stack([uu.ravel(), vv.ravel()], axis=-1)
            keep = raw > 0.0
            raw, offsets = raw[keep], offsets[keep]
        else:
            raise DriftError(f"mollifier not implemented for dim={dim}")
        weights = raw / raw.sum()
        _NODE_CACHE[key] = (offsets, weights)
    return _NODE_CACHE[key]


# ---------------------------------------------------------------------------
# drift variants


class Drift:
    """Base class; subclasses are immutable evaluators of b(t, x)."""

    dim: int = 1
    time_dependent: bool = False

    def value(self, t, x):
        raise NotImplementedError

    def divergence_analytic(self, t, x):
        """Analytic div b where defined; NaN marks points it is undefined at."""
        return np.full(self._scalar_shape(x), np.nan)

    def value_1d(self, t, x):
        """Scalar evaluation for dim=1 drifts: x any shape, result same shape."""
        if self.dim != 1:
            raise DriftError("value_1d only applies to one-dimensional drifts")
        x = np.asarray(x, dtype=float)
        return self.value(t, x[..., None])[..., 0]

    def divergence(self, t, x, h=1e-5, mode="auto"):
        """div b(t, x) with step ``h`` for the centered-difference fallback.

        mode="auto": analytic where the variant defines it, centered finite
        differences elsewhere.  mode="analytic" raises at points without an
        analytic value (e.g. the HolderPower singularity).  mode="fd" always
        uses the stencil.
        """
        if h <= 0:
            raise DriftError("finite-difference step h must be positive")
        x = np.asarray(x, dtype=float)
        if mode == "fd":
            return self._divergence_fd(t, x, h)
        ana = self.divergence_analytic(t, x)
        bad = np.isnan(ana)
        if not np.any(bad):
            return ana
        if mode == "analytic":
            raise DriftError(
                "analytic divergence undefined at some requested points "
                "(HolderPower singularity x=0 or |x|=R)"
            )
        fd = self._divergence_fd(t, x, h)
        return np.where(bad, fd, ana)

    def _divergence_fd(self, t, x, h):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            xp = self.value_1d(t, x + h)
            xm = self.value_1d(t, x - h)
            return (xp - xm) / (2.0 * h)
        acc = 0.0
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            acc = acc + (self.value(t, x + e)[..., i] - self.value(t, x - e)[..., i]) / (2.0 * h)
        return acc

    def sup_norm(self, radius=None):
        """Supremum of |b| (over B(radius) for unbounded variants)."""
        raise NotImplementedError

    def _scalar_shape(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            return x.shape
        return x.shape[:-1]

    def _check_point(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DriftError("drift evaluated at a non-finite point")
        if self.dim > 1 and (x.ndim == 0 or x.shape[-1] != self.dim):
            raise DriftError(
                f"dimension mismatch: drift has dim={self.dim}, point shape {x.shape}"
            )
        return x


@dataclass(frozen=True)
class ZeroDrift(Drift):
    dim: int = 1

    def value(self, t, x):
        x = self._check_point(x)
        return np.zeros_like(x)

    def divergence_analytic(self, t, x):
        return np.zeros(self._scalar_shape(x))

    def sup_norm(self, radius=None):
        return 0.0


@dataclass(frozen=True)
class HolderPowerDrift(Drift):
    """1-d field (1/(1-gamma)) sign(x) (|x| ^ gamma, capped at R).

    ``signed=False`` drops the sign factor.  C_b^gamma but not Lipschitz at the
    origin; its derivative gamma/(1-gamma) |x|^(gamma-1) is singular there and
    kinks at |x| = cap.
    """

    gamma: float
    cap: float = 2.0
    signed: bool = True
    dim: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise DriftError("HolderPower exponent must lie in (0, 1)")
        if self.cap <= 0:
            raise DriftError("HolderPower truncation radius must be positive")
        if self.dim != 1:
            raise DriftError("HolderPower drift is one-dimensional")

    @property
    def coef(self):
        return 1.0 / (1.0 - self.gamma)

    def value(self, t, x):
        x = self._check_point(x)
        a = np.minimum(np.abs(x), self.cap) ** self.gamma
        if self.signed:
            a = np.sign(x) * a
        return self.coef * a

    def divergence_analytic(self, t, x):
        x = np.asarray(x, dtype=float)
        xx = x if (x.ndim == 0 or x.shape[-1] != 1) else x[..., 0]
        xx = np.asarray(xx, dtype=float)
        absx = np.abs(xx)
        out = np.where(
            absx > self.cap,
            0.0,
            self.gamma * self.coef * np.where(absx > 0, absx, 1.0) ** (self.gamma - 1.0),
        )
        if not self.signed:
            out = out * np.sign(xx)
        # undefined exactly at the singularity and at the cap kink
        out = np.where((absx == 0.0) | (absx == self.cap), np.nan, out)
        return out

    def sup_norm(self, radius=None):
        return self.coef * self.cap**self.gamma


@dataclass(frozen=True)
class Rotation2DDrift(Drift):
    """Rigid rotation field omega * (-x2, x1); divergence-free."""

    omega: float = 1.0
    dim: int = 2

    def value(self, t, x):
        x = self._check_point(x)
        out = np.empty_like(x)
        out[..., 0] = -self.omega * x[..., 1]
        out[..., 1] = self.omega * x[..., 0]
        return out

    def divergence_analytic(self, t, x):
        return np.zeros(self._scalar_shape(x))

    def sup_norm(self, radius=None):
        if radius is None:
            raise DriftError("rotation field is unbounded; pass a radius")
        return abs(self.omega) * radius


@dataclass(frozen=True)
class LinearDrift(Drift):
    """b(x) = A x for a constant matrix A (1-d: scalar a)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(1))

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise DriftError("linear drift needs a square matrix")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "dim", a.shape[0])

    def value(self, t, x):
        x = self._check_point(x)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            return self.matrix[0, 0] * x
        return np.einsum("ij,...j->...i", self.matrix, x)

    def divergence_analytic(self, t, x):
        return np.full(self._scalar_shape(x), float(np.trace(self.matrix)))

    def sup_norm(self, radius=None):
        if radius is None:
            raise DriftError("linear field is unbounded; pass a radius")
        return float(np.linalg.norm(self.matrix, 2)) * radius

    def __hash__(self):
        return hash(self.matrix.tobytes())


@dataclass(frozen=True)
class RandomShiftSqrtDrift(Drift):
    """Random 1-d field sqrt(|x - W_t|) carried by an attached Brownian path.

    The attached handle makes evaluation deterministic; querying outside the
    path's time range is an error.
    """

    path: object = None
    dim: int = 1
    time_dependent: bool = True

    def attach(self, path):
        return RandomShiftSqrtDrift(path=path)

    def _shift(self, t):
        if self.path is None:
            raise DriftError("RandomShiftSqrt drift has no attached path handle")
        from . import noise

        return noise.evaluate(self.path, t)[0]

    def value(self, t, x):
        x = self._check_point(x)
        return np.sqrt(np.abs(x - self._shift(t)))

    def sup_norm(self, radius=None):
        if radius is None:
            raise DriftError("random-shift field is unbounded; pass a radius")
        w = 0.0
        if self.path is not None:
            from . import noise

            w = float(np.max(np.abs(noise.grid_values(self.path))))
        return float(np.sqrt(radius + w))


@dataclass(frozen=True)
class MollifiedDrift(Drift):
    """Fixed-node convolution of a base drift with the bump mollifier.

    ``value`` and ``divergence`` commute with the discrete convolution: the
    reported divergence is the exact derivative of the discretely mollified
    field wherever the base divergence exists at the shifted nodes.
    """

    base: Drift = None
    eps: float = 0.1
    quad_points: int = 32

    def __post_init__(self):
        if self.base is None:
            raise DriftError("mollified drift needs a base drift")
        if self.eps <= 0:
            raise DriftError("mollification radius must be positive")
        if self.quad_points < 8:
            raise DriftError("mollification needs at least 8 quadrature points")
        object.__setattr__(self, "dim", self.base.dim)
        object.__setattr__(self, "time_dependent", self.base.time_dependent)

    def _nodes(self):
        return _mollifier_nodes(self.eps, self.dim, self.quad_points)

    def value(self, t, x):
        x = self._check_point(x)
        offsets, weights = self._nodes()
        scalar_style = self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1)
        acc = None
        for off, w in zip(offsets, weights):
            shift = off[0] if scalar_style else off
            term = w * self.base.value(t, x - shift)
            acc = term if acc is None else acc + term
        return acc

    def divergence_analytic(self, t, x):
        """div b^eps; in 1-d via the Stieltjes form int theta_eps(o) db(x + o).

        The Stieltjes sum touches only values of b, so the integrable
        singularity of the base divergence is integrated across rather than
        sampled; the result is bounded uniformly in x for every eps.  In
        higher dimension the divergence commutes with the node sum instead
        (the catalogue's multi-d fields all have smooth divergences).
        """
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            edges, kern = _stieltjes_kernel(self.eps, max(2 * self.quad_points, 64))
            scalar_style = x.ndim == 0 or x.shape[-1] != 1
            bvals = [
                (self.base.value_1d(t, x + o) if scalar_style
                 else self.base.value(t, x + o)[..., 0])
                for o in edges
            ]
            acc = kern[0] * (bvals[1] - bvals[0])
            for j in range(1, len(kern)):
                acc = acc + kern[j] * (bvals[j + 1] - bvals[j])
            return acc
        offsets, weights = self._nodes()
        acc = None
        for off, w in zip(offsets, weights):
            term = w * self.base.divergence(t, x - off, mode="auto")
            acc = term if acc is None else acc + term
        return acc

    def sup_norm(self, radius=None):
        return self.base.sup_norm(radius)


@dataclass(frozen=True)
class GridSampledDrift(Drift):
    """1-d drift interpolated bilinearly from a space-time field."""

    field: object = None
    dim: int = 1
    time_dependent: bool = True

    def value(self, t, x):
        x = self._check_point(x)
        return self.field.interpolate(t, x)

    def sup_norm(self, radius=None):
        return float(np.max(np.abs(self.field.values)))


# ---------------------------------------------------------------------------
# module-level operations (thin functional facade over the variants)


def eval_drift(spec: Drift, t, x):
    """b(t, x); accepts scalars, single points or arrays of points."""
    return spec.value(t, np.asarray(x, dtype=float))


def eval_divergence(spec: Drift, t, x, h=1e-5, mode="auto"):
    """div b(t, x); analytic where the variant defines one, else centered FD."""
    return spec.divergence(t, np.asarray(x, dtype=float), h=h, mode=mode)


def mollify_drift(spec: Drift, eps, quad_points=32):
    """Return the mollified variant b^eps = theta_eps * b."""
    return MollifiedDrift(base=spec, eps=float(eps), quad_points=int(quad_points))


def holder_seminorm_estimate(spec: Drift, t, radius, alpha, n_pairs, seed):
    """Sampled estimate of the alpha-Holder seminorm of b(t, .) on B(radius).

    Draws ``n_pairs`` point pairs from a seeded stream; the estimate is the
    running max over the pairs, so it is non-decreasing in ``n_pairs`` for a
    fixed seed.  Degenerate pairs x == y are skipped.
    """
    if n_pairs < 1:
        raise DriftError("need at least one sample pair")
    if not 0.0 < alpha < 1.0:
        raise DriftError("Holder exponent must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    best = 0.0
    d = spec.dim
    for _ in range(int(n_pairs)):
        pair = rng.uniform(-radius, radius, size=(2, d))
        x, y = pair[0], pair[1]
        dist = float(np.linalg.norm(x - y))
        if dist == 0.0:
            continue
        if d == 1:
            fx = spec.value_1d(t, x[0])
            fy = spec.value_1d(t, y[0])
            num = abs(float(fx - fy))
        else:
            num = float(np.linalg.norm(spec.value(t, x) - spec.value(t, y)))
        best = max(best, num / dist**alpha)
    return best


# ---------------------------------------------------------------------------
# JSON serialization; the CLI schema uses {"kind": ..., parameters...}


def drift_to_dict(spec: Drift) -> dict:
    if isinstance(spec, ZeroDrift):
        return {"kind": "zero", "dim": spec.dim}
    if isinstance(spec, HolderPowerDrift):
        return {
            "kind": "holder_power",
            "gamma": spec.gamma,
            "cap": spec.cap,
            "signed": spec.signed,
        }
    if isinstance(spec, Rotation2DDrift):
        return {"kind": "rotation2d", "omega": spec.omega}
    if isinstance(spec, LinearDrift):
        return {"kind": "linear", "matrix": np.asarray(spec.matrix).tolist()}
    if isinstance(spec, RandomShiftSqrtDrift):
        return {"kind": "random_shift_sqrt"}
    if isinstance(spec, MollifiedDrift):
        return {
            "kind": "mollified",
            "eps": spec.eps,
            "quad_points": spec.quad_points,
            "base": drift_to_dict(spec.base),
        }
    if isinstance(spec, GridSampledDrift):
        return {
            "kind": "grid_sampled",
            "xs": np.asarray(spec.field.xs).tolist(),
            "ts": np.asarray(spec.field.ts).tolist(),
            "values": np.asarray(spec.field.values).tolist(),
        }
    raise DriftError(f"cannot serialize drift of type {type(spec).__name__}")


def drift_from_dict(data: dict) -> Drift:
    kind = data.get("kind")
    if kind == "zero":
        return ZeroDrift(dim=int(data.get("dim", 1)))
    if kind == "holder_power":
        return HolderPowerDrift(
            gamma=float(data["gamma"]),
            cap=float(data.get("cap", 2.0)),
            signed=bool(data.get("signed", True)),
        )
    if kind == "rotation2d":
        return Rotation2DDrift(omega=float(data.get("omega", 1.0)))
    if kind == "linear":
        return LinearDrift(matrix=np.asarray(data["matrix"], dtype=float))
    if kind == "random_shift_sqrt":
        return RandomShiftSqrtDrift()  # path handle attached separately
    if kind == "mollified":
        return MollifiedDrift(
            base=drift_from_dict(data["base"]),
            eps=float(data["eps"]),
            quad_points=int(data.get("quad_points", 32)),
        )
    if kind == "grid_sampled":
        from .parabolic import SpaceTimeField

        field = SpaceTimeField(
            xs=np.asarray(data["xs"], dtype=float),
            ts=np.asarray(data["ts"], dtype=float),
            values=np.asarray(data["values"], dtype=float),
        )
        return GridSampledDrift(field=field)
    raise DriftError(f"unknown drift kind: {kind!r}")


def drift_to_json(spec: Drift) -> str:
    return json.dumps(drift_to_dict(spec), sort_keys=True)


def drift_from_json(text: str) -> Drift:
    return drift_from_dict(json.loads(text))
