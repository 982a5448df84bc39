"""Transport-equation solutions and weak-form machinery.

Solutions come in two kinds: the characteristics solution u(t, x) =
u0(phi_t^{-1}(x)) of the noisy equation, and the closed-form non-unique
family of the deterministic equation with the power-law drift.  The checkers
test candidate fields against the pathwise (perturbative) weak form and the
Ito weak form, and evaluate mollification commutators plain and composed
with a flow.

Quadrature.  Space integrals use composite two-point Gauss cells, with cells
split at every known discontinuity of the integrand (step data, family branch
curves) so jumps never sit inside a cell.  Terms carrying div b are computed
as Riemann-Stieltjes sums against b itself, which tolerates the integrable
singularity of the power-law divergence without ever sampling it.  A plain
trapezoid rule cannot reach the tolerances used here; the cell-split Gauss
rule is the same fixed-node idea, two orders more accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flow as _flow
from . import noise as _noise
from .drift import Drift, HolderPowerDrift, Mollifier

__all__ = [
    "StepDatum",
    "SmoothBumpDatum",
    "GridSampledDatum",
    "TestFunction",
    "TransportError",
    "CharacteristicsSolution",
    "ShiftedDatumSolution",
    "DeterministicFamilySolution",
    "ShiftedFamilySolution",
    "ConstantField",
    "CommutatorReport",
    "solve_by_characteristics",
    "deterministic_family",
    "holder_branch",
    "perturbative_residual",
    "weak_residual_ito",
    "commutator",
    "commutator_ladder",
    "commutator_along_flow",
    "uniqueness_gap_experiment",
]


class TransportError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class StepDatum:
    """u0 = 1_{x > threshold}."""

    threshold: float = 0.0

    sup_norm = 1.0

    def __call__(self, x):
        return (np.asarray(x, dtype=float) > self.threshold).astype(float)

    @property
    def discontinuities(self):
        return (self.threshold,)


@dataclass(frozen=True)
class SmoothBumpDatum:
    """C^2 polynomial bump of unit height on (center - radius, center + radius)."""

    center: float = 0.0
    radius: float = 1.0

    @property
    def sup_norm(self):
        return 1.0

    def __call__(self, x):
        q = ((np.asarray(x, dtype=float) - self.center) / self.radius) ** 2
        return np.where(q < 1.0, (1.0 - np.minimum(q, 1.0)) ** 3, 0.0)

    @property
    def discontinuities(self):
        return ()


@dataclass(frozen=True)
class GridSampledDatum:
    xs: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values)

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    @property
    def discontinuities(self):
        return ()


# ---------------------------------------------------------------------------
# C^2 compactly supported test functions


class TestFunction:
    """theta(x) = (1 - |x-c|^2 / r^2)^3 inside B(c, r), zero outside.

    Polynomial, so quadrature against it is exact on Gauss cells; exposes the
    gradient and Laplacian used by the weak forms (C^2 suffices for every
    integral the checkers build).
    """

    def __init__(self, center=0.0, radius=1.0):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        self.center = c if c.size > 1 else float(c[0])
        self.radius = float(radius)
        self.dim = c.size

    def _q(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            return ((x - self.center) / self.radius) ** 2
        return np.sum((x - self.center) ** 2, axis=-1) / self.radius**2

    def value(self, x):
        q = self._q(x)
        return np.where(q < 1.0, (1.0 - np.minimum(q, 1.0)) ** 3, 0.0)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        q = self._q(x)
        w = np.where(q < 1.0, (1.0 - np.minimum(q, 1.0)) ** 2, 0.0)
        if self.dim == 1:
            return -6.0 * (x - self.center) * w / self.radius**2
        return -6.0 * (x - self.center) * w[..., None] / self.radius**2

    def laplacian(self, x):
        q = self._q(x)
        inside = q < 1.0
        qc = np.minimum(q, 1.0)
        val = (
            -6.0 * self.dim * (1.0 - qc) ** 2 / self.radius**2
            + 24.0 * qc * (1.0 - qc) / self.radius**2
        )
        return np.where(inside, val, 0.0)

    def support(self):
        if self.dim == 1:
            return (self.center - self.radius, self.center + self.radius)
        return tuple(
            (self.center[i] - self.radius, self.center[i] + self.radius)
            for i in range(self.dim)
        )


# ---------------------------------------------------------------------------
# quadrature helpers (1-d cells with splits; 2-pt Gauss per cell)

_GAUSS_OFF = 1.0 / math.sqrt(3.0)


def _edges(lo, hi, n_cells, splits=()):
    base = np.linspace(lo, hi, int(n_cells) + 1)
    extra = [s for s in splits if lo < s < hi]
    if extra:
        base = np.unique(np.concatenate([base, np.asarray(extra, dtype=float)]))
    return base


def _gauss_nodes_weights(edges):
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    nodes = np.concatenate([mid - half * _GAUSS_OFF, mid + half * _GAUSS_OFF])
    weights = np.concatenate([half, half])
    return nodes, weights


def _stieltjes_div(spec: Drift, s, edges, cofactor_at_mid):
    """int div b(s, x) * cofactor(x) dx as sum (b(e+) - b(e-)) cofactor(mid)."""
    bvals = spec.value_1d(s, edges)
    return float(np.sum((bvals[1:] - bvals[:-1]) * cofactor_at_mid))


def _sharp_points(spec: Drift):
    if isinstance(spec, HolderPowerDrift):
        return (-spec.cap, 0.0, spec.cap)
    return ()


# ---------------------------------------------------------------------------
# solution providers: callables u(s, x-array) with u0 and known jump locations


class ConstantField:
    """u identically constant (trivial solution for divergence-free drift)."""

    def __init__(self, value, dim=1):
        self.c = float(value)
        self.dim = dim
        self.u0 = lambda x: np.full(np.shape(np.asarray(x)[..., 0] if dim > 1 else x), self.c)

    def __call__(self, s, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] if self.dim > 1 else x.shape
        return np.full(shape, self.c)

    def discontinuities(self, s):
        return ()


class ShiftedDatumSolution:
    """Exact zero-drift solution u(s, x) = u0(x - W_s)."""

    def __init__(self, path, u0):
        self.path = path
        self.u0 = u0

    def __call__(self, s, x):
        w = _noise.evaluate(self.path, s)[0]
        return self.u0(np.asarray(x, dtype=float) - w)

    def discontinuities(self, s):
        w = _noise.evaluate(self.path, s)[0]
        return tuple(d + w for d in getattr(self.u0, "discontinuities", ()))


class CharacteristicsSolution:
    """u(s, x) = u0(phi_s^{-1}(x)) through a forward grid ensemble.

    The ensemble is built once on construction over ``x_span``; jump points of
    u0 are integrated alongside so their images (the moving discontinuities)
    are known at every stored time.
    """

    def __init__(self, spec, path, u0, x_span, n_grid=513, t_max=None):
        self.spec = spec
        self.path = path
        self.u0 = u0
        t_max = path.T if t_max is None else t_max
        grid = np.linspace(x_span[0], x_span[1], int(n_grid))
        jumps = list(getattr(u0, "discontinuities", ()))
        self.ens = _flow.forward_flow(spec, path, grid, 0.0, [t_max])
        if jumps:
            _, jstates = _flow._euler_many(
                spec, path, np.asarray(jumps, dtype=float)[:, None], 0.0, t_max
            )
            self._jumps = jstates[:, :, 0]
        else:
            self._jumps = None

    def __call__(self, s, x):
        pre = _flow.inverse_flow_interpolate(self.ens, np.asarray(x, dtype=float), s)
        return self.u0(pre)

    def discontinuities(self, s):
        if self._jumps is None:
            return ()
        k = self.ens.time_index(s)
        return tuple(self._jumps[k])


def solve_by_characteristics(spec, path, u0, t, x_grid, route="grid", ens=None, margin=1.0):
    """Characteristic solution values on x_grid at time t.

    route="grid" inverts a forward ensemble (fast, order-preserving);
    route="backward" integrates the backward SDE from every grid point.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if route == "backward":
        k_t = path.index_of(t)
        pre = _flow.backward_batch(
            spec, path.increments[:, None, :], path.dt, x_grid[:, None], 0, k_t
        )[:, 0]
        return u0(pre)
    if ens is None:
        w = _noise.grid_values(path)[:, 0]
        reach = spec.sup_norm(radius=float(np.max(np.abs(x_grid))) + margin) * t
        lo = float(x_grid.min()) - reach - float(np.max(np.abs(w))) - margin
        hi = float(x_grid.max()) + reach + float(np.max(np.abs(w))) + margin
        n = max(513, 2 * len(x_grid) + 1)
        ens = _flow.forward_flow(spec, path, np.linspace(lo, hi, n), 0.0, [t])
    pre = _flow.inverse_flow_interpolate(ens, x_grid, t)
    return u0(pre)


# ---------------------------------------------------------------------------
# the deterministic non-unique family for the power-law drift


def holder_branch(gamma, cap, t):
    """x_+(t): the extremal characteristic leaving the origin."""
    return _flow.holder_extremal_branch(gamma, cap, t)


def _time_from_origin(gamma, cap, z):
    """Travel time of the deterministic flow from 0+ to z > 0."""
    z = np.asarray(z, dtype=float)
    slope = cap**gamma / (1.0 - gamma)
    t_cap = cap ** (1.0 - gamma)
    return np.where(z <= cap, z ** (1.0 - gamma), t_cap + (z - cap) / slope)


def _phi_inverse_positive(gamma, cap, t, y):
    """phi_t^{-1}(y) for y > x_+(t) on the positive half line."""
    y = np.asarray(y, dtype=float)
    slope = cap**gamma / (1.0 - gamma)
    below = np.clip(y ** (1.0 - gamma) - t, 0.0, None) ** (1.0 / (1.0 - gamma))
    t_lin = np.clip((y - cap) / slope, 0.0, None)
    rem = np.clip(t - t_lin, 0.0, None)
    above_far = y - t * slope  # never re-enters the capped zone
    above_near = np.clip(cap ** (1.0 - gamma) - rem, 0.0, None) ** (1.0 / (1.0 - gamma))
    above = np.where(t <= t_lin, above_far, above_near)
    return np.where(y <= cap, below, above)


def deterministic_family(gamma, cap, u0, gamma_plus, gamma_minus, t, x):
    """The four-branch weak solutions of the noiseless equation.

    Outside the extremal characteristics x_(+/-)(t) the initial datum is
    transported along the unique flow; between them the branch functions
    gamma_(+/-) applied to the emission time t0(t, x) fill the fan.  Branch
    boundaries follow the closed-middle tie-break (<= on the inner branches).
    """
    if not 0.0 < gamma < 1.0:
        raise TransportError("family exponent must lie in (0, 1)")
    if t <= 0:
        raise TransportError("family is defined for t > 0")
    x = np.asarray(x, dtype=float)
    xp = float(holder_branch(gamma, cap, t))
    t0 = t - _time_from_origin(gamma, cap, np.abs(x))
    gp = np.vectorize(gamma_plus, otypes=[float])
    gm = np.vectorize(gamma_minus, otypes=[float])
    out = np.empty_like(x)

    hi = x > xp
    lo = x < -xp
    mid_plus = (x >= 0.0) & ~hi
    mid_minus = (x < 0.0) & ~lo
    if np.any(hi):
        out[hi] = u0(_phi_inverse_positive(gamma, cap, t, x[hi]))
    if np.any(lo):
        out[lo] = u0(-_phi_inverse_positive(gamma, cap, t, -x[lo]))
    if np.any(mid_plus):
        out[mid_plus] = gp(t0[mid_plus])
    if np.any(mid_minus):
        out[mid_minus] = gm(t0[mid_minus])
    return out


class DeterministicFamilySolution:
    """Provider wrapping deterministic_family for the residual checkers."""

    def __init__(self, gamma, cap, u0, gamma_plus, gamma_minus):
        self.gamma = gamma
        self.cap = cap
        self.u0 = u0
        self.gp = gamma_plus
        self.gm = gamma_minus

    def __call__(self, s, x):
        if s <= 0.0:
            return self.u0(np.asarray(x, dtype=float))
        return deterministic_family(self.gamma, self.cap, self.u0, self.gp, self.gm, s, x)

    def discontinuities(self, s):
        if s <= 0.0:
            return tuple(getattr(self.u0, "discontinuities", ()))
        xp = float(holder_branch(self.gamma, self.cap, s))
        return (-xp, 0.0, xp)


class ShiftedFamilySolution:
    """The family formula naively dragged along the noise: u_det(s, x - W_s).

    Not a solution of the noisy equation; serves as the negative control in
    the uniqueness-gap experiment.
    """

    def __init__(self, family: DeterministicFamilySolution, path):
        self.family = family
        self.path = path
        self.u0 = family.u0

    def __call__(self, s, x):
        w = _noise.evaluate(self.path, s)[0]
        return self.family(s, np.asarray(x, dtype=float) - w)

    def discontinuities(self, s):
        w = _noise.evaluate(self.path, s)[0]
        return tuple(d + w for d in self.family.discontinuities(s))


# ---------------------------------------------------------------------------
# weak-form residual checkers


def _u_against(provider, s, weight_fn, lo, hi, n_cells, extra_splits=()):
    """int u(s, x) * weight(x) dx with cells split at the provider's jumps."""
    splits = tuple(provider.discontinuities(s)) + tuple(extra_splits)
    edges = _edges(lo, hi, n_cells, splits)
    nodes, w = _gauss_nodes_weights(edges)
    return float(np.sum(w * provider(s, nodes) * weight_fn(nodes))), edges


def _time_indices(path, t, n_s):
    K = path.index_of(t)
    stride = max(1, K // int(n_s))
    if K % stride:
        raise TransportError(
            f"n_s={n_s} does not divide the {K} path steps up to t={t}"
        )
    return np.arange(0, K + 1, stride), stride


def perturbative_residual(provider, spec, theta, path, t, n_x=512, n_s=512, signed=False):
    """Residual of the pathwise weak form (no stochastic integrals).

    u_t(theta) = u0(theta(. + W_t))
               + int_0^t ds int [b . Dtheta(x + W_{ts}) + div b theta(x + W_{ts})] u_s(x) dx

    Space integrals run over supp theta shifted per time node (the integrand
    vanishes outside a bounded set for bounded paths); time quadrature is a
    trapezoid on path-grid-aligned nodes.
    """
    if spec.dim == 2:
        return _perturbative_2d(provider, spec, theta, path, t, n_x, n_s, signed)
    c, r = theta.center, theta.radius
    wt = _noise.evaluate(path, t)[0]
    grid_w = _noise.grid_values(path)[:, 0]
    lhs, _ = _u_against(provider, t, theta.value, c - r, c + r, n_x)

    u0 = provider.u0
    u0_splits = tuple(getattr(u0, "discontinuities", ()))
    edges0 = _edges(c - r - wt, c + r - wt, n_x, u0_splits)
    nodes0, w0 = _gauss_nodes_weights(edges0)
    term0 = float(np.sum(w0 * u0(nodes0) * theta.value(nodes0 + wt)))

    idx, stride = _time_indices(path, t, n_s)
    sharp = _sharp_points(spec)
    ivals = np.empty(len(idx))
    for j, k in enumerate(idx):
        s = k * path.dt
        wts = wt - grid_w[k]
        lo, hi = c - r - wts, c + r - wts
        splits = tuple(provider.discontinuities(s)) + sharp
        edges = _edges(lo, hi, n_x, splits)
        nodes, w = _gauss_nodes_weights(edges)
        uvals = provider(s, nodes)
        adv = float(np.sum(w * spec.value_1d(s, nodes) * theta.grad(nodes + wts) * uvals))
        mids = 0.5 * (edges[:-1] + edges[1:])
        cof = theta.value(mids + wts) * provider(s, mids)
        div = _stieltjes_div(spec, s, edges, cof)
        ivals[j] = adv + div
    rhs = term0 + float(np.trapezoid(ivals, dx=stride * path.dt))
    defect = lhs - rhs
    return defect if signed else abs(defect)


def weak_residual_ito(provider, spec, theta, path, t, n_x=512, signed=False):
    """Residual of the Ito weak form, left-point Ito sums on the path grid.

    Expected O(dt^(1/2)) noisier than the perturbative residual: the Ito sums
    dominate the error budget.
    """
    if spec.dim == 2:
        return _weak_ito_2d(provider, spec, theta, path, t, n_x, signed)
    c, r = theta.center, theta.radius
    K = path.index_of(t)
    sharp = _sharp_points(spec)
    A = np.empty(K + 1)
    B = np.empty(K + 1)
    C = np.empty(K + 1)
    for k in range(K + 1):
        s = k * path.dt
        splits = tuple(provider.discontinuities(s)) + sharp
        edges = _edges(c - r, c + r, n_x, splits)
        nodes, w = _gauss_nodes_weights(edges)
        uvals = provider(s, nodes)
        A[k] = float(np.sum(w * uvals * spec.value_1d(s, nodes) * theta.grad(nodes)))
        mids = 0.5 * (edges[:-1] + edges[1:])
        A[k] += _stieltjes_div(spec, s, edges, theta.value(mids) * provider(s, mids))
        B[k] = float(np.sum(w * uvals * theta.grad(nodes)))
        C[k] = float(np.sum(w * uvals * theta.laplacian(nodes)))
    lhs, _ = _u_against(provider, t, theta.value, c - r, c + r, n_x)
    u0 = provider.u0
    edges0 = _edges(c - r, c + r, n_x, tuple(getattr(u0, "discontinuities", ())))
    nodes0, w0 = _gauss_nodes_weights(edges0)
    term0 = float(np.sum(w0 * u0(nodes0) * theta.value(nodes0)))
    ito = float(np.sum(B[:-1] * path.increments[:K, 0]))
    defect = (
        lhs
        - term0
        - float(np.trapezoid(A, dx=path.dt))
        - ito
        - 0.5 * float(np.trapezoid(C, dx=path.dt))
    )
    return defect if signed else abs(defect)


def _grid_2d(theta, shift, n_cells):
    (lo1, hi1), (lo2, hi2) = theta.support()
    e1 = _edges(lo1 - shift[0], hi1 - shift[0], n_cells)
    e2 = _edges(lo2 - shift[1], hi2 - shift[1], n_cells)
    n1, w1 = _gauss_nodes_weights(e1)
    n2, w2 = _gauss_nodes_weights(e2)
    X = np.stack(np.meshgrid(n1, n2, indexing="ij"), axis=-1)
    W = np.outer(w1, w2)
    return X, W


def _perturbative_2d(provider, spec, theta, path, t, n_x, n_s, signed):
    n_cells = min(int(n_x), 96)
    wt = _noise.evaluate(path, t)
    grid_w = _noise.grid_values(path)
    X, W = _grid_2d(theta, np.zeros(2), n_cells)
    lhs = float(np.sum(W * provider(t, X) * theta.value(X)))
    X0, W0 = _grid_2d(theta, wt, n_cells)
    term0 = float(np.sum(W0 * provider.u0(X0) * theta.value(X0 + wt)))
    idx, stride = _time_indices(path, t, n_s)
    ivals = np.empty(len(idx))
    for j, k in enumerate(idx):
        s = k * path.dt
        wts = wt - grid_w[k]
        Xs, Ws = _grid_2d(theta, wts, n_cells)
        u = provider(s, Xs)
        bv = spec.value(s, Xs)
        gr = theta.grad(Xs + wts)
        dv = spec.divergence(s, Xs)
        ivals[j] = float(
            np.sum(Ws * u * (np.sum(bv * gr, axis=-1) + dv * theta.value(Xs + wts)))
        )
    rhs = term0 + float(np.trapezoid(ivals, dx=stride * path.dt))
    defect = lhs - rhs
    return defect if signed else abs(defect)


def _weak_ito_2d(provider, spec, theta, path, t, n_x, signed):
    n_cells = min(int(n_x), 96)
    K = path.index_of(t)
    X, W = _grid_2d(theta, np.zeros(2), n_cells)
    th = theta.value(X)
    gr = theta.grad(X)
    lap = theta.laplacian(X)
    A = np.empty(K + 1)
    B = np.empty((K + 1, 2))
    C = np.empty(K + 1)
    for k in range(K + 1):
        s = k * path.dt
        u = provider(s, X)
        bv = spec.value(s, X)
        dv = spec.divergence(s, X)
        A[k] = float(np.sum(W * u * (np.sum(bv * gr, axis=-1) + dv * th)))
        B[k, 0] = float(np.sum(W * u * gr[..., 0]))
        B[k, 1] = float(np.sum(W * u * gr[..., 1]))
        C[k] = float(np.sum(W * u * lap))
    lhs = float(np.sum(W * provider(t, X) * th))
    term0 = float(np.sum(W * provider.u0(X) * th))
    ito = float(np.sum(B[:-1] * path.increments[:K]))
    defect = (
        lhs
        - term0
        - float(np.trapezoid(A, dx=path.dt))
        - ito
        - 0.5 * float(np.trapezoid(C, dx=path.dt))
    )
    return defect if signed else abs(defect)


# ---------------------------------------------------------------------------
# mollification commutators


def _convolve_at(points, fn, eps, kernel, inner_cells, splits):
    """(theta_eps * fn)(p) for each p, cells split at the jump locations."""
    out = np.empty(len(points))
    for i, p in enumerate(points):
        edges = _edges(p - eps, p + eps, inner_cells, splits)
        nodes, w = _gauss_nodes_weights(edges)
        out[i] = np.sum(w * kernel(p - nodes) * fn(nodes))
    return out


@dataclass(frozen=True)
class CommutatorReport:
    """Commutator values along a strictly decreasing eps ladder."""

    eps_ladder: tuple
    values: tuple
    decay_exponent: float

    def __post_init__(self):
        ladder = self.eps_ladder
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise TransportError("eps ladder must be strictly decreasing")
        if not all(np.isfinite(v) for v in self.values):
            raise TransportError("commutator values must be finite")


def commutator_ladder(v, g, rho, eps_ladder, n_outer=256, inner_cells=24, t=0.0):
    """Evaluate the commutator along an eps ladder and fit its decay rate."""
    values = tuple(
        commutator(v, g, e, rho, n_outer=n_outer, inner_cells=inner_cells, t=t)
        for e in eps_ladder
    )
    exponent = float(
        np.polyfit(np.log(eps_ladder), np.log(np.abs(values)), 1)[0]
    )
    return CommutatorReport(
        eps_ladder=tuple(eps_ladder), values=values, decay_exponent=exponent
    )


def commutator(v: Drift, g, eps, rho, n_outer=256, inner_cells=24, t=0.0):
    """int R_eps[v, g](x) rho(x) dx for drift-like v and bounded g.

    Uses the integrated-by-parts double-integral form: difference terms in v
    keep the size O(eps^alpha), and the div v parts enter as Stieltjes sums
    against v so its singular points are integrated across, never sampled.
    """
    return _commutator_core(
        v,
        g,
        eps,
        lo=rho.center - rho.radius,
        hi=rho.center + rho.radius,
        weight=rho.value,
        dweight=rho.grad,
        n_outer=n_outer,
        inner_cells=inner_cells,
        t=t,
    )


def _commutator_core(v, g, eps, lo, hi, weight, dweight, n_outer, inner_cells, t):
    if getattr(v, "dim", 1) != 1:
        raise TransportError("commutator quadrature is one-dimensional")
    kern = Mollifier(eps=float(eps), dim=1).kernel
    g_splits = tuple(getattr(g, "discontinuities", ()))
    v_splits = _sharp_points(v)
    gv = lambda x: np.asarray(g(x), dtype=float) * v.value_1d(t, x)

    # resolve the kernel scale in the outer direction
    n_cells = max(int(n_outer), int(math.ceil(4.0 * (hi - lo) / eps)))
    edges = _edges(lo, hi, n_cells, v_splits + g_splits)
    nodes, w = _gauss_nodes_weights(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])

    conv_g_nodes = _convolve_at(nodes, g, eps, kern, inner_cells, g_splits)
    conv_gv_nodes = _convolve_at(nodes, gv, eps, kern, inner_cells, g_splits + v_splits)
    dw_nodes = dweight(nodes)
    c1 = float(np.sum(w * dw_nodes * v.value_1d(t, nodes) * conv_g_nodes))
    c2 = float(np.sum(w * dw_nodes * conv_gv_nodes))

    conv_g_mids = _convolve_at(mids, g, eps, kern, inner_cells, g_splits)
    a_term = _stieltjes_div(v, t, edges, np.asarray(weight(mids)) * conv_g_mids)

    # B term lives on supp(rho) inflated by eps
    edges_b = _edges(lo - eps, hi + eps, n_cells, v_splits + g_splits)
    mids_b = 0.5 * (edges_b[:-1] + edges_b[1:])
    conv_w_mids = _convolve_at(mids_b, weight, eps, kern, inner_cells, ())
    b_term = _stieltjes_div(v, t, edges_b, np.asarray(g(mids_b)) * conv_w_mids)

    return c1 - c2 + a_term - b_term


def commutator_along_flow(v, g, eps, rho, ens, t, n_outer=256, inner_cells=24):
    """int R_eps[v, g](phi_t(x)) rho(x) dx by the change of variables.

    Transforms to int R_eps(y) rho(phi^{-1}(y)) J phi^{-1}(y) dy over the
    image of supp rho; the inverse map and its Jacobian come from the
    monotone interpolated ensemble.
    """
    if ens.d != 1:
        raise TransportError("flow composition implemented in one dimension")
    img = ens.states_at(t)[:, 0]
    init = ens.initial[:, 0]
    lo = float(np.interp(rho.center - rho.radius, init, img))
    hi = float(np.interp(rho.center + rho.radius, init, img))

    def weight(y):
        x = _flow.inverse_flow_interpolate(ens, y, t)
        jinv = _inverse_slope(init, img, np.asarray(y))
        return rho.value(x) * jinv

    def dweight(y):
        x = _flow.inverse_flow_interpolate(ens, y, t)
        jinv = _inverse_slope(init, img, np.asarray(y))
        return rho.grad(x) * jinv * jinv

    return _commutator_core(
        v, g, eps, lo=lo, hi=hi, weight=weight, dweight=dweight,
        n_outer=n_outer, inner_cells=inner_cells, t=t,
    )


def _inverse_slope(init, img, y):
    """d/dy of the piecewise-linear inverse map (piecewise constant)."""
    idx = np.clip(np.searchsorted(img, y) - 1, 0, len(img) - 2)
    return (init[idx + 1] - init[idx]) / (img[idx + 1] - img[idx])


# ---------------------------------------------------------------------------
# the uniqueness gap, measured


def uniqueness_gap_experiment(
    gamma,
    cap,
    u0,
    noise_on,
    seed=1,
    n_paths=10,
    t=1.0,
    dt=2**-9,
    n_x=512,
    n_s=256,
    a_values=(0.0, 0.5, 1.0),
    theta=None,
):
    """Deterministic non-uniqueness vs noisy uniqueness, as residuals.

    noise off: several family members all carry a near-zero pathwise
    residual while being far apart in sup norm (non-uniqueness certified).
    noise on: the characteristics solution keeps a small residual while the
    naively shifted family member does not.
    """
    spec = HolderPowerDrift(gamma=gamma, cap=cap, signed=True)
    if theta is None:
        theta = TestFunction(center=0.0, radius=2.0)
    out = {"gamma": gamma, "noise_on": bool(noise_on)}
    if not noise_on:
        zero = _noise.zero_path(1, t, t / n_s)
        members = [
            DeterministicFamilySolution(gamma, cap, u0, (lambda s, a=a: a), (lambda s, a=a: a))
            for a in a_values
        ]
        residuals = [
            perturbative_residual(m, spec, theta, zero, t, n_x=n_x, n_s=n_s)
            for m in members
        ]
        xp = float(holder_branch(gamma, cap, t))
        probe = np.linspace(-0.95 * xp, 0.95 * xp, 101)
        fields = [m(t, probe) for m in members]
        gaps = [
            float(np.max(np.abs(fields[i] - fields[j])))
            for i in range(len(fields))
            for j in range(i + 1, len(fields))
        ]
        out.update(
            {
                "a_values": list(a_values),
                "residuals": residuals,
                "min_pairwise_gap": min(gaps),
                "x_plus": xp,
            }
        )
        return out

    char_res, naive_res = [], []
    span = (-(cap + 4.0), cap + 4.0)
    a_mid = a_values[len(a_values) // 2]
    family = DeterministicFamilySolution(
        gamma, cap, u0, (lambda s, a=a_mid: a), (lambda s, a=a_mid: a)
    )
    for j in range(n_paths):
        path = _noise.sample_brownian(seed, j, 1, t, dt)
        char = CharacteristicsSolution(spec, path, u0, x_span=span, n_grid=1025)
        naive = ShiftedFamilySolution(family, path)
        char_res.append(
            perturbative_residual(char, spec, theta, path, t, n_x=n_x, n_s=n_s)
        )
        naive_res.append(
            perturbative_residual(naive, spec, theta, path, t, n_x=n_x, n_s=n_s)
        )
    out.update(
        {
            "char_median_residual": float(np.median(char_res)),
            "naive_median_residual": float(np.median(naive_res)),
        }
    )
    return out
