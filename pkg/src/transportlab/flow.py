"""Characteristics SDE integration and stochastic flows on grids.

Everything is Euler-Maruyama on the driving path's grid (the noise is
additive, so no Milstein correction exists).  Forward ensembles share one
noise path across all initial points, which is what makes order preservation
and flow probes meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import noise as _noise
from .drift import Drift, HolderPowerDrift

__all__ = [
    "Trajectory",
    "FlowEnsemble",
    "JacobianRecord",
    "FlowError",
    "integrate_sde",
    "forward_flow",
    "inverse_flow_backward",
    "inverse_flow_interpolate",
    "jacobian_fd",
    "jacobian_logdiv",
    "jacobian_record",
    "log_jacobian_cumulative",
    "pathwise_uniqueness_probe",
    "sobolev_jacobian_probe",
    "random_drift_negative_probe",
    "holder_extremal_branch",
    "euler_batch",
    "backward_batch",
    "ensemble_to_csv",
    "ensemble_to_binary",
]


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    start: float
    times: np.ndarray        # (m+1,)
    states: np.ndarray       # (m+1, d)

    @property
    def d(self):
        return self.states.shape[1]

    def at(self, t):
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not (0 <= k < len(self.times)) or abs(self.times[k] - t) > 1e-9:
            raise FlowError(f"t={t} not on the trajectory grid")
        return self.states[k]


@dataclass(frozen=True)
class FlowEnsemble:
    """Flow maps phi_{s, t}(x) on a lattice of initial points, one noise path.

    ``states[k, i]`` is the image of initial point i at times[k].  For 2-d
    lattices ``lattice_shape`` records (n1, n2) so that i = i1 * n2 + i2.
    """

    path: object
    start: float
    times: np.ndarray          # (m+1,)
    initial: np.ndarray        # (n, d)
    states: np.ndarray         # (m+1, n, d)
    direction: str = "forward"
    lattice_shape: tuple = ()
    spacing: tuple = ()

    @property
    def d(self):
        return self.initial.shape[1]

    def time_index(self, t):
        dt = self.times[1] - self.times[0]
        k = int(round((t - self.times[0]) / dt))
        if not (0 <= k < len(self.times)) or abs(self.times[k] - t) > 1e-9:
            raise FlowError(f"t={t} not stored in the ensemble")
        return k

    def states_at(self, t):
        return self.states[self.time_index(t)]


@dataclass(frozen=True)
class JacobianRecord:
    point: np.ndarray
    time: float
    det_fd: float
    log_div: float
    fd_step: float


# ---------------------------------------------------------------------------
# integrators


def _grid_indices(path, s, t):
    ks = path.index_of(s, "s")
    kt = path.index_of(t, "t")
    if ks > kt:
        raise FlowError(f"need s <= t, got s={s}, t={t}")
    return ks, kt


def _euler_many(spec: Drift, path, X0, s, t):
    """March all rows of X0 (n, d) forward from s to t on the path grid."""
    ks, kt = _grid_indices(path, s, t)
    X = np.array(X0, dtype=float)
    states = np.empty((kt - ks + 1,) + X.shape)
    states[0] = X
    dt = path.dt
    for k in range(ks, kt):
        bval = spec.value(k * dt, X)
        X = X + bval * dt + path.increments[k]
        if not np.all(np.isfinite(X)):
            raise FlowError(f"non-finite state (overflow) at step {k}")
        states[k - ks + 1] = X
    times = dt * np.arange(ks, kt + 1)
    return times, states


def integrate_sde(spec: Drift, path, x0, s=0.0, t=None):
    """Trajectory of dX = b(t, X) dt + dW from X_s = x0 up to time t."""
    if t is None:
        t = path.T
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times, states = _euler_many(spec, path, x0[None, :], s, t)
    return Trajectory(start=s, times=times, states=states[:, 0, :])


def forward_flow(spec: Drift, path, grid, s, t_list):
    """Forward ensemble over ``grid``, all points driven by the same path.

    ``grid`` is a 1-d array of points (d=1), or an (n1, n2, 2) lattice (d=2).
    Every t in t_list must be a path grid time; the ensemble stores all
    intermediate states so restarts and interpolation stay exact.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        initial = grid[:, None]
        lattice_shape = (grid.shape[0],)
        spacing = (float(grid[1] - grid[0]),) if grid.shape[0] > 1 else (0.0,)
    elif grid.ndim == 3 and grid.shape[-1] == 2:
        initial = grid.reshape(-1, 2)
        lattice_shape = grid.shape[:2]
        spacing = (
            float(grid[1, 0, 0] - grid[0, 0, 0]) if grid.shape[0] > 1 else 0.0,
            float(grid[0, 1, 1] - grid[0, 0, 1]) if grid.shape[1] > 1 else 0.0,
        )
    else:
        raise FlowError("grid must be 1-d points or an (n1, n2, 2) lattice")
    if not np.all(np.isfinite(initial)):
        raise FlowError("grid points must be finite")
    t_end = max(t_list)
    for t in t_list:
        path.index_of(t, "t_list entry")
    times, states = _euler_many(spec, path, initial, s, t_end)
    return FlowEnsemble(
        path=path,
        start=s,
        times=times,
        initial=initial,
        states=states,
        lattice_shape=lattice_shape,
        spacing=spacing,
    )


def inverse_flow_backward(spec: Drift, path, y, s, t):
    """phi_{s,t}^{-1}(y) via the backward SDE with negated drift and noise."""
    ks, kt = _grid_indices(path, s, t)
    Z = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    dt = path.dt
    for k in range(kt, ks, -1):
        bval = spec.value(k * dt, Z[None, :])[0]
        Z = Z - bval * dt - path.increments[k - 1]
        if not np.all(np.isfinite(Z)):
            raise FlowError(f"non-finite state (overflow) at backward step {k}")
    return Z


def euler_batch(spec: Drift, increments, dt, X0, t0=0.0, record=None):
    """Vectorized forward Euler over a batch axis; increments (m, ..., d).

    ``record`` (optional list of step indices) collects intermediate states.
    Used by Monte Carlo experiments where each batch column carries its own
    noise stream.
    """
    X = (np.asarray(X0, dtype=float) + np.zeros(increments.shape[1:])).astype(float)
    collected = {}
    if record is not None and 0 in record:
        collected[0] = X.copy()
    for k in range(increments.shape[0]):
        X += spec.value(t0 + k * dt, X) * dt + increments[k]
        if record is not None and (k + 1) in record:
            collected[k + 1] = X.copy()
    if record is not None:
        return X, collected
    return X


def backward_batch(spec: Drift, increments, dt, Y, s_idx, t_idx, t0=0.0):
    """Vectorized backward march of the inverse-flow SDE from t_idx to s_idx.

    ``Y`` broadcasts against increments[k] (shape (..., d)); each batch
    column carries its own noise.
    """
    Z = (np.asarray(Y, dtype=float) + np.zeros(increments.shape[1:])).astype(float)
    for k in range(t_idx, s_idx, -1):
        Z = Z - spec.value(t0 + k * dt, Z) * dt - increments[k - 1]
    return Z


# ---------------------------------------------------------------------------
# grid inversion of the forward map


def inverse_flow_interpolate(ens: FlowEnsemble, y, t):
    """Invert the forward ensemble map at time t.

    d=1: monotone piecewise-linear inversion (valid by order preservation).
    d=2: locate the containing image quadrilateral and invert bilinearly.
    """
    img = ens.states_at(t)
    y = np.asarray(y, dtype=float)
    if ens.d == 1:
        f = img[:, 0]
        x = ens.initial[:, 0]
        lo, hi = f[0], f[-1]
        ys = y[..., 0] if (y.ndim > 1 and y.shape[-1] == 1) else y
        if np.any(ys < lo) or np.any(ys > hi):
            raise FlowError(
                f"point outside the image range [{lo:.6g}, {hi:.6g}] at t={t}"
            )
        return np.interp(ys, f, x)
    y = np.atleast_1d(y)
    if ens.d == 2:
        return _invert_bilinear(ens, img, y, t)
    raise FlowError("grid inversion implemented for d in (1, 2)")


def _invert_bilinear(ens, img, y, t):
    n1, n2 = ens.lattice_shape
    quad = img.reshape(n1, n2, 2)
    init = ens.initial.reshape(n1, n2, 2)
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            corners = (quad[i, j], quad[i + 1, j], quad[i, j + 1], quad[i + 1, j + 1])
            ab = _bilinear_newton(corners, y)
            if ab is not None:
                a, b = ab
                x00, x10, x01, x11 = (
                    init[i, j],
                    init[i + 1, j],
                    init[i, j + 1],
                    init[i + 1, j + 1],
                )
                return (
                    (1 - a) * (1 - b) * x00
                    + a * (1 - b) * x10
                    + (1 - a) * b * x01
                    + a * b * x11
                )
    raise FlowError(f"point {y} outside the image mesh at t={t}")


def _bilinear_newton(corners, y, tol=1e-12):
    q00, q10, q01, q11 = corners
    lo = np.minimum.reduce(corners) - 1e-12
    hi = np.maximum.reduce(corners) + 1e-12
    if np.any(y < lo) or np.any(y > hi):
        return None
    a, b = 0.5, 0.5
    for _ in range(30):
        base = (
            (1 - a) * (1 - b) * q00 + a * (1 - b) * q10 + (1 - a) * b * q01 + a * b * q11
        )
        r = base - y
        if np.max(np.abs(r)) < tol:
            break
        da = (1 - b) * (q10 - q00) + b * (q11 - q01)
        db = (1 - a) * (q01 - q00) + a * (q11 - q10)
        J = np.stack([da, db], axis=1)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        a -= step[0]
        b -= step[1]
    else:
        return None
    if -1e-9 <= a <= 1 + 1e-9 and -1e-9 <= b <= 1 + 1e-9:
        return min(max(a, 0.0), 1.0), min(max(b, 0.0), 1.0)
    return None


# ---------------------------------------------------------------------------
# Jacobians, two routes


def jacobian_fd(ens: FlowEnsemble, index, t):
    """Determinant of the centered-difference derivative at a lattice point."""
    img = ens.states_at(t)
    if ens.d == 1:
        i = int(index)
        n = ens.lattice_shape[0]
        if not 0 < i < n - 1:
            raise FlowError("jacobian needs both lattice neighbours")
        h = ens.spacing[0]
        return float((img[i + 1, 0] - img[i - 1, 0]) / (2.0 * h))
    if ens.d == 2:
        i, j = index
        n1, n2 = ens.lattice_shape
        if not (0 < i < n1 - 1 and 0 < j < n2 - 1):
            raise FlowError("jacobian needs both lattice neighbours")
        quad = img.reshape(n1, n2, 2)
        h1, h2 = ens.spacing
        col1 = (quad[i + 1, j] - quad[i - 1, j]) / (2.0 * h1)
        col2 = (quad[i, j + 1] - quad[i, j - 1]) / (2.0 * h2)
        return float(col1[0] * col2[1] - col1[1] * col2[0])
    raise FlowError("jacobian_fd implemented for d in (1, 2)")


def jacobian_record(spec: Drift, ens: FlowEnsemble, index, t, div_step=1e-5):
    """Both Jacobian routes at one lattice point, bundled for comparison."""
    det = jacobian_fd(ens, index, t)
    point = ens.initial[index] if ens.d == 1 else ens.initial[
        index[0] * ens.lattice_shape[1] + index[1]
    ]
    logdiv = jacobian_logdiv(spec, ens.path, point, t, s=ens.start, div_step=div_step)
    return JacobianRecord(
        point=np.asarray(point, dtype=float),
        time=float(t),
        det_fd=float(det),
        log_div=float(logdiv),
        fd_step=float(ens.spacing[0]),
    )


def jacobian_logdiv(spec: Drift, path, x, t, s=0.0, div_step=1e-5):
    """log J phi_t(x) as the time integral of div b along the trajectory."""
    traj = integrate_sde(spec, path, x, s=s, t=t)
    if spec.time_dependent:
        vals = np.array(
            [
                spec.divergence(tt, st[None, :], h=div_step)[0]
                for tt, st in zip(traj.times, traj.states)
            ]
        )
    else:
        vals = spec.divergence(0.0, traj.states, h=div_step)
    return float(np.trapezoid(vals, dx=path.dt))


def log_jacobian_cumulative(spec: Drift, path, xs, t, s=0.0, div_step=1e-5):
    """log J phi_.(x) on a 1-d grid: (times, logJ[(m+1), n]) for the probe."""
    xs = np.asarray(xs, dtype=float)
    times, states = _euler_many(spec, path, xs[:, None], s, t)
    vals = np.empty((len(times), len(xs)))
    for k, tt in enumerate(times):
        vals[k] = spec.divergence(tt, states[k], h=div_step)
    dt = path.dt
    out = np.zeros_like(vals)
    np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dt, axis=0, out=out[1:])
    return times, out


# ---------------------------------------------------------------------------
# probes


def holder_extremal_branch(gamma, cap, t):
    """Closed-form extremal branch x_+(t) of x' = b(x) from 0 (signed field)."""
    t = np.asarray(t, dtype=float)
    t_cap = cap ** (1.0 - gamma)
    slope = cap**gamma / (1.0 - gamma)
    return np.where(t <= t_cap, t ** (1.0 / (1.0 - gamma)), cap + (t - t_cap) * slope)


@dataclass(frozen=True)
class UniquenessProbeReport:
    rows: list
    extremal_separation: float | None
    time: float


def pathwise_uniqueness_probe(spec: Drift, path, x0, delta_list, t):
    """Separation of solutions started at x0 and x0 + delta, shared noise.

    A companion run on the zero path reports the deterministic behaviour; for
    the HolderPower drift started at its degenerate point the closed-form
    extremal-branch separation 2 t^(1/(1-gamma)) is attached as well.
    """
    x0 = float(np.asarray(x0).reshape(-1)[0])
    zero = _noise.zero_path(path.d, path.T, path.dt)
    rows = []
    for delta in delta_list:
        starts = np.array([[x0], [x0 + delta]])
        _, noisy = _euler_many(spec, path, starts, 0.0, t)
        _, det = _euler_many(spec, zero, starts, 0.0, t)
        sep_noisy = np.abs(noisy[:, 1, 0] - noisy[:, 0, 0])
        sep_det = np.abs(det[:, 1, 0] - det[:, 0, 0])
        rows.append(
            {
                "delta": float(delta),
                "separation_at_t": float(sep_noisy[-1]),
                "sup_separation": float(sep_noisy.max()),
                "det_separation_at_t": float(sep_det[-1]),
                "det_sup_separation": float(sep_det.max()),
            }
        )
    extremal = None
    if isinstance(spec, HolderPowerDrift) and spec.signed and x0 == 0.0:
        extremal = float(2.0 * holder_extremal_branch(spec.gamma, spec.cap, t))
    return UniquenessProbeReport(rows=rows, extremal_separation=extremal, time=t)


def sobolev_jacobian_probe(
    gammas,
    eps_ladder,
    paths,
    r,
    cap=2.0,
    n_x=128,
    t=0.5,
    quad_points=32,
    div_step=1e-5,
    drift_factory=None,
):
    """Monte Carlo estimate of E int_0^T int_B(r) |D log J phi_t|^2 dx dt.

    One row per (gamma, eps); ``drift_factory(gamma, eps)`` defaults to the
    mollified HolderPower field.  The table exhibits the growth trend across
    the eps ladder per gamma.  Exploratory: values are reported, the caller
    decides what to assert.
    """
    from .drift import mollify_drift

    rows = []
    for gamma in gammas:
        base = HolderPowerDrift(gamma=float(gamma), cap=cap, signed=True)
        for eps in eps_ladder:
            if drift_factory is not None:
                spec = drift_factory(gamma, eps)
            else:
                spec = mollify_drift(base, eps, quad_points)
            acc = 0.0
            xs = np.linspace(-r, r, int(n_x) + 1)
            h = xs[1] - xs[0]
            for path in paths:
                times, logj = log_jacobian_cumulative(
                    spec, path, xs, t, div_step=div_step
                )
                dlog = (logj[:, 2:] - logj[:, :-2]) / (2.0 * h)
                space = np.trapezoid(dlog**2, dx=h, axis=1)
                acc += float(np.trapezoid(space, dx=path.dt))
            rows.append(
                {"gamma": float(gamma), "eps": float(eps), "estimate": acc / len(paths)}
            )
    return rows


def random_drift_negative_probe(path, x0=0.0, t=1.0):
    """Both explicit solutions of dX = sqrt|X - W| dt + dW from the origin.

    Y = X - W solves Y' = sqrt|Y|; the branches Y == 0 and Y = t^2/4 map back
    to X = W and X = t^2/4 + W.  Reports the global Euler residual of each
    X branch and their separation at t: noise does not select one solution.
    """
    if abs(float(x0)) > 0:
        raise FlowError("probe is about the degenerate start x0 = W_0 = 0")
    kt = path.index_of(t)
    dt = path.dt
    w = _noise.grid_values(path)[: kt + 1, 0]
    times = dt * np.arange(kt + 1)
    branches = {
        "zero": w.copy(),
        "parabola": 0.25 * times**2 + w,
    }
    report = {}
    for name, X in branches.items():
        bvals = np.sqrt(np.abs(X - w))
        drift_sum = float(np.sum(bvals[:-1]) * dt)
        residual = abs(float(X[-1] - X[0] - drift_sum - (w[-1] - w[0])))
        report[f"residual_{name}"] = residual
    report["separation_at_t"] = float(abs(branches["parabola"][-1] - branches["zero"][-1]))
    report["dt"] = dt
    return report


# ---------------------------------------------------------------------------
# exports


def ensemble_to_csv(ens: FlowEnsemble, fileobj):
    """Time rows, one column block per initial point."""
    import csv as _csv

    writer = _csv.writer(fileobj)
    cols = ["t"]
    for i in range(ens.initial.shape[0]):
        if ens.d == 1:
            cols.append(f"x0={ens.initial[i, 0]:.17g}")
        else:
            coords = "_".join(f"{c:.17g}" for c in ens.initial[i])
            cols.extend(f"x0={coords}:{ax}" for ax in ("x", "y")[: ens.d])
    writer.writerow(cols)
    for k, tt in enumerate(ens.times):
        row = [f"{tt:.17g}"]
        row.extend(f"{v:.17g}" for v in ens.states[k].ravel())
        writer.writerow(row)


_MAGIC = b"TLFL"


def ensemble_to_binary(ens: FlowEnsemble, fileobj):
    """Compact dump: magic 'TLFL', version u32, then n_times, n_points, d as
    little-endian u32, then times, initial points and states as row-major
    little-endian float64."""
    m, n, d = ens.states.shape
    fileobj.write(_MAGIC)
    fileobj.write(struct.pack("<IIII", 1, m, n, d))
    fileobj.write(np.ascontiguousarray(ens.times, dtype="<f8").tobytes())
    fileobj.write(np.ascontiguousarray(ens.initial, dtype="<f8").tobytes())
    fileobj.write(np.ascontiguousarray(ens.states, dtype="<f8").tobytes())


def ensemble_from_binary(fileobj):
    if fileobj.read(4) != _MAGIC:
        raise FlowError("not an ensemble dump")
    _, m, n, d = struct.unpack("<IIII", fileobj.read(16))
    times = np.frombuffer(fileobj.read(8 * m), dtype="<f8")
    initial = np.frombuffer(fileobj.read(8 * n * d), dtype="<f8").reshape(n, d)
    states = np.frombuffer(fileobj.read(8 * m * n * d), dtype="<f8").reshape(m, n, d)
    return FlowEnsemble(
        path=None,
        start=float(times[0]),
        times=times,
        initial=initial,
        states=states,
        lattice_shape=(n,),
        spacing=(float(initial[1, 0] - initial[0, 0]) if n > 1 else 0.0,),
    )
