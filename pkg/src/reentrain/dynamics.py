"""Integration, periodic-orbit finding, Floquet analysis, and adjoint response curves.

Everything here works on a generic :class:`VectorField` with one scalar
parameter and a rank-1 scalar input.  Angles are in radians, time in hours.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

N_THETA = 256
THETA_GRID = 2.0 * np.pi * np.arange(N_THETA) / N_THETA


class IntegrationFailure(RuntimeError):
    """Step-size underflow or solver breakdown; carries the last valid time."""

    def __init__(self, msg: str, last_time: float):
        super().__init__(msg)
        self.last_time = last_time


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""


class NotOscillatingError(RuntimeError):
    """No Poincare-section crossing found within the allotted time."""


class BasinError(RuntimeError):
    """Periodic-orbit iteration failed to converge from the given guess."""


class AdjointConvergenceError(RuntimeError):
    """Backward adjoint sweeps did not reach a periodic fixed point."""


class NotEntrainedError(RuntimeError):
    """Forced simulation failed to lock to the external period."""


def _zero_input(t: float) -> float:
    return 0.0


@dataclass
class VectorField:
    """ODE right-hand side with a scalar parameter and a rank-1 scalar input.

    ``rhs(x, p, t, u)`` must return the full state derivative including the
    input term ``u * delta``.  ``delta`` is the constant input direction used
    by the reduction machinery (response curves are also projected onto it).
    """

    dimension: int
    rhs: Callable[[np.ndarray, float, float, float], np.ndarray]
    delta: np.ndarray
    jacobian: Optional[Callable[[np.ndarray, float, float], np.ndarray]] = None
    name: str = "field"
    # theta = 0 anchor convention: ("peak", component) or ("crossing", component, level)
    anchor: tuple = ("peak", 0)
    noise_sigma: np.ndarray | float = 0.0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta.shape != (self.dimension,):
            raise ValueError("delta must have shape (dimension,)")
        if not np.any(self.delta != 0.0):
            raise ValueError("delta must have at least one nonzero entry")

    def jac(self, x: np.ndarray, p: float, t: float) -> np.ndarray:
        if self.jacobian is not None:
            return self.jacobian(x, p, t)
        return _fd_jacobian(self, x, p, t)


def _fd_jacobian(field: VectorField, x: np.ndarray, p: float, t: float,
                 eps: float = 1e-7) -> np.ndarray:
    n = field.dimension
    J = np.empty((n, n))
    f0 = field.rhs(x, p, t, 0.0)
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = eps * (1.0 + abs(x[j]))
        J[:, j] = (field.rhs(x + dx, p, t, 0.0) - f0) / dx[j]
    return J


@dataclass
class IntegratorOptions:
    rtol: float = 1e-9
    atol: float = 1e-9
    max_step: float = np.inf
    noise_intensity: float = 0.0
    noise_dt: float = 0.01
    seed: Optional[int] = None


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # shape (len(t), dim)
    dense: Optional[Callable[[float], np.ndarray]] = None

    def __call__(self, t):
        if self.dense is not None:
            out = self.dense(np.atleast_1d(t))
            return out.T if np.ndim(t) else out[:, 0]
        idx = np.searchsorted(self.t, t)
        return self.x[np.clip(idx, 0, len(self.t) - 1)]


def integrate(field: VectorField, x0: np.ndarray, p: float,
              input_fn: Optional[Callable[[float], float]] = None,
              span: tuple[float, float] = (0.0, 1.0),
              opts: Optional[IntegratorOptions] = None,
              t_eval: Optional[np.ndarray] = None,
              events=None) -> Trajectory:
    """Integrate the field over ``span``; adaptive RK45, or Euler-Maruyama when noisy."""
    opts = opts or IntegratorOptions()
    u = input_fn or _zero_input
    x0 = np.asarray(x0, dtype=float)
    if opts.noise_intensity > 0.0:
        return _integrate_em(field, x0, p, u, span, opts, t_eval)

    def f(t, x):
        return field.rhs(x, p, t, u(t))

    sol = solve_ivp(f, span, x0, method="RK45", rtol=opts.rtol, atol=opts.atol,
                    max_step=opts.max_step, dense_output=True, t_eval=t_eval,
                    events=events)
    if sol.status == -1:
        raise IntegrationFailure(sol.message, last_time=float(sol.t[-1]) if len(sol.t) else span[0])
    if not np.all(np.isfinite(sol.y)):
        raise DivergenceError(f"non-finite state during integration of {field.name}")
    traj = Trajectory(t=sol.t, x=sol.y.T, dense=sol.sol)
    traj.events = sol.t_events if events is not None else None
    return traj


def _integrate_em(field: VectorField, x0, p, u, span, opts, t_eval) -> Trajectory:
    """Fixed-step Euler-Maruyama; deterministic given the seed."""
    rng = np.random.default_rng(opts.seed)
    dt = opts.noise_dt
    t0, t1 = span
    n_steps = int(round((t1 - t0) / dt))
    sigma = opts.noise_intensity * np.atleast_1d(
        np.asarray(field.noise_sigma, dtype=float) if np.ndim(field.noise_sigma) else
        np.ones(field.dimension))
    if sigma.shape != (field.dimension,):
        sigma = np.full(field.dimension, float(opts.noise_intensity))
    ts = t0 + dt * np.arange(n_steps + 1)
    sqdt = np.sqrt(dt)
    x = np.asarray(x0, dtype=float).copy()
    if t_eval is None:
        xs = np.empty((n_steps + 1, field.dimension))
        xs[0] = x
        for k in range(n_steps):
            t = ts[k]
            x = x + dt * field.rhs(x, p, t, u(t)) \
                + sqdt * sigma * rng.standard_normal(field.dimension)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"non-finite state at t={t:.3f} in noisy integration")
            xs[k + 1] = x
        return Trajectory(t=ts, x=xs)
    # stream linear interpolation onto t_eval; the full step history of a
    # large population would not fit in memory
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.empty((len(t_eval), field.dimension))
    j = 0
    while j < len(t_eval) and t_eval[j] <= t0 + 1e-12:
        out[j] = x
        j += 1
    for k in range(n_steps):
        t = ts[k]
        x_prev = x
        x = x + dt * field.rhs(x, p, t, u(t)) \
            + sqdt * sigma * rng.standard_normal(field.dimension)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at t={t:.3f} in noisy integration")
        while j < len(t_eval) and t_eval[j] <= ts[k + 1] + 1e-12:
            w = (t_eval[j] - t) / dt
            out[j] = x_prev + w * (x - x_prev)
            j += 1
    while j < len(t_eval):
        out[j] = x
        j += 1
    return Trajectory(t=t_eval, x=out)


@dataclass
class PoincareEvent:
    """Transversal scalar section: crossing of ``x[component] == level``."""
    component: int = 0
    level: float = 0.0
    direction: int = 1  # +1 upward, -1 downward

    def as_event(self):
        comp, level, direction = self.component, self.level, self.direction

        def ev(t, x):
            return x[comp] - level

        ev.direction = direction
        ev.terminal = False
        return ev


@dataclass
class LimitCycle:
    parameter: float
    period: float
    samples: np.ndarray          # (N_THETA, dim), samples[k] = x at theta_k
    anchor_state: np.ndarray     # state at theta = 0
    field_name: str = ""
    floquet_exponents: Optional[np.ndarray] = None   # sorted slowest first, trivial removed
    n_nonnegligible: int = 0
    g1: Optional[np.ndarray] = None                  # (N_THETA, dim) slow eigenfunction
    prc: Optional[np.ndarray] = None                 # Z, (N_THETA, dim)
    irc: Optional[np.ndarray] = None                 # I for slowest isostable
    monodromy: Optional[np.ndarray] = None
    _dense: Optional[Callable] = None                # dense orbit over [0, T], t=0 at theta=0
    _stm_dense: Optional[Callable] = None

    @property
    def omega(self) -> float:
        return 2.0 * np.pi / self.period

    @property
    def kappa(self) -> float:
        return float(np.real(self.floquet_exponents[0]))

    def state_at_theta(self, theta):
        """Periodic cubic interpolation of the orbit at arbitrary theta."""
        th = np.mod(theta, 2.0 * np.pi)
        return self._orbit_spline()(th)

    def _orbit_spline(self):
        if not hasattr(self, "_osp") or self._osp is None:
            grid = np.append(THETA_GRID, 2.0 * np.pi)
            vals = np.vstack([self.samples, self.samples[:1]])
            self._osp = CubicSpline(grid, vals, axis=0, bc_type="periodic")
        return self._osp


def _anchor_time(field: VectorField, dense, period: float) -> float:
    """Time within [0, T) at which the model's theta=0 convention is met."""
    kind = field.anchor[0]
    comp = field.anchor[1]
    ts = np.linspace(0.0, period, 512, endpoint=False)
    vals = dense(ts)[comp]
    if kind == "peak":
        k = int(np.argmax(vals))
        lo, hi = ts[k] - period / 512, ts[k] + period / 512
        res = minimize_scalar(lambda t: -dense(float(t))[comp], bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10})
        return float(np.mod(res.x, period))
    if kind == "crossing":
        level = field.anchor[2]
        shifted = vals - level
        for k in range(len(ts)):
            a, b = shifted[k], shifted[(k + 1) % len(ts)]
            if a < 0.0 <= b:
                lo, hi = ts[k], ts[k] + period / 512
                # bisection on the dense output
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    if dense(mid)[comp] - level < 0.0:
                        lo = mid
                    else:
                        hi = mid
                return float(np.mod(0.5 * (lo + hi), period))
        raise NotOscillatingError("anchor crossing level never reached on the orbit")
    raise ValueError(f"unknown anchor convention {kind!r}")


def find_limit_cycle(field: VectorField, p: float, guess: np.ndarray,
                     section: Optional[PoincareEvent] = None,
                     opts: Optional[IntegratorOptions] = None,
                     max_time: float = 5000.0, orbit_tol: float = 1e-9,
                     max_cycles: int = 400) -> LimitCycle:
    """Converge onto the stable periodic orbit and sample it on the theta grid.

    The orbit is located by following the flow and monitoring returns to the
    Poincare section until successive section states agree to ``orbit_tol``.
    """
    opts = opts or IntegratorOptions()
    section = section or PoincareEvent(component=0, level=None)  # placeholder
    x = np.asarray(guess, dtype=float)

    # settle transients and pick a section level automatically if not given
    pre = integrate(field, x, p, None, (0.0, 200.0), opts)
    x = pre.x[-1]
    if section.level is None:
        tail = integrate(field, x, p, None, (0.0, 120.0), opts,
                         t_eval=np.linspace(0.0, 120.0, 2000))
        comp = section.component
        lo, hi = tail.x[:, comp].min(), tail.x[:, comp].max()
        # decayed trajectories still wiggle at the integrator tolerance, so
        # the stationarity floor has to sit well above atol
        if hi - lo < max(1e-12, 100.0 * opts.atol):
            raise NotOscillatingError("trajectory appears stationary")
        section = PoincareEvent(comp, 0.5 * (lo + hi), section.direction)

    ev = section.as_event()
    chunk = 120.0
    t_offset = 0.0
    cross_t: list[float] = []
    cross_x: list[np.ndarray] = []
    period = None
    while t_offset < max_time and len(cross_t) < max_cycles:
        traj = integrate(field, x, p, None, (0.0, chunk), opts, events=ev)
        for tc in traj.events[0]:
            cross_t.append(t_offset + float(tc))
            cross_x.append(np.asarray(traj(float(tc))))
        x = traj.x[-1]
        t_offset += chunk
        if len(cross_t) >= 2:
            gap = np.linalg.norm(cross_x[-1] - cross_x[-2])
            if gap < orbit_tol:
                period = cross_t[-1] - cross_t[-2]
                x = cross_x[-1]
                break
    if period is None:
        if len(cross_t) < 2:
            raise NotOscillatingError("no section crossings within max_time")
        raise BasinError("periodic orbit did not converge to orbit_tol "
                         f"(last return gap {np.linalg.norm(cross_x[-1] - cross_x[-2]):.3g})")

    one = integrate(field, x, p, None, (0.0, period), opts)
    t_anchor = _anchor_time(field, one.dense, period)
    x_anchor = np.asarray(one.dense(t_anchor))

    cycle_traj = integrate(field, x_anchor, p, None, (0.0, period), opts)
    thetas_t = THETA_GRID / (2.0 * np.pi) * period
    samples = cycle_traj.dense(thetas_t).T
    lc = LimitCycle(parameter=p, period=period, samples=samples,
                    anchor_state=x_anchor, field_name=field.name,
                    _dense=cycle_traj.dense)
    return lc


def monodromy_floquet(cycle: LimitCycle, field: VectorField,
                      opts: Optional[IntegratorOptions] = None,
                      negligible_multiplier: float = 1e-4) -> LimitCycle:
    """Attach Floquet exponents and the slow eigenfunction g1 to ``cycle``.

    Exponents are ``log(multiplier)/T`` with the trivial unit multiplier
    removed, sorted slowest-decaying first.
    """
    opts = opts or IntegratorOptions()
    n = field.dimension
    T = cycle.period
    p = cycle.parameter

    def var_rhs(t, y):
        x = y[:n]
        Phi = y[n:].reshape(n, n)
        J = field.jac(x, p, t)
        return np.concatenate([field.rhs(x, p, t, 0.0), (J @ Phi).ravel()])

    y0 = np.concatenate([cycle.anchor_state, np.eye(n).ravel()])
    sol = solve_ivp(var_rhs, (0.0, T), y0, method="RK45", rtol=opts.rtol,
                    atol=opts.atol, dense_output=True)
    if not sol.success:
        raise IntegrationFailure("variational integration failed", float(sol.t[-1]))
    M = sol.y[n:, -1].reshape(n, n)
    cycle.monodromy = M
    cycle._stm_dense = sol.sol

    lam, V = np.linalg.eig(M)
    # drop the multiplier closest to 1 (trivial phase direction)
    trivial = int(np.argmin(np.abs(lam - 1.0)))
    if abs(lam[trivial] - 1.0) > 1e-4:
        import warnings
        warnings.warn(f"trivial Floquet multiplier off unity: {lam[trivial]:.6g}")
    keep = [k for k in range(n) if k != trivial]
    lam_k = lam[keep]
    order = np.argsort(-np.abs(lam_k))  # slowest decay = largest |multiplier|
    lam_k = lam_k[order]
    kappas = np.log(lam_k.astype(complex)) / T
    cycle.floquet_exponents = kappas
    cycle.n_nonnegligible = int(np.sum(np.abs(lam_k) > negligible_multiplier))

    # slow Floquet eigenfunction g1 along the orbit
    v1 = V[:, keep[order[0]]]
    if np.max(np.abs(v1.imag)) < 1e-9 * np.max(np.abs(v1.real)):
        v1 = v1.real
    v1 = np.real_if_close(v1)
    v1 = v1 / np.linalg.norm(v1)
    nz = np.nonzero(np.abs(v1) > 1e-12)[0][0]
    if v1[nz] < 0:
        v1 = -v1
    kap1 = kappas[0]
    ts = THETA_GRID / (2.0 * np.pi) * T
    g = np.empty((N_THETA, n))
    for k, t in enumerate(ts):
        Phi_t = sol.sol(t)[n:].reshape(n, n)
        g[k] = np.real(np.exp(-kap1 * t) * (Phi_t @ v1))
    cycle.g1 = g
    return cycle


def _orbit_dense(cycle: LimitCycle, field: VectorField, opts: IntegratorOptions):
    if cycle._dense is None:
        traj = integrate(field, cycle.anchor_state, cycle.parameter, None,
                         (0.0, cycle.period), opts)
        cycle._dense = traj.dense
    return cycle._dense


def adjoint_response_curves(cycle: LimitCycle, field: VectorField,
                            opts: Optional[IntegratorOptions] = None,
                            max_sweeps: int = 20, tol: float = 1e-8) -> LimitCycle:
    """Compute the phase response curve Z and isostable response curve I.

    Both solve adjoint equations backward in time over repeated periods,
    seeded with the monodromy left eigenvectors, renormalized each sweep,
    until sweep-to-sweep sup-norm change falls below ``tol``.
    Normalizations: Z . F = omega everywhere; I(0) . g1(0) = 1.
    """
    opts = opts or IntegratorOptions()
    if cycle.monodromy is None:
        monodromy_floquet(cycle, field, opts)
    n = field.dimension
    T, p, omega = cycle.period, cycle.parameter, cycle.omega
    dense = _orbit_dense(cycle, field, opts)
    kap1 = cycle.floquet_exponents[0]
    if abs(kap1.imag) > 1e-10:
        raise AdjointConvergenceError("dominant Floquet exponent is complex; "
                                      "single-isostable adjoint not applicable")
    kap1 = float(kap1.real)

    lamL, W = np.linalg.eig(cycle.monodromy.T)
    z0 = np.real_if_close(W[:, np.argmin(np.abs(lamL - 1.0))]).astype(float)
    F0 = field.rhs(cycle.anchor_state, p, 0.0, 0.0)
    z0 = z0 * (omega / (z0 @ F0))

    i0 = np.real_if_close(W[:, np.argmin(np.abs(lamL - np.exp(kap1 * T)))]).astype(float)

    ts = THETA_GRID / (2.0 * np.pi) * T

    def orbit_state(t):
        return np.asarray(dense(float(np.mod(t, T))))

    def sweep(w_end, shift):
        # integrate dw/dt = (shift*Id - J^T) w backward over one period
        sol = solve_ivp(lambda t, w: shift * w - field.jac(orbit_state(t), p, t).T @ w,
                        (T, 0.0), w_end, method="RK45", rtol=opts.rtol,
                        atol=opts.atol, dense_output=True)
        if not sol.success:
            raise AdjointConvergenceError("adjoint backward integration failed")
        return sol

    # --- phase response curve ---
    w = z0.copy()
    prev = None
    for _ in range(max_sweeps):
        sol = sweep(w, 0.0)
        w = sol.y[:, -1]
        w = w * (omega / (w @ F0))
        curve = sol.sol(ts).T
        if prev is not None and np.max(np.abs(curve - prev)) < tol * max(1.0, np.max(np.abs(curve))):
            break
        prev = curve
    else:
        raise AdjointConvergenceError("PRC sweeps did not converge")
    cycle.prc = curve

    # --- isostable response curve ---
    w = i0 / np.linalg.norm(i0)
    prev = None
    for _ in range(max_sweeps):
        sol = sweep(w, kap1)
        w = sol.y[:, -1]
        # project out the phase-adjoint contamination (I . F = 0 on the orbit)
        w = w - (w @ F0) / omega * z0
        w = w / np.linalg.norm(w)
        curve = sol.sol(ts).T
        if prev is not None and np.max(np.abs(curve - prev)) < tol * max(1.0, np.max(np.abs(curve))):
            break
        prev = curve
    else:
        raise AdjointConvergenceError("IRC sweeps did not converge")
    if cycle.g1 is None:
        monodromy_floquet(cycle, field, opts)
    scale = curve[0] @ cycle.g1[0]
    if abs(scale) < 1e-14:
        raise AdjointConvergenceError("I(0) . g1(0) vanishes; cannot fix gauge")
    cycle.irc = curve / scale
    return cycle


@dataclass
class EntrainedOrbit:
    period: float
    t: np.ndarray                # samples over one entrainment period, t in [0, T_ext)
    x: np.ndarray                # (len(t), dim)
    n_periods_to_converge: int
    theta: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    dense: Optional[Callable] = None

    def state_at(self, t):
        return self.dense(np.mod(t, self.period))


def compute_entrained_orbit(field: VectorField, p: float,
                            waveform: Callable[[float], float], T_ext: float,
                            x0: Optional[np.ndarray] = None,
                            opts: Optional[IntegratorOptions] = None,
                            tol: float = 1e-7, max_periods: int = 500,
                            n_samples: int = 512) -> EntrainedOrbit:
    """Simulate under a T_ext-periodic waveform until period-to-period convergence."""
    opts = opts or IntegratorOptions()
    if x0 is None:
        x0 = np.ones(field.dimension)
    probe = np.linspace(0.0, T_ext, 64, endpoint=False)
    x = np.asarray(x0, dtype=float)
    prev = None
    for k in range(max_periods):
        traj = integrate(field, x, p, waveform, (0.0, T_ext), opts)
        cur = traj.dense(probe).T
        x = traj.x[-1]
        if prev is not None and np.max(np.abs(cur - prev)) < tol:
            ts = np.linspace(0.0, T_ext, n_samples, endpoint=False)
            final = integrate(field, x, p, waveform, (0.0, T_ext), opts)
            return EntrainedOrbit(period=T_ext, t=ts, x=final.dense(ts).T,
                                  n_periods_to_converge=k + 1, dense=final.dense)
        prev = cur
    raise NotEntrainedError(f"no entrainment after {max_periods} periods "
                            f"(last period-to-period delta {np.max(np.abs(cur - prev)):.3g})")
