"""Simulators for the three reduced models, plus reduced-coordinate observers.

The adaptive model steers the nominal parameter p with
G_p = -R(theta,p) (u - p), which cancels the isostable forcing exactly, so
psi stays at zero and only (theta, p) are integrated.  The first-order model
keeps (theta, psi) at fixed p; the phase-only model keeps theta alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize

from .dynamics import N_THETA, THETA_GRID
from .family import ReductionFamily, fourier_eval


class OffManifoldWarning(UserWarning):
    pass


@dataclass
class ReducedTrajectory:
    t: np.ndarray
    theta: np.ndarray       # unwrapped
    p: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    clamped: bool = False
    dense: Optional[Callable] = None


def _const(u):
    if callable(u):
        return u
    return lambda t: float(u)


def simulate_adaptive(family: ReductionFamily, u, x0, span,
                      explicit_psi: bool = False, rtol: float = 1e-8,
                      atol: float = 1e-8, t_eval=None) -> ReducedTrajectory:
    """Integrate theta-dot = omega + z (u-p) - D R (u-p), p-dot = -R (u-p).

    With ``explicit_psi`` the eliminated psi equation
    psi-dot = kappa psi + i (u-p) + Q p-dot is integrated as well (it should
    stay at zero; used as a consistency probe).
    """
    u = _const(u)
    lo, hi = family.hull
    clamped = [False]

    def rhs(t, y):
        theta, p = y[0], y[1]
        pc = min(max(p, lo), hi)
        if pc != p:
            clamped[0] = True
        tm = family.terms(theta, pc)
        v = u(t) - p
        dtheta = family.omega(pc) + tm["z"] * v - tm["D"] * tm["R"] * v
        dp = -tm["R"] * v
        if explicit_psi:
            dpsi = family.kappa(pc) * y[2] + tm["i"] * v + tm["Q"] * dp
            return [dtheta, dp, dpsi]
        return [dtheta, dp]

    y0 = list(x0) if explicit_psi else list(x0[:2])
    sol = solve_ivp(rhs, span, y0, method="RK45", rtol=rtol, atol=atol,
                    dense_output=True, t_eval=t_eval)
    if not sol.success:
        raise RuntimeError(f"adaptive reduced integration failed: {sol.message}")
    return ReducedTrajectory(t=sol.t, theta=sol.y[0], p=sol.y[1],
                             psi=sol.y[2] if explicit_psi else None,
                             clamped=clamped[0], dense=sol.sol)


def simulate_first_order(family: ReductionFamily, p0: float, u, x0, span,
                         rtol: float = 1e-8, atol: float = 1e-8,
                         t_eval=None) -> ReducedTrajectory:
    """theta-dot = omega + z(theta) u, psi-dot = kappa psi + i(theta) u at fixed p0."""
    u = _const(u)
    om, kap = family.omega(p0), family.kappa(p0)
    zc = family.curves["z"].coeff_at(p0)
    ic = family.curves["i"].coeff_at(p0)

    def rhs(t, y):
        theta, psi = y
        ut = u(t)
        return [om + fourier_eval(zc, theta) * ut,
                kap * psi + fourier_eval(ic, theta) * ut]

    sol = solve_ivp(rhs, span, list(x0), method="RK45", rtol=rtol, atol=atol,
                    dense_output=True, t_eval=t_eval)
    if not sol.success:
        raise RuntimeError(f"first-order reduced integration failed: {sol.message}")
    return ReducedTrajectory(t=sol.t, theta=sol.y[0], psi=sol.y[1], dense=sol.sol)


def simulate_phase_only(family: ReductionFamily, p0: float, u, theta0, span,
                        rtol: float = 1e-8, atol: float = 1e-8,
                        t_eval=None) -> ReducedTrajectory:
    u = _const(u)
    om = family.omega(p0)
    zc = family.curves["z"].coeff_at(p0)

    def rhs(t, y):
        return [om + fourier_eval(zc, y[0]) * u(t)]

    sol = solve_ivp(rhs, span, [theta0], method="RK45", rtol=rtol, atol=atol,
                    dense_output=True, t_eval=t_eval)
    if not sol.success:
        raise RuntimeError(f"phase-only reduced integration failed: {sol.message}")
    return ReducedTrajectory(t=sol.t, theta=sol.y[0], dense=sol.sol)


# --- observers --------------------------------------------------------------

def _orbit_interp(family: ReductionFamily):
    grid = np.append(THETA_GRID, 2.0 * np.pi)

    def closed(arr):
        return np.concatenate([arr, arr[:, :1]], axis=1)

    orb = CubicSpline(family.p_grid, closed(family.orbits), axis=0)
    g1 = CubicSpline(family.p_grid, closed(family.g1s), axis=0)
    irc = CubicSpline(family.p_grid, closed(family.ircs), axis=0)

    def at(theta, p, which):
        sp = {"orbit": orb, "g1": g1, "irc": irc}[which]
        sheet = sp(p)  # (N_THETA+1, dim)
        th = np.mod(theta, 2.0 * np.pi)
        return CubicSpline(grid, sheet, axis=0, bc_type="periodic")(th)

    return at


def reduced_observer(family: ReductionFamily, x: np.ndarray,
                     distance_threshold: float = 0.25):
    """Project a full-model state onto the orbit family: returns (theta, psi, p).

    Nearest-point projection over the x^gamma_p surface gives (theta, p);
    psi is the isostable readout of the residual.  Emits OffManifoldWarning
    when the residual distance is above ``distance_threshold``.
    """
    if family.orbits is None:
        raise ValueError("observer requires a family with state-space orbit data")
    x = np.asarray(x, dtype=float)
    at = _orbit_interp(family)
    lo, hi = float(family.p_grid[0]), float(family.p_grid[-1])

    # coarse grid search
    dists = np.linalg.norm(family.orbits - x[None, None, :], axis=2)
    j, k = np.unravel_index(np.argmin(dists), dists.shape)
    th0, p0 = THETA_GRID[k], family.p_grid[j]

    def obj(v):
        th, p = v
        p = min(max(p, lo), hi)
        return float(np.sum((x - at(th, p, "orbit")) ** 2))

    res = minimize(obj, [th0, p0], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-18, "maxiter": 400})
    theta, p = float(np.mod(res.x[0], 2.0 * np.pi)), float(np.clip(res.x[1], lo, hi))
    resid = x - at(theta, p, "orbit")
    psi = float(at(theta, p, "irc") @ resid)
    if np.linalg.norm(resid) > distance_threshold:
        warnings.warn(f"state is {np.linalg.norm(resid):.3g} from the orbit family",
                      OffManifoldWarning)
    return theta, psi, p


# --- reduced entrained orbits ----------------------------------------------

@dataclass
class EntrainedReduced:
    """Periodic reduced-coordinate readout of the entrained solution.

    ``theta(t)`` is unwrapped (advances by 2 pi per period); the auxiliary
    coordinate is p for the adaptive model, psi for the first-order model.
    """
    T_ext: float
    _theta0: float
    _theta_dev: CubicSpline   # periodic spline of theta(t) - 2 pi t / T_ext
    _aux: Optional[CubicSpline]
    formulation: str = "adaptive"
    n_periods: int = 0

    def theta(self, t):
        tm = np.mod(t, self.T_ext)
        return self._theta_dev(tm) + 2.0 * np.pi * np.asarray(t) / self.T_ext

    def aux(self, t):
        if self._aux is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return self._aux(np.mod(t, self.T_ext))


def entrained_reduced_orbit(family: ReductionFamily, u_nom, T_ext: float,
                            formulation: str = "adaptive", p0: float = 0.0,
                            theta0: float = 0.0, tol: float = 1e-7,
                            max_periods: int = 400) -> EntrainedReduced:
    """Run the chosen reduced model under the periodic waveform until it locks.

    Convergence: period-to-period sup difference of (wrapped theta - drive
    phase, aux) below ``tol``.
    """
    n_probe = 64
    probe = np.linspace(0.0, T_ext, n_probe, endpoint=False)

    if formulation == "adaptive":
        state = [theta0, p0]
    elif formulation == "first-order":
        state = [theta0, 0.0]
    elif formulation == "phase-only":
        state = [theta0]
    else:
        raise ValueError(f"unknown formulation {formulation!r}")

    prev = None
    block = 4  # periods per convergence check
    for k in range(0, max_periods, block):
        span = (0.0, block * T_ext)
        if formulation == "adaptive":
            tr = simulate_adaptive(family, u_nom, state, span, rtol=1e-10)
        elif formulation == "first-order":
            tr = simulate_first_order(family, p0, u_nom, state, span, rtol=1e-10)
        else:
            tr = simulate_phase_only(family, p0, u_nom, state[0], span, rtol=1e-10)
        last = tr.dense((block - 1) * T_ext + probe)
        theta_dev = last[0] - 2.0 * np.pi * probe / T_ext
        aux = last[1] if last.shape[0] > 1 else np.zeros(n_probe)
        cur = np.vstack([np.exp(1j * theta_dev).real, np.exp(1j * theta_dev).imag, aux])
        end = tr.dense(span[1])
        state = list(end) if formulation != "phase-only" else [float(end[0])]
        # keep theta small so relative integrator tolerance stays absolute
        state[0] = float(np.mod(state[0], 2.0 * np.pi))
        if prev is not None and np.max(np.abs(cur - prev)) < tol:
            # sample one converged period; shift time origin so that t is the
            # environmental time of the waveform (we integrated from phase 0 of u_nom)
            tgrid = np.linspace(0.0, T_ext, 257)
            if formulation == "adaptive":
                tr1 = simulate_adaptive(family, u_nom, state, (0.0, T_ext),
                                        t_eval=tgrid, rtol=1e-10)
                aux_vals = tr1.p
            elif formulation == "first-order":
                tr1 = simulate_first_order(family, p0, u_nom, state, (0.0, T_ext),
                                           t_eval=tgrid, rtol=1e-10)
                aux_vals = tr1.psi
            else:
                tr1 = simulate_phase_only(family, p0, u_nom, state[0], (0.0, T_ext),
                                          t_eval=tgrid, rtol=1e-10)
                aux_vals = np.zeros_like(tgrid)
            dev = tr1.theta - 2.0 * np.pi * tgrid / T_ext
            dev[-1] = dev[0]
            aux_vals = aux_vals.copy()
            aux_vals[-1] = aux_vals[0]
            return EntrainedReduced(
                T_ext=T_ext, _theta0=float(tr1.theta[0]),
                _theta_dev=CubicSpline(tgrid, dev, bc_type="periodic"),
                _aux=CubicSpline(tgrid, aux_vals, bc_type="periodic"),
                formulation=formulation, n_periods=k + block)
        prev = cur
    raise RuntimeError(f"reduced {formulation} model did not entrain to the waveform")
