"""Parameter-indexed family of reduced-model terms and its interpolation.

A :class:`ReductionFamily` holds, over a grid of the scalar nominal
parameter p: the frequency omega(p), the slow decay rate kappa(p), and the
theta-periodic curves z, i, D, Q (input and parameter sensitivities of
phase and amplitude).  Curves are stored as truncated Fourier coefficients
so that theta-derivatives are exact and evaluation is cheap; interpolation
across p is cubic, with the analytic spline derivative supplying the
partial-in-p terms needed by the costate equations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import (N_THETA, THETA_GRID, IntegratorOptions, LimitCycle,
                       PoincareEvent, VectorField, adjoint_response_curves,
                       find_limit_cycle, monodromy_floquet)

CURVE_NAMES = ("z", "i", "D", "Q")


class FamilyInvalidError(RuntimeError):
    pass


class GridHoleError(RuntimeError):
    pass


def fourier_coeffs(samples: np.ndarray, nharm: int) -> np.ndarray:
    """Truncated rfft coefficients of a real periodic curve sampled uniformly.

    Convention: f(theta) = c[0].real + 2 Re sum_{k>=1} c[k] exp(i k theta).
    """
    n = len(samples)
    c = np.fft.rfft(samples) / n
    return c[:nharm + 1]


def fourier_eval(c: np.ndarray, theta, d: int = 0):
    """Evaluate the Fourier series (or its d-th theta-derivative)."""
    k = np.arange(len(c))
    ck = c * (1j * k) ** d
    theta = np.asarray(theta, dtype=float)
    e = np.exp(1j * np.outer(theta, k)) if theta.ndim else np.exp(1j * k * theta)
    return np.real(ck[0]) + 2.0 * np.real(e[..., 1:] @ ck[1:])


def fit_fourier(theta_pts: np.ndarray, values: np.ndarray, order: int = 3):
    """OLS fit of sum_{n<=order} [a_n sin + b_n cos](n theta); returns coeffs
    in the rfft convention plus the fit residual RMS."""
    cols = [np.ones_like(theta_pts)]
    for n in range(1, order + 1):
        cols.append(np.sin(n * theta_pts))
        cols.append(np.cos(n * theta_pts))
    X = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(X, values, rcond=None)
    resid = values - X @ beta
    c = np.zeros(order + 1, dtype=complex)
    c[0] = beta[0]
    for n in range(1, order + 1):
        a_n, b_n = beta[2 * n - 1], beta[2 * n]
        c[n] = 0.5 * (b_n - 1j * a_n)
    return c, float(np.sqrt(np.mean(resid ** 2)))


@dataclass
class PCurve:
    """One theta-periodic curve known on its own p grid."""
    p_grid: np.ndarray
    coeffs: np.ndarray  # (n_p, nharm+1) complex

    def __post_init__(self):
        self.p_grid = np.asarray(self.p_grid, dtype=float)
        if len(self.p_grid) >= 2:
            self._sp = CubicSpline(self.p_grid, self.coeffs, axis=0)
            self._dsp = self._sp.derivative()
        else:
            self._sp = self._dsp = None

    def coeff_at(self, p: float, dp: int = 0) -> np.ndarray:
        if self._sp is None:
            return np.zeros_like(self.coeffs[0]) if dp else self.coeffs[0]
        return (self._dsp if dp else self._sp)(p)

    def __call__(self, theta, p: float, dtheta: int = 0, dp: int = 0):
        return fourier_eval(self.coeff_at(p, dp), theta, d=dtheta)


@dataclass
class ScalarOverP:
    p_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.p_grid = np.asarray(self.p_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.p_grid) >= 2:
            self._sp = CubicSpline(self.p_grid, self.values)
            self._dsp = self._sp.derivative()
        else:
            self._sp = self._dsp = None

    def __call__(self, p, dp: int = 0):
        if self._sp is None:
            return 0.0 if dp else float(self.values[0])
        return float((self._dsp if dp else self._sp)(p))


@dataclass
class ReductionFamily:
    """Interpolated surfaces omega(p), kappa(p), z, i, D, Q(theta, p)."""

    omega: ScalarOverP
    kappa: ScalarOverP
    curves: dict[str, PCurve]
    provenance: str = "adjoint"
    q_floor_frac: float = 1e-3
    # optional trust-region restriction inside the grid hull, for data-driven
    # families whose outer fits anchor the interpolation but are not
    # themselves trustworthy operating points
    hull_clip: Optional[tuple] = None
    # state-space payload, present for adjoint-built families
    p_grid: Optional[np.ndarray] = None
    orbits: Optional[np.ndarray] = None     # (n_p, N_THETA, dim)
    g1s: Optional[np.ndarray] = None
    prcs: Optional[np.ndarray] = None
    ircs: Optional[np.ndarray] = None
    observable_orbits: Optional[dict] = None  # data-driven payload
    diagnostics: dict = dc_field(default_factory=dict)

    # -- scalar terms ------------------------------------------------------
    def omega_p(self, p):
        return self.omega(p, dp=1)

    def kappa_p(self, p):
        return self.kappa(p, dp=1)

    # -- curve evaluation --------------------------------------------------
    def eval(self, name: str, theta, p: float, dtheta: int = 0, dp: int = 0):
        return self.curves[name](theta, p, dtheta=dtheta, dp=dp)

    def _setup_fast_terms(self):
        """Group curves sharing a p grid into stacked coefficient splines so
        one interpolation call serves several curves at once."""
        groups = []
        for name in CURVE_NAMES:
            cv = self.curves[name]
            placed = False
            for g in groups:
                ref = self.curves[g[0]].p_grid
                if len(ref) == len(cv.p_grid) and np.array_equal(ref, cv.p_grid):
                    g.append(name)
                    placed = True
                    break
            if not placed:
                groups.append([name])
        self._fast_groups = []
        for g in groups:
            grid = self.curves[g[0]].p_grid
            nh = max(self.curves[n].coeffs.shape[1] for n in g)
            C = np.zeros((len(grid), len(g), nh), dtype=complex)
            for j, n in enumerate(g):
                cj = self.curves[n].coeffs
                C[:, j, :cj.shape[1]] = cj
            if len(grid) >= 2:
                sp = CubicSpline(grid, C, axis=0)
                self._fast_groups.append((g, sp, sp.derivative(), C[0]))
            else:
                self._fast_groups.append((g, None, None, C[0]))

    def terms(self, theta: float, p: float) -> dict:
        """All curve values and first derivatives at one (theta, p) point."""
        if not hasattr(self, "_fast_groups"):
            self._setup_fast_terms()
        out = {}
        for names, sp, dsp, c0 in self._fast_groups:
            if sp is None:
                c, cp = c0, np.zeros_like(c0)
            else:
                c, cp = sp(p), dsp(p)
            k = np.arange(c.shape[1])
            e = np.exp(1j * k[1:] * theta)
            vals = c[:, 0].real + 2.0 * np.real(c[:, 1:] @ e)
            valt = 2.0 * np.real((c[:, 1:] * (1j * k[1:])) @ e)
            valp = cp[:, 0].real + 2.0 * np.real(cp[:, 1:] @ e)
            for j, name in enumerate(names):
                out[name] = float(vals[j])
                out[name + "_t"] = float(valt[j])
                out[name + "_p"] = float(valp[j])
        q = out["Q"]
        out["R"] = out["i"] / q
        out["R_t"] = (out["i_t"] * q - out["i"] * out["Q_t"]) / q ** 2
        out["R_p"] = (out["i_p"] * q - out["i"] * out["Q_p"]) / q ** 2
        return out

    @property
    def hull(self) -> tuple[float, float]:
        if not hasattr(self, "_hull"):
            grids = [cv.p_grid for cv in self.curves.values()] + [self.omega.p_grid]
            lo = max(float(g[0]) for g in grids)
            hi = min(float(g[-1]) for g in grids)
            if self.hull_clip is not None:
                clo, chi = self.hull_clip
                if clo is not None:
                    lo = max(lo, float(clo))
                if chi is not None:
                    hi = min(hi, float(chi))
            self._hull = (lo, hi)
        return self._hull

    def clamp_p(self, p: float) -> float:
        lo, hi = self.hull
        return min(max(p, lo), hi)

    def check_q_floor(self):
        """Reject the family when |Q| dips below the configured floor.

        Scanned over the usable hull, not just the fit grid: interpolated
        coefficients can cross zero between grid points.
        """
        worst = (None, np.inf)
        qmax = 0.0
        cv = self.curves["Q"]
        lo, hi = self.hull
        ps = np.unique(np.concatenate([
            np.linspace(lo, hi, 41),
            cv.p_grid[(cv.p_grid >= lo) & (cv.p_grid <= hi)]]))
        for p in ps:
            vals = np.abs(np.array([cv(th, float(p)) for th in THETA_GRID]))
            qmax = max(qmax, vals.max())
            k = int(np.argmin(vals))
            if vals[k] < worst[1]:
                worst = ((THETA_GRID[k], float(p)), vals[k])
        nu = self.q_floor_frac * qmax
        if worst[1] <= nu:
            (th, p), v = worst
            raise FamilyInvalidError(
                f"|Q| = {v:.3g} at (theta={th:.3f}, p={p:.4g}) is below floor {nu:.3g}")
        self.diagnostics["q_floor"] = nu
        self.diagnostics["q_min"] = worst[1]

    # -- serialization -----------------------------------------------------
    def to_json(self) -> str:
        def carr(c):
            return {"re": np.real(c).tolist(), "im": np.imag(c).tolist()}
        doc = {
            "schema": "reentrain.reduction_family/1",
            "provenance": self.provenance,
            "omega": {"p": self.omega.p_grid.tolist(), "v": self.omega.values.tolist()},
            "kappa": {"p": self.kappa.p_grid.tolist(), "v": self.kappa.values.tolist()},
            "curves": {name: {"p": cv.p_grid.tolist(), "coeffs": carr(cv.coeffs)}
                       for name, cv in self.curves.items()},
            "q_floor_frac": self.q_floor_frac,
            "hull_clip": list(self.hull_clip) if self.hull_clip else None,
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str, bool))},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ReductionFamily":
        doc = json.loads(text)
        if doc.get("schema") != "reentrain.reduction_family/1":
            raise ValueError("unrecognized family schema")
        curves = {}
        for name, c in doc["curves"].items():
            coeffs = np.array(c["coeffs"]["re"]) + 1j * np.array(c["coeffs"]["im"])
            curves[name] = PCurve(np.array(c["p"]), coeffs)
        fam = cls(omega=ScalarOverP(np.array(doc["omega"]["p"]), np.array(doc["omega"]["v"])),
                  kappa=ScalarOverP(np.array(doc["kappa"]["p"]), np.array(doc["kappa"]["v"])),
                  curves=curves, provenance=doc["provenance"],
                  q_floor_frac=doc["q_floor_frac"],
                  hull_clip=(tuple(doc["hull_clip"])
                             if doc.get("hull_clip") else None))
        fam.diagnostics.update(doc.get("diagnostics", {}))
        return fam


def build_family(field: VectorField, p_grid, nharm: int = 24,
                 opts: Optional[IntegratorOptions] = None,
                 guess: Optional[np.ndarray] = None,
                 dp_frac: float = 1e-3,
                 q_floor_frac: float = 1e-3) -> ReductionFamily:
    """Construct the reduction family from the model equations.

    Per grid point: converge the orbit, Floquet-analyze it, solve the adjoint
    equations, and build the parameter sensitivities D, Q from a central
    difference of anchor-aligned neighboring orbits.
    """
    opts = opts or IntegratorOptions()
    p_grid = np.asarray(p_grid, dtype=float)
    if len(p_grid) >= 2:
        dp = dp_frac * np.min(np.diff(p_grid))
    else:
        dp = dp_frac * max(1.0, abs(p_grid[0]))

    omegas, kappas = [], []
    coeffs = {name: [] for name in CURVE_NAMES}
    orbits, g1s, prcs, ircs = [], [], [], []
    x_guess = guess if guess is not None else np.ones(field.dimension)

    for p in p_grid:
        try:
            lc = find_limit_cycle(field, p, x_guess, opts=opts)
            monodromy_floquet(lc, field, opts)
            adjoint_response_curves(lc, field, opts)
            lo = find_limit_cycle(field, p - dp, lc.anchor_state, opts=opts)
            hi = find_limit_cycle(field, p + dp, lc.anchor_state, opts=opts)
        except RuntimeError as exc:
            raise GridHoleError(f"no valid reduction at p = {p:.6g}: {exc}") from exc
        x_guess = lc.anchor_state

        # Eq-style orbit sensitivity: d(Delta x_p)/dp = (x_{p-dp} - x_{p+dp}) / (2 dp),
        # compared at equal theta after anchor alignment.
        dxdp = (lo.samples - hi.samples) / (2.0 * dp)
        D = np.einsum("kd,kd->k", lc.prc, dxdp)
        Q = np.einsum("kd,kd->k", lc.irc, dxdp)
        z = lc.prc @ field.delta
        i_curve = lc.irc @ field.delta

        omegas.append(lc.omega)
        kappas.append(lc.kappa)
        for name, vals in (("z", z), ("i", i_curve), ("D", D), ("Q", Q)):
            coeffs[name].append(fourier_coeffs(vals, nharm))
        orbits.append(lc.samples)
        g1s.append(lc.g1)
        prcs.append(lc.prc)
        ircs.append(lc.irc)

    curves = {name: PCurve(p_grid, np.array(coeffs[name])) for name in CURVE_NAMES}
    fam = ReductionFamily(
        omega=ScalarOverP(p_grid, np.array(omegas)),
        kappa=ScalarOverP(p_grid, np.array(kappas)),
        curves=curves, provenance="adjoint", q_floor_frac=q_floor_frac,
        p_grid=p_grid, orbits=np.array(orbits), g1s=np.array(g1s),
        prcs=np.array(prcs), ircs=np.array(ircs))
    fam.check_q_floor()
    return fam
