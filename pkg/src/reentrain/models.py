"""Concrete circadian vector fields and light-input waveforms.

The single-cell model is a 3-variable gene-regulation oscillator (mRNA B,
protein C, nuclear protein D) with light entering additively in the B
equation.  The population model couples N such cells (plus a secreted
signal E per cell) through the mean field F = mean(E_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .dynamics import VectorField


def light_waveform(t_s, L0: float):
    """Smooth 24-hour light-dark cycle: ~L0 plateau between hours 6 and 18."""
    ts = np.mod(t_s, 24.0)
    return L0 * (1.0 / (1.0 + np.exp(-5.0 * (ts - 6.0)))
                 - 1.0 / (1.0 + np.exp(-5.0 * (ts - 18.0))))


# --- single-cell model ------------------------------------------------------

CIRCADIAN_PARAMS = dict(n=6, v1=0.84, v2=0.42, v4=0.35, v6=0.35,
                        K1=1.0, K2=1.0, K4=1.0, K6=1.0, k3=0.7, k5=0.7)


def circadian_field(**overrides) -> VectorField:
    """3-variable circadian oscillator; scalar parameter p is the constant
    light offset, scalar input u is additional light (both enter in B-dot)."""
    prm = dict(CIRCADIAN_PARAMS)
    prm.update(overrides)
    n, v1, v2, v4, v6 = prm["n"], prm["v1"], prm["v2"], prm["v4"], prm["v6"]
    K1, K2, K4, K6, k3, k5 = (prm["K1"], prm["K2"], prm["K4"], prm["K6"],
                              prm["k3"], prm["k5"])

    def rhs(x, p, t, u):
        B, C, D = x
        return np.array([
            v1 * K1**n / (K1**n + D**n) - v2 * B / (K2 + B) + p + u,
            k3 * B - v4 * C / (K4 + C),
            k5 * C - v6 * D / (K6 + D),
        ])

    def jac(x, p, t):
        B, C, D = x
        return np.array([
            [-v2 * K2 / (K2 + B) ** 2, 0.0,
             -v1 * K1**n * n * D ** (n - 1) / (K1**n + D**n) ** 2],
            [k3, -v4 * K4 / (K4 + C) ** 2, 0.0],
            [0.0, k5, -v6 * K6 / (K6 + D) ** 2],
        ])

    return VectorField(dimension=3, rhs=rhs, delta=np.array([1.0, 0.0, 0.0]),
                       jacobian=jac, name="circadian3d", anchor=("peak", 0))


# --- population model -------------------------------------------------------

POPULATION_PARAMS = dict(n=5, v1=0.868, v2=0.634, k3=0.7, v4=0.35, k5=0.7,
                         v6=0.35, k7=0.35, v8=1.0, K1=1.0, K2=1.0, K4=1.0,
                         K6=1.0, K8=1.0, h_c=1.0, K_c=1.0, K=0.5)
POPULATION_NOISE = 0.0002
HETEROGENEOUS = ("k3", "k5", "k7", "v4", "v6", "v8")


@dataclass
class PopulationModel:
    """N coupled circadian cells with mean-field coupling and per-cell
    light sensitivity alpha_i.  State layout: [B_1..B_N, C_1.., D_1.., E_1..]."""

    N: int
    seed: int = 0
    heterogeneity_sd: float = 0.01
    alpha_sd: float = 0.4
    params: dict = dc_field(default_factory=lambda: dict(POPULATION_PARAMS))
    coupling_scale: float = 1.0   # multiplies K; halved during the probe protocol

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        prm = self.params
        self.cell = {}
        for name in HETEROGENEOUS:
            if self.heterogeneity_sd == 0.0:
                self.cell[name] = np.full(self.N, prm[name])
            else:
                draws = rng.normal(prm[name], self.heterogeneity_sd, self.N)
                while np.any(draws <= 0.0):  # reject-and-redraw; keeps rates physical
                    bad = draws <= 0.0
                    draws[bad] = rng.normal(prm[name], self.heterogeneity_sd, bad.sum())
                self.cell[name] = draws
        if self.alpha_sd == 0.0:
            self.alpha = np.ones(self.N)
        else:
            self.alpha = np.maximum(1.0 + self.alpha_sd * rng.standard_normal(self.N), 0.0)

    def mean_field(self, x: np.ndarray) -> float:
        return float(np.mean(x[..., 3 * self.N:4 * self.N], axis=-1))

    def field(self) -> VectorField:
        N = self.N
        prm = self.params
        n, v1, v2 = prm["n"], prm["v1"], prm["v2"]
        K1, K2, K4, K6, K8 = prm["K1"], prm["K2"], prm["K4"], prm["K6"], prm["K8"]
        h_c, K_c = prm["h_c"], prm["K_c"]
        k3, k5, k7 = self.cell["k3"], self.cell["k5"], self.cell["k7"]
        v4, v6, v8 = self.cell["v4"], self.cell["v6"], self.cell["v8"]
        alpha = self.alpha
        model = self

        def rhs(x, p, t, u):
            B, C, D, E = x[:N], x[N:2 * N], x[2 * N:3 * N], x[3 * N:]
            K_eff = prm["K"] * model.coupling_scale
            KF = K_eff * np.mean(E)
            coupling = h_c * KF / (K_c + KF)
            dB = (v1 * K1**n / (K1**n + D**n) - v2 * B / (K2 + B)
                  + coupling + alpha * (p + u))
            dC = k3 * B - v4 * C / (K4 + C)
            dD = k5 * C - v6 * D / (K6 + D)
            dE = k7 * B - v8 * E / (K8 + E)
            return np.concatenate([dB, dC, dD, dE])

        delta = np.zeros(4 * N)
        delta[:N] = alpha
        noise_mask = np.zeros(4 * N)
        noise_mask[:N] = 1.0
        return VectorField(dimension=4 * N, rhs=rhs, delta=delta, jacobian=None,
                           name=f"population{N}", anchor=("crossing", 0, 0.045),
                           noise_sigma=noise_mask)

    def initial_state(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed + 1)
        base = np.array([0.6, 1.2, 1.4, 0.25])
        x0 = np.repeat(base, self.N) * (1.0 + 0.05 * rng.standard_normal(4 * self.N))
        return np.abs(x0)


def build_population(N: int, seed: int = 0, **kwargs) -> PopulationModel:
    if N < 1:
        raise ValueError("N must be >= 1")
    return PopulationModel(N=N, seed=seed, **kwargs)


def collective_observable(t: np.ndarray, x: np.ndarray, N: int,
                          threshold: float = 0.035):
    """Mean-field series F(t) and per-cell upward crossing times of E_i."""
    E = x[:, 3 * N:4 * N]
    F = E.mean(axis=1)
    events = []
    for i in range(N):
        s = E[:, i] - threshold
        idx = np.nonzero((s[:-1] < 0.0) & (s[1:] >= 0.0))[0]
        # linear interpolation of each crossing time
        tc = t[idx] + (t[idx + 1] - t[idx]) * (-s[idx]) / (s[idx + 1] - s[idx])
        events.append(tc)
    return F, events


# --- light schedule ---------------------------------------------------------

@dataclass
class LightSchedule:
    """Nominal light-dark drive with a time-zone shift at t0 and an optional
    control overlay, clipped to [L_min, L_max]."""

    L0: float = 0.01
    shift: float = 0.0
    t0: float = 0.0
    control: Optional[Callable[[float], float]] = None
    L_min: float = -np.inf
    L_max: float = np.inf

    def environmental_time(self, t):
        return np.where(np.asarray(t) <= self.t0, t, t + self.shift)

    def nominal(self, t):
        return light_waveform(self.environmental_time(t), self.L0)

    def __call__(self, t):
        total = self.nominal(t)
        if self.control is not None:
            total = total + self.control(t)
        return np.clip(total, self.L_min, self.L_max)
