"""Scaled population processes X^K = Z^K / K and their limits: deterministic
growth ODEs, the logistic Feller diffusion, and the random-environment
logistic diffusion with its explicit pathwise solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import bd
from .kernel import RngStream, intensity_generator


# ---------------------------------------------------------------------------
# Deterministic limit
# ---------------------------------------------------------------------------

def integrate_limit_ode(lam: Callable[[float], float], mu: Callable[[float], float],
                        x0: float, horizon: float, step: float) -> tuple[np.ndarray, np.ndarray]:
    """RK4 solution of x'(t) = x(t) * (lam(x) - mu(x)) on a fixed grid."""
    if step <= 0:
        raise ValueError("step must be > 0")
    n = int(round(horizon / step))
    ts = np.linspace(0.0, n * step, n + 1)
    xs = np.empty(n + 1)
    xs[0] = x0

    def f(x):
        return x * (lam(x) - mu(x))

    x = float(x0)
    for k in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * step * k1)
        k3 = f(x + 0.5 * step * k2)
        k4 = f(x + step * k3)
        x = x + step * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        xs[k + 1] = x
    return ts, xs


def logistic_carrying_capacity(lam: float, mu: float, c: float) -> float:
    """Stable equilibrium (lam - mu)/c of the logistic growth equation."""
    if c <= 0:
        raise ValueError("c must be > 0")
    return (lam - mu) / c


# ---------------------------------------------------------------------------
# Logistic Feller diffusion
# ---------------------------------------------------------------------------

@dataclass
class DiffusionPath:
    times: np.ndarray
    values: np.ndarray
    absorption_time: float | None = None

    def value_at(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right") - 1
        return float(self.values[max(i, 0)])


def simulate_logistic_feller(gamma: float, lam: float, mu: float, c: float,
                             x0: float, horizon: float, step: float,
                             rng: RngStream | np.random.Generator) -> DiffusionPath:
    """Euler-Maruyama for dX = X(lam - mu - cX) dt + sqrt(2 gamma X) dB with
    full-truncation square root and exact freezing at 0."""
    values = logistic_feller_batch(gamma, lam, mu, c, x0, horizon, step, 1, rng)
    n = values.shape[1] - 1
    ts = np.linspace(0.0, n * step, n + 1)
    vals = values[0]
    abs_idx = np.nonzero(vals == 0.0)[0]
    t_abs = float(ts[abs_idx[0]]) if abs_idx.size and x0 > 0 else None
    return DiffusionPath(times=ts, values=vals, absorption_time=t_abs)


def logistic_feller_batch(gamma: float, lam: float, mu: float, c: float,
                          x0: float, horizon: float, step: float, n_rep: int,
                          rng: RngStream | np.random.Generator) -> np.ndarray:
    """Vectorized Euler-Maruyama; returns values of shape (n_rep, n_steps+1)."""
    if gamma < 0 or c < 0:
        raise ValueError("gamma and c must be >= 0")
    if step <= 0:
        raise ValueError("step must be > 0")
    gen = intensity_generator(rng)
    n = int(round(horizon / step))
    x = np.full(n_rep, float(x0))
    out = np.empty((n_rep, n + 1))
    out[:, 0] = x
    sqdt = math.sqrt(step)
    for k in range(n):
        alive = x > 0.0
        drift = x * (lam - mu - c * x)
        noise = np.sqrt(2.0 * gamma * np.maximum(x, 0.0)) * gen.standard_normal(n_rep)
        x = np.where(alive, x + drift * step + noise * sqdt, 0.0)
        x = np.where(x <= 0.0, 0.0, x)  # absorbed states freeze at exactly 0
        out[:, k + 1] = x
    return out


# ---------------------------------------------------------------------------
# Scaled birth-death families and the convergence harness
# ---------------------------------------------------------------------------

def scaled_bd_spec(lam_pc: Callable[[np.ndarray], np.ndarray],
                   mu_pc: Callable[[np.ndarray], np.ndarray],
                   K: int, lam_bar: float, mu_bar: float) -> bd.RateSpec:
    """Rates lam_K(n) = n*lam(n/K), mu_K(n) = n*mu(n/K) for the K-scaled chain."""
    def lamf(n):
        n = np.asarray(n, dtype=float)
        return n * lam_pc(n / K)

    def muf(n):
        n = np.asarray(n, dtype=float)
        return n * mu_pc(n / K)

    return bd.RateSpec(lam=lamf, mu=muf, lam_bar=lam_bar,
                       mu_bar=mu_bar, name=f"scaled(K={K})")


def accelerated_bd_spec(gamma: float, lam: float, mu: float, c: float, K: int) -> bd.RateSpec:
    """Accelerated rates lam_K(n) = n(gamma*K + lam), mu_K(n) = n(gamma*K + mu + c*n/K)."""
    def lamf(n):
        n = np.asarray(n, dtype=float)
        return n * (gamma * K + lam)

    def muf(n):
        n = np.asarray(n, dtype=float)
        return n * (gamma * K + mu + c * n / K)

    return bd.RateSpec(lam=lamf, mu=muf, lam_bar=gamma * K + lam,
                       mu_bar=gamma * K + mu + c, name=f"accelerated(K={K})")


@dataclass
class ConvergenceRow:
    K: int
    distance: float
    stderr: float


def convergence_harness(lam_pc, mu_pc, lam_bar: float, mu_bar: float,
                        x0: float, horizon: float, Ks: Sequence[int],
                        n_rep: int, rng: RngStream, n_grid: int = 64,
                        accelerated: tuple[float, float, float, float] | None = None,
                        ode_step: float = 1e-3) -> list[ConvergenceRow]:
    """Monte-Carlo estimate of E sup_{t <= T} |X^K_t - x(t)| per K.

    The sup runs over the output grid (the true cadlag sup is not computable
    from finitely many samples).  When ``accelerated`` = (gamma, lam, mu, c)
    the chain uses the accelerated rates instead; the distances then stay
    bounded away from 0, which is the diffusive-limit signature.
    """
    _, x_ref = integrate_limit_ode(lambda x: float(lam_pc(np.array([x]))[0]),
                                   lambda x: float(mu_pc(np.array([x]))[0]),
                                   x0, horizon, ode_step)
    grid = np.linspace(0.0, horizon, n_grid + 1)
    ref = x_ref[np.round(grid / ode_step).astype(int)]
    rows = []
    for j, K in enumerate(Ks):
        if accelerated is None:
            spec = scaled_bd_spec(lam_pc, mu_pc, K, lam_bar, mu_bar)
        else:
            spec = accelerated_bd_spec(*accelerated, K)
        z0 = int(round(x0 * K))
        batch = bd.simulate_bd_batch(spec, z0, grid, n_rep, rng.substream(j))
        sups = np.max(np.abs(batch.states / K - ref[None, :]), axis=1)
        rows.append(ConvergenceRow(K=K, distance=float(np.mean(sups)),
                                   stderr=float(np.std(sups, ddof=1) / math.sqrt(n_rep))))
    return rows


# ---------------------------------------------------------------------------
# Random environment
# ---------------------------------------------------------------------------

@dataclass
class RandomEnvPaths:
    times: np.ndarray
    numeric: np.ndarray   # (n_rep, n+1) Euler-Maruyama
    exact: np.ndarray     # explicit solution evaluated on the same noise


def random_env_paths(r: float, c: float, sigma: float, y0: float, horizon: float,
                     step: float, rng: RngStream | np.random.Generator,
                     n_rep: int = 1) -> RandomEnvPaths:
    """Integrate dY = Y(r - cY) dt + sigma Y dW and evaluate the explicit
    solution Y_t = Y_0 E_t / (1 + c Y_0 int_0^t E_s ds), E_t = exp((r - sigma^2/2) t
    + sigma W_t), on the same Brownian increments.
    """
    if y0 <= 0:
        raise ValueError("y0 must be > 0")
    if step <= 0:
        raise ValueError("step must be > 0")
    gen = intensity_generator(rng)
    n = int(round(horizon / step))
    ts = np.linspace(0.0, n * step, n + 1)
    dW = gen.standard_normal((n_rep, n)) * math.sqrt(step)
    W = np.concatenate([np.zeros((n_rep, 1)), np.cumsum(dW, axis=1)], axis=1)

    E = np.exp((r - 0.5 * sigma * sigma) * ts[None, :] + sigma * W)
    I = np.concatenate([np.zeros((n_rep, 1)),
                        np.cumsum(0.5 * step * (E[:, 1:] + E[:, :-1]), axis=1)], axis=1)
    exact = y0 * E / (1.0 + c * y0 * I)

    numeric = np.empty((n_rep, n + 1))
    y = np.full(n_rep, float(y0))
    numeric[:, 0] = y
    for k in range(n):
        y = y + y * (r - c * y) * step + sigma * y * dW[:, k]
        y = np.maximum(y, 0.0)
        numeric[:, k + 1] = y
    return RandomEnvPaths(times=ts, numeric=numeric, exact=exact)


def stationary_gamma_params(r: float, c: float, sigma: float) -> tuple[float, float]:
    """Shape/scale of the stationary law when r - sigma^2/2 > 0:
    Gamma(2r/sigma^2 - 1, sigma^2/(2c))."""
    if r - 0.5 * sigma * sigma <= 0:
        raise ValueError("stationary law requires r > sigma^2 / 2")
    return 2.0 * r / sigma ** 2 - 1.0, sigma ** 2 / (2.0 * c)
