"""Continuous-state branching processes: branching-mechanism calculus, the
Laplace-exponent ODE, long-time classification, and two independent simulators
(jump SDE and time-changed Levy path), plus discrete branching-process scaling
demos converging to these diffusions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .kernel import (DEFAULTS, JumpPart, JumpSdeSpec, MarkIntensity, RngStream,
                     SdePath, integrate_jump_sde, intensity_generator)


# ---------------------------------------------------------------------------
# Jump measures and mechanisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpMeasure:
    """Reproduction-jump measure on (0, inf): finite atoms or a stable density
    c * h^(-1-alpha) with alpha in (1, 2).  Both satisfy the first-moment
    condition int (h ^ h^2) mu(dh) < inf required for a conservative process.
    """

    kind: str                       # "none" | "atoms" | "stable"
    atoms: tuple[tuple[float, float], ...] = ()   # (size h_j, weight w_j)
    c: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "atoms", "stable"):
            raise ValueError(f"unknown jump measure kind {self.kind!r}")
        if self.kind == "stable":
            if not (1.0 < self.alpha < 2.0):
                raise ValueError("stable exponent must lie in (1, 2) for a conservative process")
            if self.c <= 0:
                raise ValueError("stable coefficient must be > 0")
        if self.kind == "atoms":
            for h, w in self.atoms:
                if h <= 0 or w < 0:
                    raise ValueError("atoms need h > 0 and weight >= 0")

    # -- truncated-band functionals (eps is ignored for finite measures) ----

    def mass_above(self, eps: float) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "atoms":
            return float(sum(w for _, w in self.atoms))
        return self.c * eps ** (-self.alpha) / self.alpha

    def mean_above(self, eps: float) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "atoms":
            return float(sum(w * h for h, w in self.atoms))
        return self.c * eps ** (1.0 - self.alpha) / (self.alpha - 1.0)

    def sampler_above(self, eps: float) -> Callable[[np.random.Generator, int], np.ndarray]:
        if self.kind == "atoms":
            hs = np.array([h for h, _ in self.atoms])
            ws = np.array([w for _, w in self.atoms])
            ps = ws / ws.sum()

            def sample_atoms(gen, n):
                return gen.choice(hs, size=n, p=ps)
            return sample_atoms
        if self.kind == "stable":
            alpha = self.alpha

            def sample_stable(gen, n):
                return eps * gen.uniform(size=n) ** (-1.0 / alpha)
            return sample_stable

        def sample_none(gen, n):
            return np.empty(0)
        return sample_none


@lru_cache(maxsize=None)
def _stable_unit_integral(alpha: float) -> float:
    """int_0^inf (e^-u - 1 + u) u^(-1-alpha) du by adaptive quadrature.

    On [0, 1] the u^2/2 Taylor term is split off analytically so the remaining
    integrand is O(u^(2-alpha)) and the quadrature sees no singularity.
    """
    def f_small(u):
        return (math.exp(-u) - 1.0 + u - 0.5 * u * u) * u ** (-1.0 - alpha)

    def f_big(u):
        return (math.exp(-u) - 1.0 + u) * u ** (-1.0 - alpha)

    tol = DEFAULTS["quad_rtol"]
    with warnings.catch_warnings():
        # roundoff chatter near machine precision; the explicit error check below governs
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        a, erra = integrate.quad(f_small, 0.0, 1.0, epsrel=tol, epsabs=1e-13, limit=200)
        b, errb = integrate.quad(f_big, 1.0, np.inf, epsrel=tol, epsabs=1e-13, limit=200)
    val = a + 0.5 / (2.0 - alpha) + b
    if val <= 0 or (erra + errb) > 100 * tol * val:
        raise RuntimeError(f"stable-part quadrature failed to converge: value={val}, err={erra + errb}")
    return val


@dataclass(frozen=True)
class BranchingMechanism:
    """Characteristic triplet (r, gamma, jump measure).

    psi(lam) = -r*lam + gamma*lam^2 + int (e^{-lam h} - 1 + lam h) mu(dh)
    is checked to be convex with psi(0) = 0 on a grid at construction.
    """

    r: float
    gamma: float
    jumps: JumpMeasure = field(default_factory=lambda: JumpMeasure("none"))

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        grid = np.linspace(0.0, 10.0, 41)
        vals = np.array([self.psi(l) for l in grid])
        if abs(vals[0]) > 1e-12:
            raise ValueError("psi(0) must be 0")
        second = np.diff(vals, 2)
        if np.any(second < -1e-8 * (1.0 + np.abs(vals[:-2]).max())):
            raise ValueError("psi fails convexity on the check grid")

    def psi(self, lam: float) -> float:
        """Branching mechanism evaluated at lam >= 0.

        The diffusion and atomic parts are exact; the stable part reduces by
        the substitution u = lam*h to a cached adaptive quadrature.
        """
        if lam < 0:
            raise ValueError("lam must be >= 0")
        val = -self.r * lam + self.gamma * lam * lam
        j = self.jumps
        if j.kind == "atoms":
            for h, w in j.atoms:
                val += w * (math.exp(-lam * h) - 1.0 + lam * h)
        elif j.kind == "stable":
            val += j.c * _stable_unit_integral(j.alpha) * lam ** j.alpha
        return val

    def psi_prime(self, lam: float) -> float:
        val = -self.r + 2.0 * self.gamma * lam
        j = self.jumps
        if j.kind == "atoms":
            for h, w in j.atoms:
                val += w * h * (1.0 - math.exp(-lam * h))
        elif j.kind == "stable":
            val += j.c * _stable_unit_integral(j.alpha) * j.alpha * lam ** (j.alpha - 1.0)
        return val


def psi(mech: BranchingMechanism, lam: float) -> float:
    return mech.psi(lam)


def feller_mechanism(r: float, gamma: float) -> BranchingMechanism:
    return BranchingMechanism(r=r, gamma=gamma)


def stable_mechanism(r: float, gamma: float, c: float, alpha: float) -> BranchingMechanism:
    return BranchingMechanism(r=r, gamma=gamma, jumps=JumpMeasure("stable", c=c, alpha=alpha))


def stable_psi_closed_form(c: float, alpha: float, lam: float) -> float:
    """Gamma-function constant for the stable integral, used as a cross-check:
    int (e^{-lam h}-1+lam h) c h^{-1-alpha} dh = c * Gamma(2-alpha)/(alpha(alpha-1)) * lam^alpha."""
    return c * math.gamma(2.0 - alpha) / (alpha * (alpha - 1.0)) * lam ** alpha


# ---------------------------------------------------------------------------
# Laplace exponent
# ---------------------------------------------------------------------------

@dataclass
class LaplaceExponent:
    t: float
    lam: float
    value: float
    converged_to_root: bool
    integral_identity_residual: float | None
    solver: str = "Radau"


def laplace_exponent(mech: BranchingMechanism, t: float, lam: float,
                     tol: float = 1e-10) -> LaplaceExponent:
    """Solve du/dt = -psi(u), u_0 = lam, with a stiff-safe integrator.

    When psi has no root between u_t and lam the integral identity
    int_{u_t}^{lam} dv/psi(v) = t is evaluated and its residual attached.
    Convergence of u_t toward a root of psi is reported as a flag, not a
    failure.
    """
    if t < 0 or lam <= 0:
        raise ValueError("need t >= 0 and lam > 0")
    if t == 0:
        return LaplaceExponent(t, lam, lam, False, 0.0)
    sol = integrate.solve_ivp(lambda s, u: [-mech.psi(max(u[0], 0.0))], (0.0, t), [lam],
                              method="Radau", rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise RuntimeError(f"Laplace-exponent ODE failed: {sol.message}")
    u = float(sol.y[0, -1])
    u = max(u, 0.0)

    eta = largest_psi_root(mech)
    near_root = abs(mech.psi(u)) < 1e-9 * (1.0 + abs(u))
    residual = None
    lo, hi = min(u, lam), max(u, lam)
    if hi > lo and not near_root and (lo > eta or hi < eta or eta == 0.0) and min(abs(mech.psi(lo)), abs(mech.psi(hi))) > 1e-12:
        try:
            val, _ = integrate.quad(lambda v: 1.0 / mech.psi(v), u, lam, epsrel=1e-9, limit=200)
            residual = abs(val - t)
        except Exception:
            residual = None
    return LaplaceExponent(t, lam, u, near_root, residual)


def laplace_exponent_at_infinity(mech: BranchingMechanism, t: float,
                                 tol: float = 1e-8) -> tuple[float, bool]:
    """u_t(inf) by escalating lam until the value stabilizes.

    Returns (value, stabilized).  Unstabilized means absorption by time t has
    probability zero.
    """
    prev = None
    for k in range(2, 18):
        u = laplace_exponent(mech, t, 10.0 ** k, tol=1e-9).value
        if prev is not None and abs(u - prev) <= tol * max(1.0, abs(u)):
            return u, True
        prev = u
    return prev, False


def largest_psi_root(mech: BranchingMechanism) -> float:
    """Largest root eta of psi on [0, inf).  Zero when r <= 0 (psi' at 0+ >= 0)."""
    if -mech.psi_prime(0.0) <= 0:
        return 0.0
    hi = 1.0
    for _ in range(200):
        if mech.psi(hi) > 0:
            break
        hi *= 2.0
    else:
        raise RuntimeError("could not bracket the root of psi below lam = 2^200")
    return float(optimize.brentq(mech.psi, 1e-300, hi, xtol=1e-14, rtol=1e-14))


@dataclass
class CsbpClassification:
    eta: float
    absorption_possible: bool
    blowup_possible: bool

    def extinction_prob(self, z: float) -> float:
        return math.exp(-self.eta * z)


def classify(mech: BranchingMechanism, tol: float = 1e-9) -> CsbpClassification:
    """Long-time classification: largest root of psi (extinction exponent),
    absorption possibility via the numeric tail integral of 1/psi, and the
    blow-up predicate (always false for conservative mechanisms, whose mean
    jump size is finite so psi'(0+) = -r stays finite)."""
    eta = largest_psi_root(mech)
    x0 = max(4.0 * eta, 1.0)
    blocks = []
    for k in range(24):
        a, b = x0 * 2.0 ** k, x0 * 2.0 ** (k + 1)
        val, _ = integrate.quad(lambda v: 1.0 / mech.psi(v), a, b, epsrel=1e-8, limit=100)
        blocks.append(val)
    blocks = np.array(blocks)
    ratios = blocks[-6:] / blocks[-7:-1]
    absorption = bool(np.all(ratios < 0.95))
    return CsbpClassification(eta=eta, absorption_possible=absorption,
                              blowup_possible=False)


def blowup_possible_general(psi_fn: Callable[[float], float]) -> bool:
    """Blow-up predicate for a general (possibly non-conservative) mechanism:
    psi'(0+) = -inf together with a convergent int_0 ds/psi(s).

    Only the analytic check is offered; no path simulation exists here for
    mechanisms with infinite mean jump size.
    """
    slopes = np.array([psi_fn(10.0 ** -k) / 10.0 ** -k for k in range(2, 14)])
    diverging_slope = (slopes[-1] < 0 and np.all(np.diff(slopes) < 0)
                       and slopes[-1] / slopes[0] > 100.0)
    if not diverging_slope:
        return False
    blocks = []
    for k in range(6, 30):
        a, b = 2.0 ** -(k + 1), 2.0 ** -k
        val, _ = integrate.quad(lambda v: 1.0 / psi_fn(v), a, b, epsrel=1e-8, limit=100)
        blocks.append(abs(val))
    blocks = np.array(blocks)
    return bool(np.all(blocks[1:] / blocks[:-1] < 0.95))


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------

def csbp_sde_spec(mech: BranchingMechanism, eps: float) -> JumpSdeSpec:
    """Jump-SDE description: drift r z, diffusion sqrt(2 gamma z), jumps at
    state-proportional rate z * mu(> eps) with the retained band compensated
    in the drift."""
    parts: tuple[JumpPart, ...] = ()
    j = mech.jumps
    if j.kind != "none":
        mass = j.mass_above(eps)
        mean = j.mean_above(eps)
        if mass > 0:
            parts = (JumpPart(
                intensity=MarkIntensity(mass, j.sampler_above(eps), label="reproduction jumps"),
                kernel=lambda z, h: h,
                state_rate=lambda z: max(z, 0.0),
                compensated=True,
                mean_jump=lambda z: mean,
            ),)
    gamma = mech.gamma
    return JumpSdeSpec(
        drift=lambda z: mech.r * z,
        diffusion=lambda z: math.sqrt(2.0 * gamma * max(z, 0.0)),
        jumps=parts,
        absorb_at_zero=True,
    )


def simulate_csbp_sde(mech: BranchingMechanism, z0: float, horizon: float, step: float,
                      eps: float, rng: RngStream | np.random.Generator) -> SdePath:
    """Single path of the branching SDE via the shared jump-SDE integrator."""
    return integrate_jump_sde(csbp_sde_spec(mech, eps), z0, horizon, step, rng)


def csbp_sde_batch(mech: BranchingMechanism, z0: float, horizon: float, step: float,
                   eps: float, n_rep: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Vectorized Euler scheme with per-step Poisson jump counts; returns
    (n_rep, n_steps+1) values.  Same convergence class as the event-driven
    integrator (both first order in the jump-rate freeze per step)."""
    gen = intensity_generator(rng)
    j = mech.jumps
    mass = j.mass_above(eps)
    mean = j.mean_above(eps)
    sampler = j.sampler_above(eps)
    n = int(round(horizon / step))
    x = np.full(n_rep, float(z0))
    out = np.empty((n_rep, n + 1))
    out[:, 0] = x
    sqdt = math.sqrt(step)
    for k in range(n):
        pos = np.maximum(x, 0.0)
        drift = mech.r * x - mean * pos
        noise = np.sqrt(2.0 * mech.gamma * pos) * gen.standard_normal(n_rep)
        jump_tot = np.zeros(n_rep)
        if mass > 0:
            counts = gen.poisson(pos * mass * step)
            total = int(counts.sum())
            if total > 0:
                sizes = sampler(gen, total)
                ends = np.cumsum(counts)
                starts = ends - counts
                nz = counts > 0
                jump_tot[nz] = np.add.reduceat(sizes, starts[nz])
        x = x + drift * step + noise * sqdt + jump_tot
        x = np.where(x <= 0.0, 0.0, x)
        out[:, k + 1] = x
    return out


class _LevyPath:
    """Levy path y0 + (r - mean_eps) t + sqrt(2 gamma) B_t + truncated jumps,
    killed at its first grid crossing of 0, extendable on demand."""

    def __init__(self, mech: BranchingMechanism, y0: float, eps: float, step: float,
                 gen: np.random.Generator):
        self.mech = mech
        self.eps = eps
        self.step = step
        self.gen = gen
        j = mech.jumps
        self.mass = j.mass_above(eps)
        self.mean = j.mean_above(eps)
        self.sampler = j.sampler_above(eps)
        self.values = np.array([float(y0)])
        self.killed = y0 <= 0.0
        if self.killed:
            self.values[0] = 0.0

    def _extend(self, n_steps: int):
        gen, dt = self.gen, self.step
        drift = (self.mech.r - self.mean) * dt
        incr = drift + math.sqrt(2.0 * self.mech.gamma * dt) * gen.standard_normal(n_steps)
        if self.mass > 0:
            counts = gen.poisson(self.mass * dt, size=n_steps)
            total = int(counts.sum())
            if total > 0:
                sizes = self.sampler(gen, total)
                ends = np.cumsum(counts)
                starts = ends - counts
                nz = counts > 0
                jumps = np.zeros(n_steps)
                jumps[nz] = np.add.reduceat(sizes, starts[nz])
                incr = incr + jumps
        prev = self.values[-1]
        seg = prev + np.cumsum(incr)
        if self.killed:
            seg[:] = 0.0
        else:
            hit_idx = len(seg)
            crossed = np.nonzero(seg <= 0.0)[0]
            if crossed.size:
                hit_idx = int(crossed[0])
            if self.mech.gamma > 0:
                # Brownian-bridge correction: the path may dip below 0 inside a
                # cell even when both endpoints are positive
                left = np.concatenate([[prev], seg[:-1]])
                with np.errstate(over="ignore"):
                    p_cross = np.exp(-np.maximum(left, 0.0) * np.maximum(seg, 0.0)
                                     / (self.mech.gamma * dt))
                bridge = np.nonzero(gen.random(n_steps) < p_cross)[0]
                if bridge.size and bridge[0] < hit_idx:
                    hit_idx = int(bridge[0])
            if hit_idx < len(seg):
                seg[hit_idx:] = 0.0
                self.killed = True
        self.values = np.concatenate([self.values, seg])

    def value(self, s: float) -> float:
        idx = int(s / self.step)
        while idx >= len(self.values):
            self._extend(max(256, idx + 1 - len(self.values) + 64))
        return float(self.values[idx])


def simulate_csbp_lamperti(mech: BranchingMechanism, z0: float, horizon: float,
                           step: float, eps: float,
                           rng: RngStream | np.random.Generator) -> SdePath:
    """Time-change simulator: Z_t = Y(theta_t) with theta' = Z, Y the Levy path
    killed at 0.  The additive functional is accumulated by the trapezoid rule
    with recursive sub-stepping whenever Z moves by more than 10% in a step.
    """
    gen = intensity_generator(rng)
    floor = DEFAULTS["state_floor"]
    # the Levy grid is refined so at most ~0.1 truncated jumps land per cell,
    # keeping the piecewise-constant lookup bias below the time-change error
    mass = mech.jumps.mass_above(eps)
    levy_step = step if mass <= 0 else min(step, 0.1 / mass)
    levy = _LevyPath(mech, z0, eps, levy_step, gen)
    n = int(round(horizon / step))
    grid = np.linspace(0.0, n * step, n + 1)
    out = np.empty(n + 1)
    out[0] = max(z0, 0.0)
    theta = 0.0
    z = max(float(z0), 0.0)
    absorbed = z <= 0.0
    t_abs = 0.0 if absorbed else None

    def advance(theta, z, dt, depth=0):
        prop = levy.value(theta + z * dt)
        if depth < 10 and abs(prop - z) > 0.1 * max(z, 1e-6):
            theta, z = advance(theta, z, dt / 2.0, depth + 1)
            return advance(theta, z, dt / 2.0, depth + 1)
        theta2 = theta + 0.5 * dt * (z + prop)
        return theta2, levy.value(theta2)

    for k in range(n):
        if not absorbed:
            theta, z = advance(theta, z, step)
            if z <= floor:
                z, absorbed, t_abs = 0.0, True, grid[k + 1]
        out[k + 1] = z
    return SdePath(times=grid, values=out, absorbed=absorbed, absorption_time=t_abs)


# ---------------------------------------------------------------------------
# Discrete branching-process scaling
# ---------------------------------------------------------------------------

def binary_offspring_batch(x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Critical binary law {0: 1/2, 2: 1/2}: one binomial draw per replicate."""
    return 2 * gen.binomial(x, 0.5)


@dataclass(frozen=True)
class StableOffspring:
    """Critical heavy-tailed offspring law with generating function
    f(s) = s + c (1-s)^alpha, alpha in (1, 2), 0 < c <= 1/alpha.

    Tail probabilities satisfy q_0 = P(L > 0) = 1 - c, q_1 = c (alpha - 1) and
    q_k = q_{k-1} (k - alpha)/k, giving P(L > k) ~ k^-alpha.  The matching
    scaling limit has branching mechanism psi(lam) = c lam^alpha under the
    time scale v_K = K^(alpha-1).
    """

    c: float
    alpha: float
    table_size: int = 200_000

    def __post_init__(self):
        if not (1.0 < self.alpha < 2.0):
            raise ValueError("alpha must lie in (1, 2)")
        if not (0.0 < self.c <= 1.0 / self.alpha):
            raise ValueError("need 0 < c <= 1/alpha for a probability law")

    @property
    def tail_table(self) -> np.ndarray:
        if not hasattr(self, "_tail"):
            q = np.empty(self.table_size)
            q[0] = 1.0 - self.c
            q[1] = self.c * (self.alpha - 1.0)
            ks = np.arange(2, self.table_size, dtype=float)
            q[2:] = q[1] * np.cumprod((ks - self.alpha) / ks)
            object.__setattr__(self, "_tail", q)
        return self._tail

    def sample_counts(self, n: int, gen: np.random.Generator) -> np.ndarray:
        q = self.tail_table
        u = gen.uniform(size=n)
        asc = q[::-1]
        pos = np.searchsorted(asc, u, side="left")
        L = len(q) - pos
        deep = np.nonzero(L >= len(q))[0]
        for i in deep:  # rare tail beyond the table: continue the recursion
            k = len(q)
            qk = q[-1]
            while qk >= u[i]:
                qk *= (k - self.alpha) / k
                k += 1
            L[i] = k - 1
        return L

    def offspring_batch(self, x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        total = int(x.sum())
        if total == 0:
            return np.zeros_like(x)
        draws = self.sample_counts(total, gen)
        ends = np.cumsum(x)
        starts = ends - x
        out = np.zeros_like(x)
        nz = x > 0
        out[nz] = np.add.reduceat(draws, starts[nz])
        return out

    def limit_mechanism(self) -> BranchingMechanism:
        c_mu = self.c * self.alpha * (self.alpha - 1.0) / math.gamma(2.0 - self.alpha)
        return stable_mechanism(r=0.0, gamma=0.0, c=c_mu, alpha=self.alpha)


@dataclass
class GwScalingRow:
    K: int
    distance: float
    stderr: float


def gw_scaling_demo(offspring_batch, v_K: Callable[[int], float],
                    limit_u: Callable[[float, float], float],
                    x0: float, t: float, Ks: Sequence[int], n_rep: int,
                    rng: RngStream, lam_grid: Sequence[float] = (0.5, 1.0, 2.0)) -> list[GwScalingRow]:
    """Distance between discrete-branching marginal Laplace transforms
    Z^K_t = X_([v_K t])/K and the limiting exp(-x0 * u_t(lam)), per K."""
    rows = []
    for j, K in enumerate(Ks):
        gen = rng.substream(j).generator()
        n_gen = int(round(v_K(K) * t))
        x = np.full(n_rep, int(round(x0 * K)), dtype=np.int64)
        for _ in range(n_gen):
            x = offspring_batch(x, gen)
        z = x / K
        worst, worst_se = 0.0, 0.0
        for lam in lam_grid:
            vals = np.exp(-lam * z)
            est = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / math.sqrt(n_rep))
            d = abs(est - math.exp(-x0 * limit_u(t, lam)))
            if d > worst:
                worst, worst_se = d, se
        rows.append(GwScalingRow(K=K, distance=worst, stderr=worst_se))
    return rows
