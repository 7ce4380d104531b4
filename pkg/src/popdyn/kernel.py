"""Shared simulation kernel: reproducible RNG streams, Poisson point measures,
and path integrators (Euler-Maruyama with jumps, truncated stable paths).

All other modules build on these primitives.  Conventions used throughout:

* square-root diffusion coefficients are evaluated with full truncation,
  ``sqrt(2*gamma*max(x, 0))``, so transient Euler undershoot cannot produce NaNs;
* a state that reaches <= 0 in an absorbing model is set to exactly 0 and frozen;
* infinite-activity jump measures are only handled through an explicit caller
  truncation, with the retained band compensated in the drift.  No adaptive
  truncation is attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Central table of default step sizes and tolerances.  Experiments may override
# any entry locally; nothing else in the package hardcodes these values.
DEFAULTS = {
    "step": 1e-3,
    "event_cap": 10_000_000,
    "series_threshold": 1e12,
    "state_floor": 1e-12,
    "thinning_margin": 1.5,
    "explosion_cap": 1e12,
    "ode_rtol": 1e-10,
    "ode_atol": 1e-12,
    "quad_rtol": 1e-9,
}


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Uses Philox via numpy's SeedSequence spawning, so replicate ``i`` is
    reproducible without generating replicates ``< i`` and distinct stream ids
    give statistically independent streams.  ``path`` carves named substreams
    out of one replicate (e.g. environment vs demography draws).
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.Philox(ss))

    def replicate(self, i: int) -> "RngStream":
        return RngStream(self.seed, i, self.path)

    def substream(self, *tags: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(tags))


# ---------------------------------------------------------------------------
# Poisson point measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkIntensity:
    """Finite mark measure ``nu`` for a product intensity ``ds x nu(dm)``.

    ``total`` is nu of the (already truncated) mark window and ``sampler``
    draws iid marks from the normalized measure.  Callers truncate
    infinite-activity measures before building one of these.
    """

    total: float
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    label: str = ""

    def __post_init__(self):
        if not np.isfinite(self.total) or self.total < 0:
            raise ValueError(f"mark intensity must be finite and >= 0, got {self.total}")


@dataclass(frozen=True)
class MarkedPPMSample:
    """Realization of a Poisson point measure on [0, horizon] x mark window."""

    times: np.ndarray
    marks: np.ndarray
    horizon: float
    total_intensity: float

    def count(self) -> int:
        return len(self.times)


def sample_ppm(intensity: MarkIntensity, horizon: float, rng: RngStream | np.random.Generator) -> MarkedPPMSample:
    """Sample all points of a homogeneous marked PPM on ``[0, horizon]``.

    The count is Poisson(total * horizon), times are sorted uniforms and marks
    are iid from the normalized mark measure.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    gen = intensity_generator(rng)
    n = int(gen.poisson(intensity.total * horizon)) if horizon > 0 and intensity.total > 0 else 0
    times = np.sort(gen.uniform(0.0, horizon, size=n))
    marks = intensity.sampler(gen, n) if n > 0 else np.empty(0)
    return MarkedPPMSample(times=times, marks=np.asarray(marks), horizon=horizon,
                           total_intensity=intensity.total)


def intensity_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    """Accept either an RngStream or an already-built Generator."""
    return rng.generator() if isinstance(rng, RngStream) else rng


# ---------------------------------------------------------------------------
# Jump SDE integrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpPart:
    """One jump component of a jump SDE.

    Jumps arrive at rate ``state_rate(x) * intensity.total`` (``state_rate``
    defaults to 1) and move the state by ``kernel(x, mark)``.  If
    ``compensated`` the drift is adjusted by ``-state_rate(x) * mean_jump(x)``
    where ``mean_jump`` is the integral of the kernel against the (truncated,
    unnormalized) mark measure.
    """

    intensity: MarkIntensity
    kernel: Callable[[float, float], float]
    state_rate: Callable[[float], float] | None = None
    compensated: bool = False
    mean_jump: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.compensated and self.mean_jump is None:
            raise ValueError("compensated jump part needs mean_jump for the drift adjustment")


@dataclass(frozen=True)
class JumpSdeSpec:
    """Drift/diffusion/jump description consumed by integrate_jump_sde."""

    drift: Callable[[float], float]
    diffusion: Callable[[float], float]
    jumps: tuple[JumpPart, ...] = ()
    absorb_at_zero: bool = False
    explosion_cap: float = DEFAULTS["explosion_cap"]


@dataclass
class SdePath:
    times: np.ndarray
    values: np.ndarray
    absorbed: bool = False
    absorption_time: float | None = None
    exploded: bool = False
    explosion_time: float | None = None
    thinning_violations: int = 0

    def value_at(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right") - 1
        return float(self.values[max(i, 0)])


def integrate_jump_sde(spec: JumpSdeSpec, x0: float, horizon: float, step: float,
                       rng: RngStream | np.random.Generator) -> SdePath:
    """Integrate a jump SDE: Euler-Maruyama between jumps, jumps applied
    atomically at their sampled times.

    State-dependent jump rates go through thinning: proposals are generated at
    ``margin * state_rate(x)`` with the bound refreshed after every event, and
    a proposal is accepted with probability ``state_rate/bound``.  Within a
    thinning segment the state only moves by the Euler increment, so the bound
    can transiently be exceeded; violations are counted on the path.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    gen = intensity_generator(rng)
    margin = DEFAULTS["thinning_margin"]
    floor = DEFAULTS["state_floor"]

    n_grid = int(round(horizon / step))
    grid = np.linspace(0.0, n_grid * step, n_grid + 1)
    out = np.empty(n_grid + 1)
    out[0] = x0

    x = float(x0)
    absorbed = spec.absorb_at_zero and x <= 0.0
    if absorbed:
        x = 0.0
    exploded = False
    t_abs = 0.0 if absorbed else None
    t_exp = None
    violations = 0

    def eff_drift(xx: float) -> float:
        d = spec.drift(xx)
        for part in spec.jumps:
            if part.compensated:
                rate = part.state_rate(xx) if part.state_rate else 1.0
                d -= rate * part.mean_jump(xx)
        return d

    for k in range(n_grid):
        if absorbed or exploded:
            out[k + 1] = x
            continue
        remaining = grid[k + 1] - grid[k]
        t_cur = grid[k]
        while remaining > 0 and not absorbed and not exploded:
            # proposal rates per part, bound refreshed at every event
            bounds = []
            total_rate = 0.0
            for part in spec.jumps:
                r = part.state_rate(x) if part.state_rate else 1.0
                b = margin * max(r, 0.0) if part.state_rate else 1.0
                bounds.append(b)
                total_rate += b * part.intensity.total
            if total_rate > 0:
                wait = gen.exponential(1.0 / total_rate)
            else:
                wait = math.inf
            seg = min(wait, remaining)
            # Euler-Maruyama over the segment
            sig = spec.diffusion(x)
            x = x + eff_drift(x) * seg + sig * math.sqrt(seg) * gen.standard_normal()
            t_cur += seg
            if spec.absorb_at_zero and x <= 0.0:
                x, absorbed, t_abs = 0.0, True, t_cur
                break
            if abs(x) >= spec.explosion_cap:
                exploded, t_exp = True, t_cur
                break
            if wait >= remaining:
                remaining = 0.0
                break
            remaining -= wait
            # pick the part proportionally to its proposal rate
            u = gen.uniform(0.0, total_rate)
            acc = 0.0
            for part, b in zip(spec.jumps, bounds):
                acc += b * part.intensity.total
                if u <= acc:
                    rate = part.state_rate(x) if part.state_rate else 1.0
                    ratio = rate / b if b > 0 else 0.0
                    if ratio > 1.0:
                        violations += 1
                        ratio = 1.0
                    if part.state_rate is None or gen.uniform() < ratio:
                        mark = float(part.intensity.sampler(gen, 1)[0])
                        x = x + part.kernel(x, mark)
                        if spec.absorb_at_zero and x <= 0.0:
                            x, absorbed, t_abs = 0.0, True, t_cur
                        elif abs(x) >= spec.explosion_cap:
                            exploded, t_exp = True, t_cur
                    break
        out[k + 1] = x
    return SdePath(times=grid, values=out, absorbed=absorbed, absorption_time=t_abs,
                   exploded=exploded, explosion_time=t_exp, thinning_violations=violations)


# ---------------------------------------------------------------------------
# Symmetric stable paths
# ---------------------------------------------------------------------------

def _power_window_sampler(a: float, b: float, alpha: float, signed: bool):
    """Inverse-CDF sampler for |h|^{-1-alpha} dh restricted to |h| in (a, b)."""
    ia, ib = a ** (-alpha), (b ** (-alpha) if np.isfinite(b) else 0.0)

    def sample(gen: np.random.Generator, n: int) -> np.ndarray:
        u = gen.uniform(size=n)
        h = (ia - u * (ia - ib)) ** (-1.0 / alpha)
        if signed:
            s = gen.integers(0, 2, size=n) * 2 - 1
            h = h * s
        return h

    return sample


def stable_window_intensity(alpha: float, a: float, b: float) -> float:
    """Total mass of |h|^{-1-alpha} dh over a < |h| < b (both signs)."""
    ib = b ** (-alpha) if np.isfinite(b) else 0.0
    return 2.0 * (a ** (-alpha) - ib) / alpha


def simulate_stable_symmetric(alpha: float, eps: float, horizon: float, step: float,
                              rng: RngStream | np.random.Generator) -> SdePath:
    """Simulate a symmetric alpha-stable path started at 0.

    Jumps with |h| >= 1 are sampled exactly.  Jumps with eps < |h| < 1 are the
    compensated small-jump band; by symmetry their compensator vanishes, so
    they are simulated as plain jumps.  Jumps below eps are dropped, which
    biases the small-jump variance by O(eps^(2-alpha)).
    """
    if not (0.0 < alpha < 2.0):
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if not (0.0 < eps < 1.0):
        raise ValueError(f"truncation eps must lie in (0, 1), got {eps}")
    small = JumpPart(
        intensity=MarkIntensity(stable_window_intensity(alpha, eps, 1.0),
                                _power_window_sampler(eps, 1.0, alpha, signed=True),
                                label="small jumps"),
        kernel=lambda x, h: h,
    )
    big = JumpPart(
        intensity=MarkIntensity(stable_window_intensity(alpha, 1.0, math.inf),
                                _power_window_sampler(1.0, math.inf, alpha, signed=True),
                                label="big jumps"),
        kernel=lambda x, h: h,
    )
    spec = JumpSdeSpec(drift=lambda x: 0.0, diffusion=lambda x: 0.0, jumps=(small, big))
    return integrate_jump_sde(spec, 0.0, horizon, step, rng)


# ---------------------------------------------------------------------------
# Exact square-root diffusion transitions
# ---------------------------------------------------------------------------

def feller_transition(y, r: float, gamma: float, dt: float,
                      gen: np.random.Generator):
    """Exact transition of dY = r Y dt + sqrt(2 gamma Y) dB over dt.

    The transition law is a Poisson mixture of Gamma variables: with
    g = gamma*(e^{r dt}-1)/r, draw N ~ Poisson(y e^{r dt}/g) and return
    Gamma(N, scale=g).  Absorption at 0 is exact (N = 0).  Works on arrays.
    """
    if np.isscalar(y) or np.ndim(y) == 0:
        y = float(y)
        if dt <= 0:
            return y
        if y <= 0.0:
            return 0.0
        if gamma == 0.0:
            return y * math.exp(r * dt)
        if r == 0.0:
            g = gamma * dt
            mean = y / g
        else:
            g = gamma * math.expm1(r * dt) / r
            # stable form of y e^{r dt} / g, avoids overflowing the exponential
            mean = y * r / (gamma * (-math.expm1(-r * dt)))
        n = gen.poisson(mean)
        return float(gen.standard_gamma(n)) * g if n > 0 else 0.0
    y = np.asarray(y, dtype=float)
    if dt <= 0:
        return y.copy()
    if gamma == 0.0:
        return y * math.exp(r * dt)
    if r == 0.0:
        g = gamma * dt
        mean = y / g
    else:
        g = gamma * math.expm1(r * dt) / r
        mean = y * r / (gamma * (-math.expm1(-r * dt)))
    return gen.standard_gamma(gen.poisson(mean)) * g


def split_mass(x: float, theta: float) -> tuple[float, float]:
    """Split x into (theta*x, (1-theta)*x) so the parts sum to x bitwise.

    The larger share is computed by multiplication and the smaller by
    subtraction; since the larger share lies in [x/2, x] the subtraction is
    exact (Sterbenz), hence part1 + part2 == x in floating point.
    """
    if theta >= 0.5:
        big = theta * x
        return big, x - big
    big = (1.0 - theta) * x
    return x - big, big


def sqrt_immigration_transition(x, drift: float, gamma: float, dt: float,
                                gen: np.random.Generator):
    """Exact transition of dX = drift dt + sqrt(2 gamma X) dB (drift > 0).

    This is a scaled squared Bessel process: X_t = (gamma t/2) * chi'^2 with
    df = 2*drift/gamma and noncentrality 2 x / (gamma t).
    """
    scalar = np.isscalar(x) or np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dt <= 0:
        out = x.copy()
    elif gamma == 0.0:
        out = x + drift * dt
    else:
        df = 2.0 * drift / gamma
        nonc = 2.0 * x / (gamma * dt)
        out = 0.5 * gamma * dt * gen.noncentral_chisquare(df, nonc)
    return float(out[0]) if scalar else out
