"""Integer-state birth-death chains: exact event simulation plus analytic
calculators for explosion, extinction probability, extinction-time moments and
invariant measures.

Rates are given as functions of the integer state.  All series quantities are
evaluated with explicit truncation and a decay classifier that reports
"diverges", "converges" (with a tail estimate) or "undecided"; products such
as pi_k are accumulated in log space because they span hundreds of orders of
magnitude for logistic rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import DEFAULTS, RngStream, intensity_generator


# ---------------------------------------------------------------------------
# Rate specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateSpec:
    """Birth/death rates lam(n), mu(n) with declared growth bounds.

    The declared bounds lam(n) <= lam_bar*n and mu(n) <= mu_bar*(1+n^2) are
    spot-checked on a sampled state grid at construction.  mu(0) must vanish;
    lam(0) may be positive (immigration-style chains), in which case state 0
    is not absorbing.
    """

    lam: Callable[[np.ndarray], np.ndarray]
    mu: Callable[[np.ndarray], np.ndarray]
    lam_bar: float
    mu_bar: float
    name: str = ""

    def __post_init__(self):
        grid = np.unique(np.concatenate([np.arange(0, 20),
                                         np.geomspace(20, 20000, 40).astype(int)]))
        lam = np.asarray(self.lam(grid), dtype=float)
        mu = np.asarray(self.mu(grid), dtype=float)
        if np.any(lam < 0) or np.any(mu < 0):
            raise ValueError("rates must be nonnegative")
        if mu[0] != 0.0:
            raise ValueError("mu(0) must be 0")
        # the linear bound is checked away from 0; lam(0) > 0 is allowed for
        # immigration-style chains (state 0 then is not absorbing)
        if np.any(lam[1:] > self.lam_bar * grid[1:] + 1e-9):
            raise ValueError("declared bound lam(n) <= lam_bar*n violated on sample grid")
        if np.any(mu > self.mu_bar * (1.0 + grid.astype(float) ** 2) + 1e-9):
            raise ValueError("declared bound mu(n) <= mu_bar*(1+n^2) violated on sample grid")

    def absorbing_at_zero(self) -> bool:
        return float(self.lam(np.array([0]))[0]) == 0.0


def linear_rates(lam: float, mu: float) -> RateSpec:
    """Binary branching rates lam_i = i*lam, mu_i = i*mu."""
    return RateSpec(lam=lambda n: lam * np.asarray(n, dtype=float),
                    mu=lambda n: mu * np.asarray(n, dtype=float),
                    lam_bar=lam, mu_bar=mu, name=f"linear(lam={lam},mu={mu})")


def logistic_rates(lam: float, mu: float, c: float) -> RateSpec:
    """Logistic competition rates lam_i = i*lam, mu_i = i*mu + c*i*(i-1)."""
    def death(n):
        n = np.asarray(n, dtype=float)
        return mu * n + c * n * (n - 1.0)
    return RateSpec(lam=lambda n: lam * np.asarray(n, dtype=float), mu=death,
                    lam_bar=lam, mu_bar=mu + c, name=f"logistic(lam={lam},mu={mu},c={c})")


def yule_rates(lam: float) -> RateSpec:
    return RateSpec(lam=lambda n: lam * np.asarray(n, dtype=float),
                    mu=lambda n: np.zeros_like(np.asarray(n, dtype=float)),
                    lam_bar=lam, mu_bar=1e-12, name=f"yule(lam={lam})")


def immigration_rates(rho: float, mu: float) -> RateSpec:
    """Constant immigration lam_i = rho with per-capita death mu_i = i*mu."""
    return RateSpec(lam=lambda n: np.full_like(np.asarray(n, dtype=float), rho),
                    mu=lambda n: mu * np.asarray(n, dtype=float),
                    lam_bar=rho, mu_bar=mu, name=f"immigration(rho={rho},mu={mu})")


# ---------------------------------------------------------------------------
# Exact simulation
# ---------------------------------------------------------------------------

@dataclass
class BdTrajectory:
    """Piecewise-constant path: state states[k] holds on [times[k], times[k+1])."""

    times: np.ndarray
    states: np.ndarray
    horizon: float
    absorbed: bool = False
    exploded: bool = False       # event cap hit before horizon
    capped: bool = False         # optional state cap hit

    def value_at(self, t: float) -> int:
        i = np.searchsorted(self.times, t, side="right") - 1
        return int(self.states[max(i, 0)])

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray], t: float) -> float:
        """Exact ``int_0^t fn(Z_s) ds`` for the piecewise-constant path."""
        cut = np.searchsorted(self.times, t, side="right")
        ts = np.append(self.times[:cut], t)
        vals = np.asarray(fn(self.states[:cut]), dtype=float)
        return float(np.sum(np.diff(ts) * vals))

    def holding_times(self, state: int) -> np.ndarray:
        """Completed holding times observed in ``state`` (censored last visit excluded)."""
        durs = np.diff(self.times)
        return durs[self.states[:-1] == state]


def simulate_bd(spec: RateSpec, z0: int, horizon: float, rng: RngStream,
                event_cap: int | None = None, state_cap: int | None = None) -> BdTrajectory:
    """Exact event-driven simulation: holding time Exponential(lam+mu), birth
    with probability lam/(lam+mu).  States with zero total rate absorb.

    Exceeding ``event_cap`` before the horizon sets the explosion flag;
    reaching ``state_cap`` freezes the path with the capped flag (useful for
    supercritical chains whose surviving paths grow without bound).
    """
    if z0 < 0:
        raise ValueError("z0 must be >= 0")
    cap = event_cap if event_cap is not None else DEFAULTS["event_cap"]
    gen = intensity_generator(rng)
    times = [0.0]
    states = [int(z0)]
    t, z = 0.0, int(z0)
    absorbed = exploded = capped = False
    one = np.empty(1)
    for _ in range(cap):
        one[0] = z
        lam = float(spec.lam(one)[0])
        mu = float(spec.mu(one)[0])
        tot = lam + mu
        if tot <= 0.0:
            absorbed = True
            break
        t += gen.exponential(1.0 / tot)
        if t >= horizon:
            break
        z += 1 if gen.uniform() * tot < lam else -1
        times.append(t)
        states.append(z)
        if state_cap is not None and z >= state_cap:
            capped = True
            break
    else:
        exploded = True
    return BdTrajectory(times=np.array(times), states=np.array(states), horizon=horizon,
                        absorbed=absorbed, exploded=exploded, capped=capped)


@dataclass
class BdBatch:
    """Replicate-vectorized result: states sampled on a fixed output grid."""

    grid: np.ndarray
    states: np.ndarray            # (n_rep, len(grid))
    absorbed: np.ndarray          # reached a zero-rate state
    capped: np.ndarray            # reached state_cap
    final_state: np.ndarray
    absorption_time: np.ndarray   # inf where not absorbed


def simulate_bd_batch(spec: RateSpec, z0: int, grid: np.ndarray, n_rep: int,
                      rng: RngStream, state_cap: int | None = None,
                      event_cap: int | None = None) -> BdBatch:
    """Simulate ``n_rep`` independent chains in lockstep event rounds.

    Same law as simulate_bd; the whole batch is one reproducible unit of the
    supplied stream (draws are ordered by replicate index within each round).
    """
    cap = event_cap if event_cap is not None else DEFAULTS["event_cap"]
    gen = intensity_generator(rng)
    grid = np.asarray(grid, dtype=float)
    horizon = grid[-1]
    n_grid = len(grid)

    z = np.full(n_rep, z0, dtype=np.int64)
    t = np.zeros(n_rep)
    gi = np.zeros(n_rep, dtype=np.int64)
    out = np.empty((n_rep, n_grid), dtype=np.int64)
    absorbed = np.zeros(n_rep, dtype=bool)
    capped = np.zeros(n_rep, dtype=bool)
    t_abs = np.full(n_rep, np.inf)
    active = np.ones(n_rep, dtype=bool)
    events = np.zeros(n_rep, dtype=np.int64)

    def flush(rows: np.ndarray):
        # fill every remaining grid column with the frozen current state
        for r in rows:
            out[r, gi[r]:] = z[r]
        gi[rows] = n_grid

    while active.any():
        idx = np.flatnonzero(active)
        zz = z[idx].astype(float)
        lam = np.asarray(spec.lam(zz), dtype=float)
        mu = np.asarray(spec.mu(zz), dtype=float)
        tot = lam + mu
        dead = tot <= 0.0
        if dead.any():
            rows = idx[dead]
            absorbed[rows] = True
            t_abs[rows] = t[rows]
            flush(rows)
            active[rows] = False
            idx = idx[~dead]
            if idx.size == 0:
                continue
            lam, tot = lam[~dead], tot[~dead]
        dt = gen.exponential(1.0 / tot)
        t_new = t[idx] + dt
        # record grid points crossed during the holding interval (pre-jump state)
        while True:
            open_col = gi[idx] < n_grid
            crossed = open_col & (grid[np.minimum(gi[idx], n_grid - 1)] < t_new)
            rows = idx[crossed]
            if rows.size == 0:
                break
            out[rows, gi[rows]] = z[rows]
            gi[rows] += 1
        up = gen.uniform(size=idx.size) * tot < lam
        z[idx] += np.where(up, 1, -1)
        t[idx] = t_new
        events[idx] += 1
        done = t_new >= horizon
        if state_cap is not None:
            hit = z[idx] >= state_cap
            capped[idx[hit]] = True
            done = done | hit
        done = done | (events[idx] >= cap)
        if done.any():
            rows = idx[done]
            flush(rows)
            active[rows] = False
    return BdBatch(grid=grid, states=out, absorbed=absorbed, capped=capped,
                   final_state=z.copy(), absorption_time=t_abs)


# ---------------------------------------------------------------------------
# Series classifier
# ---------------------------------------------------------------------------

@dataclass
class SeriesReport:
    verdict: str                  # "diverges" | "converges" | "undecided"
    partial_sum: float
    tail_estimate: float          # additional mass beyond the truncation
    n_terms: int
    partial_sums: np.ndarray = field(default_factory=lambda: np.empty(0))


def classify_series(terms: np.ndarray, threshold: float | None = None) -> SeriesReport:
    """Convergence verdict for a positive series from its truncated terms.

    Diverges when partial sums exceed the threshold or the terms provably do
    not vanish (polynomial decay exponent <= 1).  Converges when the terms
    decay geometrically or with estimated exponent > 1.15, in which case a
    tail estimate is attached.  Anything else is undecided.
    """
    thr = threshold if threshold is not None else DEFAULTS["series_threshold"]
    terms = np.asarray(terms, dtype=float)
    sums = np.cumsum(terms)
    n = len(terms)
    report = lambda v, tail: SeriesReport(v, float(sums[-1]) if n else 0.0, tail, n, sums)
    if n == 0:
        return report("undecided", math.nan)
    if not np.isfinite(sums[-1]) or sums[-1] > thr:
        return report("diverges", math.inf)
    if n < 16:
        return report("undecided", math.nan)
    tiny = 5e-324
    last = terms[-5:]
    if np.all(last == 0.0):
        return report("converges", 0.0)
    # geometric tail
    win = terms[-10:]
    if np.all(win > 0):
        ratios = win[1:] / win[:-1]
        q = float(np.exp(np.mean(np.log(ratios))))
        if q < 0.9 and np.all(ratios < 0.95):
            return report("converges", float(terms[-1] * q / (1.0 - q)))
    # polynomial decay exponent from a dyadic window
    h = n // 2
    t_half = float(np.exp(np.mean(np.log(np.maximum(terms[h - 3:h + 2], tiny)))))
    t_end = float(np.exp(np.mean(np.log(np.maximum(last, tiny)))))
    p_hat = math.log(max(t_half, tiny) / max(t_end, tiny)) / math.log((n - 2) / (h - 1))
    if p_hat <= 1.02:
        return report("diverges", math.inf)
    if p_hat >= 1.15:
        return report("converges", float(terms[-1] * (n / (p_hat - 1.0))))
    return report("undecided", math.nan)


# ---------------------------------------------------------------------------
# Analytic calculators
# ---------------------------------------------------------------------------

def _rate_arrays(spec: RateSpec, n_terms: int):
    states = np.arange(1, n_terms + 1, dtype=float)
    lam = np.asarray(spec.lam(states), dtype=float)
    mu = np.asarray(spec.mu(states), dtype=float)
    return states, lam, mu


def check_explosion(spec: RateSpec, n_terms: int = 5000) -> SeriesReport:
    """Non-explosion series: diverges means the chain has an a.s. infinite
    lifetime; converges means it can pile up infinitely many jumps.

    Terms follow the recursion r_i = (1 + mu_i * r_{i-1}) / lam_i, which
    expands to 1/lam_i + mu_i/(lam_i lam_{i-1}) + ... + mu_i...mu_2/(lam_i...lam_1).
    """
    _, lam, mu = _rate_arrays(spec, n_terms)
    if np.any(lam <= 0.0):
        bad = int(np.argmax(lam <= 0.0)) + 1
        raise ValueError(f"lam({bad}) = 0: series undefined below n_terms")
    terms = np.empty(n_terms)
    r = 0.0
    for i in range(n_terms):
        r = (1.0 + mu[i] * r) / lam[i]
        terms[i] = r
        if not math.isfinite(r) or r > 1e300:
            terms = terms[: i + 1]
            break
    return classify_series(terms)


def _log_u_terms(spec: RateSpec, n_terms: int) -> np.ndarray:
    """log of rho_k = mu_1...mu_k / (lam_1...lam_k), the extinction series terms."""
    _, lam, mu = _rate_arrays(spec, n_terms)
    if np.any(lam <= 0.0):
        bad = int(np.argmax(lam <= 0.0)) + 1
        raise ValueError(f"lam({bad}) = 0: extinction series undefined as stated")
    with np.errstate(divide="ignore"):
        return np.cumsum(np.log(mu) - np.log(lam))


def extinction_series(spec: RateSpec, n_terms: int = 5000) -> SeriesReport:
    log_terms = _log_u_terms(spec, n_terms)
    cap = math.log(DEFAULTS["series_threshold"])
    keep = np.nonzero(log_terms > cap)[0]
    end = int(keep[0]) + 1 if keep.size else n_terms
    return classify_series(np.exp(np.minimum(log_terms[:end], 700.0)))


@dataclass
class ExtinctionProb:
    value: float
    truncation_error: float
    series: SeriesReport


def extinction_prob(spec: RateSpec, i: int, n_terms: int = 5000) -> ExtinctionProb:
    """Probability u_i of hitting 0 in finite time from state i.

    Equals 1 when the series sum_k mu_1..mu_k/(lam_1..lam_k) diverges;
    otherwise the truncated tail formula (1+U)^{-1} sum_{k>=i} rho_k with the
    classifier's tail estimate folded into the error bound.
    """
    if i < 0:
        raise ValueError("state must be >= 0")
    if i == 0:
        return ExtinctionProb(1.0, 0.0, SeriesReport("converges", 0.0, 0.0, 0))
    rep = extinction_series(spec, n_terms)
    if rep.verdict == "diverges":
        return ExtinctionProb(1.0, 0.0, rep)
    if rep.verdict == "undecided":
        raise ValueError("extinction series verdict undecided; raise n_terms")
    log_terms = _log_u_terms(spec, n_terms)
    terms = np.exp(log_terms)
    U = float(np.sum(terms)) + rep.tail_estimate
    tail_from_i = float(np.sum(terms[i - 1:])) + rep.tail_estimate
    value = tail_from_i / (1.0 + U)
    err = 2.0 * rep.tail_estimate / (1.0 + U)
    return ExtinctionProb(value, err, rep)


def _log_pi(spec: RateSpec, n_terms: int) -> np.ndarray:
    """log pi_k for k = 1..n_terms, pi_k = lam_1..lam_{k-1} / (mu_1..mu_k)."""
    _, lam, mu = _rate_arrays(spec, n_terms)
    if np.any(mu <= 0.0):
        bad = int(np.argmax(mu <= 0.0)) + 1
        raise ValueError(f"mu({bad}) = 0: pi weights undefined")
    log_lam = np.concatenate([[0.0], np.log(lam[:-1])])
    return np.cumsum(log_lam) - np.cumsum(np.log(mu))


def _extinction_time_tables(spec: RateSpec, n_terms: int):
    """pi_k, lam_k*pi_k and the first-passage means e_k = E_{k+1}(T_k).

    Index k runs 0..n_terms-1 with the convention lam_0*pi_0 = 1, under which
    e_0 = E_1(T_0) = sum_k pi_k.
    """
    rep = extinction_series(spec, n_terms)
    if rep.verdict != "diverges":
        raise ValueError("extinction series does not diverge: T_0 may be infinite, refusing")
    log_pi = _log_pi(spec, n_terms)
    pi = np.exp(log_pi)
    _, lam, _ = _rate_arrays(spec, n_terms)
    # drop the deep tail well before subnormal underflow so downstream products
    # lam_k * pi_k stay strictly positive
    nz = np.nonzero(log_pi > -600.0)[0]
    cut = int(nz[-1]) + 1 if nz.size else 0
    if cut < 8:
        raise ValueError("pi weights underflow immediately; rates look pathological")
    pi, lam = pi[:cut], lam[:cut]
    pi_rep = classify_series(pi)
    if pi_rep.verdict != "converges":
        raise ValueError("sum of pi_k does not converge numerically: mean extinction time unavailable")
    tail = pi_rep.tail_estimate
    # S_k = sum_{i > k} pi_i for k = 0..cut-1, then e_k = S_k / (lam_k pi_k)
    S = np.concatenate([np.cumsum(pi[::-1])[::-1][1:], [0.0]]) + tail
    S = np.concatenate([[float(np.sum(pi)) + tail], S[:-1]])
    lam_pi = np.concatenate([[1.0], lam[:-1] * pi[:-1]])  # k = 0 is the convention slot
    e = S / lam_pi
    return pi, lam_pi, e, tail


@dataclass
class SeriesValue:
    value: float
    truncation_error: float


def mean_extinction_time(spec: RateSpec, n: int, n_terms: int = 5000) -> SeriesValue:
    """E_n(T_0) = sum_{k=0}^{n-1} E_{k+1}(T_k) via the pi-weight series.

    Requires the extinction series to diverge (checked first); refuses
    otherwise since T_0 is infinite with positive probability.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return SeriesValue(0.0, 0.0)
    if n >= n_terms // 2:
        raise ValueError("n too close to n_terms truncation")
    _, lam_pi, e, tail = _extinction_time_tables(spec, n_terms)
    err = tail * float(np.sum(1.0 / lam_pi[:n]))
    return SeriesValue(float(np.sum(e[:n])), err)


def extinction_time_higher_moments(spec: RateSpec, n: int, n_terms: int = 5000) -> tuple[SeriesValue, SeriesValue]:
    """Second and third moments of the passage time T_n started from n+1.

    m2_n = (2/(lam_n pi_n)) sum_{i>=n} lam_i pi_i e_i^2
    m3_n = (6/(lam_n pi_n)) sum_{i>=n} lam_i pi_i e_i (m2_i - e_i^2)
    with e_i the first moments and the same lam_0*pi_0 = 1 convention.
    """
    if n < 0 or n >= n_terms // 2:
        raise ValueError("need 0 <= n << n_terms")
    pi, lam_pi, e, tail = _extinction_time_tables(spec, n_terms)
    w = lam_pi * e ** 2
    # m2 for every index (reverse cumulative), needed inside m3
    rev2 = np.cumsum(w[::-1])[::-1]
    m2 = 2.0 * rev2 / lam_pi
    v = lam_pi * e * np.maximum(m2 - e ** 2, 0.0)
    rev3 = np.cumsum(v[::-1])[::-1]
    m3 = 6.0 * rev3 / lam_pi
    # crude truncation error: relative size of the final retained term
    err2 = float(2.0 * len(pi) * w[-1] / lam_pi[n])
    err3 = float(6.0 * len(pi) * v[-1] / lam_pi[n])
    return SeriesValue(float(m2[n]), err2), SeriesValue(float(m3[n]), err3)


# ---------------------------------------------------------------------------
# Invariant measure
# ---------------------------------------------------------------------------

@dataclass
class InvariantMeasure:
    verdict: str                 # "normalizable" | "not_normalizable" | "degenerate"
    weights: np.ndarray | None   # normalized on 0..n_max when normalizable
    raw: np.ndarray | None


def invariant_measure(spec: RateSpec, n_max: int, tol: float = 1e-10) -> InvariantMeasure:
    """Solve the stationarity recursion lam_{j-1} q_{j-1} + mu_{j+1} q_{j+1}
    = (lam_j + mu_j) q_j on {0..n_max} and report normalizability.

    The balance equations are solved as a linear system on the truncated state
    space with the last (redundant) equation replaced by normalization; an
    unnormalized forward recursion would be numerically unstable.  A solution
    concentrated at an absorbing state 0 is reported as degenerate.  Pure-birth
    chains go through the constant-flux solution q_j proportional to 1/lam_j.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    states = np.arange(0, n_max + 1, dtype=float)
    lam = np.asarray(spec.lam(states), dtype=float)
    mu = np.asarray(spec.mu(states), dtype=float)
    n = n_max + 1

    if np.all(mu[1:] == 0.0):
        if np.any(lam[1:] <= 0.0):
            raise ValueError("pure-birth chain needs lam(j) > 0 for j >= 1")
        raw = np.concatenate([[0.0], lam[1] / lam[1:]])
        rep = classify_series(raw[1:])
        if rep.verdict == "converges":
            return InvariantMeasure("normalizable", raw / raw.sum(), raw)
        return InvariantMeasure("not_normalizable", None, raw)
    if np.any(mu[1:] == 0.0):
        raise ValueError("interior zero death rates are not supported")

    lam_t = lam.copy()
    lam_t[n_max] = 0.0  # truncation: no flow above n_max
    A = np.zeros((n, n))
    for j in range(n):
        A[j, j] = -(lam_t[j] + mu[j])
        if j > 0:
            A[j, j - 1] = lam_t[j - 1]
        if j < n_max:
            A[j, j + 1] = mu[j + 1]
    # the n+1 balance equations sum to zero, so the last one is redundant
    A[n_max, :] = 1.0
    rhs = np.zeros(n)
    rhs[n_max] = 1.0
    q = np.linalg.solve(A, rhs)
    q = np.where(np.abs(q) < 1e-15, 0.0, q)
    if np.any(q < -1e-9) or not np.all(np.isfinite(q)):
        return InvariantMeasure("degenerate", None, q)

    if spec.absorbing_at_zero() and q[0] >= 1.0 - 1e-8:
        point = np.zeros(n)
        point[0] = 1.0
        return InvariantMeasure("degenerate", point, q)

    # tail behavior on the truncated window decides normalizability
    tiny = 5e-324
    quarter = max(4, n_max // 4)
    head = q[1 + quarter: 1 + 2 * quarter]
    tail = q[-quarter:]
    g_head = float(np.exp(np.mean(np.log(np.maximum(head, tiny)))))
    g_tail = float(np.exp(np.mean(np.log(np.maximum(tail, tiny)))))
    if g_tail >= 0.5 * g_head:
        return InvariantMeasure("not_normalizable", None, q)
    return InvariantMeasure("normalizable", q / q.sum(), q)
