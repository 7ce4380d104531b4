"""Named, seeded experiments reproducing every headline validation check.

Each experiment consumes a validated flat config, runs its Monte-Carlo and
analytic checks, writes CSV artifacts, and returns a report whose rows carry
(check id, target, estimate, stderr, verdict).  The registry is the single
source for both the command-line runner and the acceptance test suite.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import stats as sstats

from . import bd, catastrophe as cat, csbp, gwtree as gw, scaling, splitting as sp, structpop as st
from .config import Schema, config_hash
from .kernel import (MarkIntensity, RngStream, feller_transition, sample_ppm,
                     simulate_stable_symmetric, split_mass)

__version__ = "0.1.0"


# ---------------------------------------------------------------------------
# Report plumbing
# ---------------------------------------------------------------------------

@dataclass
class CheckRow:
    check_id: str
    target: float
    estimate: float
    stderr: float
    verdict: bool

    def as_csv(self):
        return [self.check_id, repr(self.target), repr(self.estimate),
                repr(self.stderr), "pass" if self.verdict else "fail"]


@dataclass
class RunReport:
    experiment: str
    seed: int
    config_digest: str
    rows: list[CheckRow] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.verdict for r in self.rows)

    def add(self, check_id: str, target: float, estimate: float, stderr: float,
            verdict: bool) -> CheckRow:
        row = CheckRow(check_id, float(target), float(estimate), float(stderr), bool(verdict))
        self.rows.append(row)
        return row


def write_csv(path: Path, header: list[str], rows) -> None:
    """Fixed CSV dialect: comma separated, '.' decimals, UTF-8, LF endings."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_report(report: RunReport, out_dir: Path) -> Path:
    path = out_dir / "report.csv"
    meta = [["#experiment", report.experiment],
            ["#seed", str(report.seed)],
            ["#config", report.config_digest],
            ["#version", __version__]]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for m in meta:
            w.writerow(m)
        w.writerow(["check_id", "target", "estimate", "stderr", "verdict"])
        for row in report.rows:
            w.writerow(row.as_csv())
    return path


def parallel_map(fn: Callable[[int], Any], n: int, threads: int) -> list:
    """Replicate map with results reduced in index order, so the output is
    identical for any thread count (each replicate owns its RNG stream)."""
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _reps(cfg, default: int) -> int:
    return cfg["experiment.replicates"] or default


# ---------------------------------------------------------------------------
# 1. Linear birth-death extinction probability
# ---------------------------------------------------------------------------

def _schema_bd_extinction() -> Schema:
    return (Schema()
            .add("bd", "lam", float, 1.5, lo=1e-12)
            .add("bd", "mu", float, 1.0, lo=0.0)
            .add("bd", "z0", int, 3, lo=0)
            .add("bd", "horizon", float, 60.0, lo=0.0)
            .add("bd", "state_cap", int, 300, lo=10)
            .add("bd", "n_dump", int, 5, lo=0))


def run_bd_extinction(cfg, out_dir: Path | None, report: RunReport):
    lam, mu, z0 = cfg["bd.lam"], cfg["bd.mu"], cfg["bd.z0"]
    spec = bd.linear_rates(lam, mu)
    n_rep = _reps(cfg, 100_000)
    rng = RngStream(cfg["experiment.seed"])
    grid = np.array([0.0, cfg["bd.horizon"]])
    batch = bd.simulate_bd_batch(spec, z0, grid, n_rep, rng.substream(0),
                                 state_cap=cfg["bd.state_cap"])
    freq = float(np.mean(batch.absorbed))
    se = math.sqrt(max(freq * (1 - freq), 1e-12) / n_rep)
    target = bd.extinction_prob(spec, z0).value
    report.add("bd-extinction/mc-vs-formula", target, freq, se, abs(freq - target) <= 3 * se)
    if out_dir is not None:
        rows = []
        for i in range(cfg["bd.n_dump"]):
            tr = bd.simulate_bd(spec, z0, cfg["bd.horizon"], rng.substream(1).replicate(i),
                                state_cap=cfg["bd.state_cap"])
            rows.extend([i, repr(float(t)), int(z)] for t, z in zip(tr.times, tr.states))
        p = out_dir / "trajectories.csv"
        write_csv(p, ["replicate", "t", "z"], rows)
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 2. Mean extinction time, logistic rates
# ---------------------------------------------------------------------------

def _schema_bd_meantime() -> Schema:
    return (Schema()
            .add("bd", "lam", float, 1.0, lo=1e-12)
            .add("bd", "mu", float, 1.0, lo=0.0)
            .add("bd", "c", float, 1.0, lo=0.0)
            .add("bd", "n", int, 1, lo=1)
            .add("bd", "n_terms", int, 400, lo=50)
            .add("bd", "oracle_states", int, 400, lo=50))


def absorbing_chain_mean_time(spec: bd.RateSpec, n: int, n_states: int) -> float:
    """Independent oracle: solve (I - P) m = holding-times on the truncated
    chain {1..N} with absorption at 0, by a dense linear solve."""
    states = np.arange(0, n_states + 1, dtype=float)
    lam = np.asarray(spec.lam(states), dtype=float)
    mu = np.asarray(spec.mu(states), dtype=float)
    A = np.zeros((n_states, n_states))
    rhs = np.empty(n_states)
    for i in range(1, n_states + 1):
        tot = lam[i] + mu[i]
        row = i - 1
        A[row, row] = 1.0
        rhs[row] = 1.0 / tot
        if i + 1 <= n_states:
            A[row, row + 1] = -lam[i] / tot
        if i - 1 >= 1:
            A[row, row - 1] = -mu[i] / tot
    m = np.linalg.solve(A, rhs)
    return float(m[n - 1])


def run_bd_meantime(cfg, out_dir: Path | None, report: RunReport):
    spec = bd.logistic_rates(cfg["bd.lam"], cfg["bd.mu"], cfg["bd.c"])
    n = cfg["bd.n"]
    series = bd.mean_extinction_time(spec, n, cfg["bd.n_terms"]).value
    oracle = absorbing_chain_mean_time(spec, n, cfg["bd.oracle_states"])
    report.add("bd-meantime/series-vs-linear-solve", oracle, series,
               0.0, abs(series - oracle) <= 1e-6)
    n_rep = _reps(cfg, 20_000)
    rng = RngStream(cfg["experiment.seed"])
    gen = rng.substream(0).generator()
    t0s = np.empty(n_rep)
    for i in range(n_rep):
        tr = bd.simulate_bd(spec, n, 1e9, gen)
        t0s[i] = tr.times[-1] + (0.0 if tr.absorbed else math.nan)
    mc, se = float(np.mean(t0s)), float(np.std(t0s, ddof=1) / math.sqrt(n_rep))
    report.add("bd-meantime/series-vs-mc", series, mc, se, abs(mc - series) <= 3 * se)
    if out_dir is not None:
        p = out_dir / "meantime.csv"
        write_csv(p, ["quantity", "value"],
                  [["series", repr(series)], ["linear_solve", repr(oracle)],
                   ["mc", repr(mc)], ["mc_stderr", repr(se)]])
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 3. Deterministic scaling limit
# ---------------------------------------------------------------------------

def _schema_scaling_det() -> Schema:
    return (Schema()
            .add("scaling", "lam", float, 2.0, lo=0.0)
            .add("scaling", "mu", float, 1.0, lo=0.0)
            .add("scaling", "c", float, 0.5, lo=0.0)
            .add("scaling", "x0", float, 1.0, lo=0.0)
            .add("scaling", "horizon", float, 10.0, lo=0.1)
            .add("scaling", "K_grid", str, "50,200,800"))


def run_scaling_det(cfg, out_dir: Path | None, report: RunReport):
    lam0, mu0, c0 = cfg["scaling.lam"], cfg["scaling.mu"], cfg["scaling.c"]
    Ks = [int(s) for s in cfg["scaling.K_grid"].split(",")]
    n_rep = _reps(cfg, 200)
    rows = scaling.convergence_harness(
        lam_pc=lambda x: np.full_like(np.asarray(x, dtype=float), lam0),
        mu_pc=lambda x: mu0 + c0 * np.asarray(x, dtype=float),
        lam_bar=lam0, mu_bar=mu0 + c0,
        x0=cfg["scaling.x0"], horizon=cfg["scaling.horizon"], Ks=Ks,
        n_rep=n_rep, rng=RngStream(cfg["experiment.seed"]))
    for a, b in zip(rows, rows[1:]):
        margin = 2.0 * math.hypot(a.stderr, b.stderr)
        report.add(f"scaling-limit/decreasing-K{a.K}-K{b.K}", 0.0,
                   a.distance - b.distance, margin, a.distance - b.distance > margin)
    if out_dir is not None:
        p = out_dir / "distances.csv"
        write_csv(p, ["K", "distance", "stderr"],
                  [[r.K, repr(r.distance), repr(r.stderr)] for r in rows])
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 4. Random-environment stationary law
# ---------------------------------------------------------------------------

def _schema_scaling_env() -> Schema:
    return (Schema()
            .add("scaling", "r", float, 1.0)
            .add("scaling", "sigma", float, 1.0, lo=1e-9)
            .add("scaling", "c", float, 1.0, lo=1e-9)
            .add("scaling", "y0", float, 0.5, lo=1e-12)
            .add("scaling", "horizon", float, 300.0, lo=1.0)
            .add("scaling", "step", float, 0.005, lo=1e-6)
            .add("scaling", "n_paths", int, 32, lo=1))


def run_scaling_env(cfg, out_dir: Path | None, report: RunReport):
    r, sig, c = cfg["scaling.r"], cfg["scaling.sigma"], cfg["scaling.c"]
    k, theta = scaling.stationary_gamma_params(r, c, sig)
    mean_t, var_t = k * theta, k * theta ** 2
    pe = scaling.random_env_paths(r, c, sig, cfg["scaling.y0"], cfg["scaling.horizon"],
                                  cfg["scaling.step"], RngStream(cfg["experiment.seed"]),
                                  n_rep=cfg["scaling.n_paths"])
    burn = int(0.2 * pe.numeric.shape[1])
    pool = pe.numeric[:, burn:].ravel()
    mean_hat = float(np.mean(pool))
    var_hat = float(np.var(pool))
    report.add("random-env/stationary-mean", mean_t, mean_hat, 0.05 * mean_t,
               abs(mean_hat - mean_t) <= 0.05 * mean_t)
    report.add("random-env/stationary-var", var_t, var_hat, 0.10 * var_t,
               abs(var_hat - var_t) <= 0.10 * var_t)
    if out_dir is not None:
        p = out_dir / "paths.csv"
        sl = slice(0, len(pe.times), max(1, len(pe.times) // 2000))
        write_csv(p, ["t", "numeric", "exact"],
                  [[repr(float(t)), repr(float(a)), repr(float(b))]
                   for t, a, b in zip(pe.times[sl], pe.numeric[0][sl], pe.exact[0][sl])])
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 5. CSBP Laplace consistency (square-root branching diffusion)
# ---------------------------------------------------------------------------

def _schema_csbp_laplace() -> Schema:
    return (Schema()
            .add("csbp", "r", float, 0.5)
            .add("csbp", "gamma", float, 1.0, lo=0.0)
            .add("csbp", "z0", float, 1.0, lo=0.0)
            .add("csbp", "step", float, 0.001, lo=1e-6)
            .add("csbp", "t_grid", str, "0.5,1,2")
            .add("csbp", "lam_grid", str, "0.5,1,2"))


def _riccati_u(r: float, gamma: float, t: float, lam: float) -> float:
    """Closed-form flow of du/dt = r u - gamma u^2 (independent oracle)."""
    if r == 0.0:
        return lam / (1.0 + gamma * lam * t)
    e = math.exp(r * t)
    return r * lam * e / (r + gamma * lam * (e - 1.0))


def run_csbp_laplace(cfg, out_dir: Path | None, report: RunReport):
    r, gam, z0 = cfg["csbp.r"], cfg["csbp.gamma"], cfg["csbp.z0"]
    ts = [float(s) for s in cfg["csbp.t_grid"].split(",")]
    lams = [float(s) for s in cfg["csbp.lam_grid"].split(",")]
    mech = csbp.feller_mechanism(r, gam)
    worst = 0.0
    for t in ts:
        for lam in lams:
            u = csbp.laplace_exponent(mech, t, lam, tol=1e-11).value
            worst = max(worst, abs(u - _riccati_u(r, gam, t, lam)))
    report.add("csbp-laplace/ode-vs-riccati", 0.0, worst, 1e-9, worst <= 1e-9)

    n_rep = _reps(cfg, 4000)
    step = cfg["csbp.step"]
    horizon = max(ts)
    paths = csbp.csbp_sde_batch(mech, z0, horizon, step, 0.01, n_rep,
                                RngStream(cfg["experiment.seed"]))
    table = []
    for t in ts:
        col = paths[:, int(round(t / step))]
        for lam in lams:
            vals = np.exp(-lam * col)
            mc, se = float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_rep))
            u = csbp.laplace_exponent(mech, t, lam).value
            target = math.exp(-z0 * u)
            report.add(f"csbp-laplace/mc-t{t}-lam{lam}", target, mc, se,
                       abs(mc - target) <= 3 * se)
            table.append([repr(t), repr(lam), repr(u), repr(mc), repr(se)])
    if out_dir is not None:
        p = out_dir / "laplace.csv"
        write_csv(p, ["t", "lam", "u_t", "mc", "stderr"], table)
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 6. Lamperti equivalence for the heavy-tailed mechanism
# ---------------------------------------------------------------------------

def _schema_csbp_lamperti() -> Schema:
    return (Schema()
            .add("csbp", "r", float, 0.3)
            .add("csbp", "gamma", float, 0.2, lo=0.0)
            .add("csbp", "c", float, 0.5, lo=1e-12)
            .add("csbp", "alpha", float, 1.5, lo=1.01, hi=1.99)
            .add("csbp", "eps", float, 0.02, lo=1e-6, hi=0.99)
            .add("csbp", "z0", float, 1.0, lo=0.0)
            .add("csbp", "t", float, 1.0, lo=0.01)
            .add("csbp", "step_sde", float, 0.0005, lo=1e-7)
            .add("csbp", "step_lamperti", float, 0.004, lo=1e-7)
            .add("csbp", "lam_grid", str, "0.5,1,2"))


def run_csbp_lamperti(cfg, out_dir: Path | None, report: RunReport):
    mech = csbp.stable_mechanism(cfg["csbp.r"], cfg["csbp.gamma"], cfg["csbp.c"],
                                 cfg["csbp.alpha"])
    eps, z0, t = cfg["csbp.eps"], cfg["csbp.z0"], cfg["csbp.t"]
    n_sde = _reps(cfg, 4000)
    n_lam = max(n_sde // 3, 100)
    rng = RngStream(cfg["experiment.seed"])
    paths = csbp.csbp_sde_batch(mech, z0, t, cfg["csbp.step_sde"], eps, n_sde,
                                rng.substream(0))
    sde_final = paths[:, -1]
    gen = rng.substream(1).generator()
    lam_final = np.empty(n_lam)
    for i in range(n_lam):
        lam_final[i] = csbp.simulate_csbp_lamperti(mech, z0, t, cfg["csbp.step_lamperti"],
                                                   eps, gen).values[-1]
    table = []
    for lam in [float(s) for s in cfg["csbp.lam_grid"].split(",")]:
        a = np.exp(-lam * sde_final)
        b = np.exp(-lam * lam_final)
        am, ase = float(np.mean(a)), float(np.std(a, ddof=1) / math.sqrt(n_sde))
        bm, bse = float(np.mean(b)), float(np.std(b, ddof=1) / math.sqrt(n_lam))
        comb = math.hypot(ase, bse)
        report.add(f"csbp-lamperti/laplace-lam{lam}", am, bm, comb,
                   abs(am - bm) <= 3 * comb)
        table.append([repr(lam), repr(am), repr(ase), repr(bm), repr(bse)])
    if out_dir is not None:
        p = out_dir / "lamperti.csv"
        write_csv(p, ["lam", "sde", "sde_se", "lamperti", "lamperti_se"], table)
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 7. Catastrophe survival-decay regimes
# ---------------------------------------------------------------------------

def _schema_cat_regimes() -> Schema:
    return (Schema()
            .add("catastrophe", "tau", float, 1.0, lo=1e-9)
            .add("catastrophe", "gamma", float, 1.0, lo=1e-9)
            .add("catastrophe", "y0", float, 2.0, lo=1e-12)
            .add("catastrophe", "r_strong", float, -0.1)
            .add("catastrophe", "r_with_label_weak", float, 0.9)
            .add("catastrophe", "r_super", float, 1.0)
            .add("catastrophe", "horizon_strong", float, 12.0, lo=1.0)
            .add("catastrophe", "horizon_critical", float, 30.0, lo=1.0))


def run_cat_regimes(cfg, out_dir: Path | None, report: RunReport):
    F = cat.half_law()
    tau, gam, y0 = cfg["catastrophe.tau"], cfg["catastrophe.gamma"], cfg["catastrophe.y0"]
    env = cat.CatastropheEnv(F=F, tau=tau)
    rng = RngStream(cfg["experiment.seed"])
    r_crit = tau * math.log(2.0)
    presets = [("strong", cfg["catastrophe.r_strong"], "strongly_subcritical"),
               ("labelled-weak", cfg["catastrophe.r_with_label_weak"], None),
               ("critical", r_crit, "critical"),
               ("super", cfg["catastrophe.r_super"], "supercritical")]
    for name, r, expected in presets:
        rep = cat.regime_classify(r, tau, F)
        if expected is None:
            # regime follows the sign checks; 0.9 > log 2 puts it supercritical
            expected = "supercritical" if r - tau * math.log(2.0) > 0 else "weakly_subcritical"
        report.add(f"cat-regimes/classify-{name}", 1.0,
                   1.0 if rep.regime == expected else 0.0, 0.0, rep.regime == expected)

    n_rep = _reps(cfg, 300_000)
    rep_strong = cat.regime_classify(cfg["catastrophe.r_strong"], tau, F)
    grid = np.linspace(0.0, cfg["catastrophe.horizon_strong"], 61)
    ys = cat.catastrophe_batch(cfg["catastrophe.r_strong"], gam, env, y0, grid,
                               n_rep, rng.substream(0))
    p_hat = (ys > 0).mean(axis=0)
    fit = cat.survival_rate_fit(grid, p_hat, rep_strong, n_rep=n_rep)
    report.add("cat-regimes/strong-exponent", fit.predicted_exponent,
               fit.fitted_exponent, 0.1 * abs(fit.predicted_exponent), fit.verdict)

    gridc = np.linspace(0.0, cfg["catastrophe.horizon_critical"], 61)
    ysc = cat.catastrophe_batch(r_crit, gam, env, y0, gridc, max(n_rep // 2, 1000),
                                rng.substream(1))
    pc = (ysc > 0).mean(axis=0)
    drift = cat.critical_drift_factor(gridc, pc)
    report.add("cat-regimes/critical-drift", 1.0, drift, 1.0, drift < 2.0)

    if out_dir is not None:
        p = out_dir / "survival.csv"
        se = np.sqrt(np.maximum(p_hat * (1 - p_hat), 1e-12) / n_rep)
        write_csv(p, ["t", "p_hat", "stderr"],
                  [[repr(float(t)), repr(float(ph)), repr(float(s))]
                   for t, ph, s in zip(grid, p_hat, se)])
        q = out_dir / "regimes.csv"
        write_csv(q, ["regime", "predicted_exponent", "fitted_exponent"],
                  [[rep_strong.regime, repr(rep_strong.exponent), repr(fit.fitted_exponent)]])
        report.artifacts.extend([str(p), str(q)])


# ---------------------------------------------------------------------------
# 8. Splitting-tree identities
# ---------------------------------------------------------------------------

def _schema_splitting() -> Schema:
    return (Schema()
            .add("splitting", "r", float, 1.0)
            .add("splitting", "gamma", float, 1.0, lo=1e-9)
            .add("splitting", "tau", float, 1.0, lo=1e-9)
            .add("splitting", "x0", float, 1.0, lo=0.0)
            .add("splitting", "t_mass", float, 3.0, lo=0.1)
            .add("splitting", "horizon_ext", float, 10.0, lo=1.0)
            .add("splitting", "t_identity", float, 1.5, lo=0.1)
            .add("splitting", "r_prolif", float, 2.0))


def run_splitting(cfg, out_dir: Path | None, report: RunReport):
    F = cat.half_law()
    params = sp.SplitParams(r=cfg["splitting.r"], gamma=cfg["splitting.gamma"],
                            tau=cfg["splitting.tau"], F=F)
    x0 = cfg["splitting.x0"]
    rng = RngStream(cfg["experiment.seed"])
    n_rep = _reps(cfg, 2000)

    t_mass = cfg["splitting.t_mass"]
    gen = rng.substream(0).generator()
    checks = [t_mass / 3.0, 2.0 * t_mass / 3.0, t_mass]
    step = t_mass / 24.0
    masses = np.empty((n_rep, 3))
    summary_rows, dump_rows = [], []
    for i in range(n_rep):
        tree = sp.simulate_splitting(params, x0, t_mass, 100_000, gen, step=step)
        m = tree.total_mass()
        for j, tc in enumerate(checks):
            masses[i, j] = m[int(round(tc / step))]
        if i == 0 and out_dir is not None:
            counts = tree.counts()
            infected = tree.infected_counts()
            for gi, tg in enumerate(tree.grid):
                loads = tree.loads_at_index(gi)
                summary_rows.append([repr(float(tg)), int(counts[gi]), int(infected[gi]),
                                     repr(float(np.mean(loads)) if len(loads) else 0.0)])
            for lab, nd in sorted(tree.nodes.items()):
                dump_rows.append(["".join(map(str, lab)) or "root", repr(nd.birth),
                                  repr(nd.division) if nd.division is not None else "",
                                  repr(nd.x_birth)])
    for j, tc in enumerate(checks):
        m, se = float(np.mean(masses[:, j])), float(np.std(masses[:, j], ddof=1) / math.sqrt(n_rep))
        target = x0 * math.exp(cfg["splitting.r"] * tc)
        report.add(f"splitting/mass-mean-t{round(tc, 3)}", target, m, se,
                   abs(m - target) <= 3 * se)

    chk = sp.total_mass_extinction(params, x0, cfg["splitting.horizon_ext"],
                                   max(n_rep * 10, 20000), rng.substream(1))
    report.add("splitting/extinction-freq", chk.target, chk.frequency, chk.stderr, chk.verdict)

    f = lambda xs: np.exp(-np.asarray(xs, dtype=float))
    t_id = cfg["splitting.t_identity"]
    good = sp.auxiliary_identity_check(params, f, t_id, max(n_rep * 2, 4000), rng.substream(2))
    report.add("splitting/identity-rate2", good.rhs, good.lhs,
               math.hypot(good.lhs_se, good.rhs_se), good.verdict)
    bad = sp.auxiliary_identity_check(params, f, t_id, max(n_rep * 2, 4000), rng.substream(3),
                                      rate_factor=1.0)
    report.add("splitting/identity-rate1-falsified", 5.0, bad.gap_se, 0.0, bad.gap_se > 5.0)

    rec = sp.recovery_classify(params, x0)
    report.add("splitting/recovers-r1", 1.0, 1.0 if rec.verdict == "recovers-a.s." else 0.0,
               0.0, rec.verdict == "recovers-a.s.")
    p2 = sp.SplitParams(r=cfg["splitting.r_prolif"], gamma=cfg["splitting.gamma"],
                        tau=cfg["splitting.tau"], F=F)
    rec2 = sp.recovery_classify(p2, x0)
    report.add("splitting/proliferates-r2", 1.0,
               1.0 if rec2.verdict == "proliferation-possible" else 0.0, 0.0,
               rec2.verdict == "proliferation-possible")
    if out_dir is not None:
        p = out_dir / "infection_summary.csv"
        write_csv(p, ["t", "N", "N_infected", "mean_load"], summary_rows)
        q = out_dir / "tree.csv"
        write_csv(q, ["label", "birth_t", "split_t", "load_at_birth"], dump_rows)
        report.artifacts.extend([str(p), str(q)])


# ---------------------------------------------------------------------------
# 9. Galton-Watson many-to-one
# ---------------------------------------------------------------------------

def _schema_gw() -> Schema:
    return (Schema()
            .add("gwtree", "tau", float, 1.0, lo=1e-9)
            .add("gwtree", "p0", float, 0.2, lo=0.0, hi=1.0)
            .add("gwtree", "p2", float, 0.8, lo=0.0, hi=1.0)
            .add("gwtree", "t", float, 2.0, lo=0.1)
            .add("gwtree", "x0", float, 1.0, lo=0.0)
            .add("gwtree", "r", float, 1.0)
            .add("gwtree", "gamma", float, 1.0, lo=0.0))


def run_gw(cfg, out_dir: Path | None, report: RunReport):
    law = gw.OffspringLaw(pmf=((0, cfg["gwtree.p0"]), (2, cfg["gwtree.p2"])))
    tau, t = cfg["gwtree.tau"], cfg["gwtree.t"]
    rng = RngStream(cfg["experiment.seed"])
    n_rep = _reps(cfg, 5000)

    gen = rng.substream(0).generator()
    counts = np.empty(n_rep)
    for i in range(n_rep):
        counts[i] = len(gw.simulate_gw_genealogy(tau, law, t, 100_000, gen).alive_at(t))
    target = math.exp(tau * (law.mean - 1.0) * t)
    m, se = float(np.mean(counts)), float(np.std(counts, ddof=1) / math.sqrt(n_rep))
    report.add("gw-many-to-one/mean-count", target, m, se, abs(m - target) <= 3 * se)

    F = cat.half_law()
    spec = gw.BranchingMarkovSpec(stepper=gw.feller_stepper(cfg["gwtree.r"], cfg["gwtree.gamma"]),
                                  branch_kernel=gw.sharing_kernel(F), tau=tau, offspring=law)

    def fn(ts, xs):
        return float(np.mean(np.exp(-xs)))

    good = gw.many_to_one_check(spec, fn, cfg["gwtree.x0"], t, max(n_rep, 4000),
                                rng.substream(1), aux_replicates=8 * n_rep)
    report.add("gw-many-to-one/path-functional", good.rhs, good.lhs,
               math.hypot(good.lhs_se, good.rhs_se), good.verdict)
    bad = gw.many_to_one_check(spec, fn, cfg["gwtree.x0"], t, max(n_rep, 6000),
                               rng.substream(2), aux_factor=1.0 / law.mean,
                               aux_replicates=8 * n_rep)
    report.add("gw-many-to-one/size-bias-falsified", 5.0, bad.gap_se, 0.0, bad.gap_se > 5.0)
    if out_dir is not None:
        p = out_dir / "many_to_one.csv"
        write_csv(p, ["functional_id", "lhs", "rhs", "stderr"],
                  [["mean-count", repr(m), repr(target), repr(se)],
                   ["exp-path-average", repr(good.lhs), repr(good.rhs),
                    repr(math.hypot(good.lhs_se, good.rhs_se))]])
        report.artifacts.append(str(p))


# ---------------------------------------------------------------------------
# 10. Individual-based model soundness
# ---------------------------------------------------------------------------

def _schema_ibm() -> Schema:
    return (Schema()
            .add("structpop", "K", int, 100, lo=2)
            .add("structpop", "p", float, 0.03, lo=0.0, hi=1.0)
            .add("structpop", "sigma", float, 0.1, lo=1e-6)
            .add("structpop", "x_init", float, 1.2, lo=0.0, hi=4.0)
            .add("structpop", "t_sound", float, 0.5, lo=0.05)
            .add("structpop", "reps_sound", int, 120, lo=10)
            .add("structpop", "t_gen", float, 0.5, lo=0.05)
            .add("structpop", "reps_gen", int, 250, lo=10)
            .add("structpop", "K_eq", int, 1000, lo=10)
            .add("structpop", "t_eq", float, 0.6, lo=0.05)
            .add("structpop", "eq_tol", float, 0.05, lo=1e-4))


def run_ibm(cfg, out_dir: Path | None, report: RunReport):
    K = cfg["structpop.K"]
    params = st.kisdi_params(K, p=cfg["structpop.p"], sigma=cfg["structpop.sigma"])
    x_init = cfg["structpop.x_init"]
    rng = RngStream(cfg["experiment.seed"])
    threads = cfg["experiment.threads"]

    n_s = cfg["structpop.reps_sound"]
    t_s = cfg["structpop.t_sound"]

    def final_n(chat_factor, sub):
        def one(i):
            res = st.simulate_ibm(params, np.full(K, x_init), t_s,
                                  rng.substream(sub).replicate(i), chat_factor=chat_factor)
            return len(res.final_traits)
        return np.array(parallel_map(one, n_s, threads), dtype=float)

    a = final_n(1.0, 0)
    b = final_n(2.0, 1)
    ks = sstats.ks_2samp(a, b)
    report.add("ibm/chat-doubling-ks", 0.01, float(ks.pvalue), 0.0, ks.pvalue >= 0.01)

    chk = st.generator_moment_check(params, lambda xs: np.ones_like(np.asarray(xs, dtype=float)),
                                    np.full(K, x_init), cfg["structpop.t_gen"],
                                    cfg["structpop.reps_gen"], rng.substream(2), qv_tol=0.15)
    report.add("ibm/f1-martingale-residual", 0.0, chk.residual, chk.residual_se,
               abs(chk.residual) <= 3 * chk.residual_se)

    Keq = cfg["structpop.K_eq"]
    peq = st.kisdi_params(Keq, p=0.0)
    C0 = Keq * float(peq.comp(np.array([0.0]))[0])
    n_star = peq.birth(x_init) / C0
    res = st.simulate_ibm(peq, np.full(int(round(Keq * n_star)), x_init),
                          cfg["structpop.t_eq"], rng.substream(3))
    # time-average of N/K over the second half of the run, weighted exactly
    ts = np.concatenate([[0.0], res.event_times, [cfg["structpop.t_eq"]]])
    ns = np.concatenate([[round(Keq * n_star)], res.population,
                         [res.population[-1] if len(res.population) else round(Keq * n_star)]])
    t_half = 0.5 * cfg["structpop.t_eq"]
    w = np.clip(np.diff(ts), 0.0, None)
    mask = ts[:-1] >= t_half
    avg = float(np.sum(w[mask] * ns[:-1][mask]) / np.sum(w[mask])) / Keq
    tol = cfg["structpop.eq_tol"]
    report.add("ibm/monomorphic-equilibrium", n_star, avg, tol * n_star,
               abs(avg - n_star) <= tol * n_star)

    if out_dir is not None:
        snap_ts = np.linspace(0.1, t_s, 5)
        res1 = st.simulate_ibm(params, np.full(K, x_init), t_s, rng.substream(4),
                               snapshot_times=snap_ts)
        hist_rows = []
        bins = np.arange(0.0, 4.0 + 0.02, 0.02)
        for t_snap, snap in res1.snapshots:
            counts, _ = np.histogram(snap, bins=bins)
            for bi, cnt in enumerate(counts):
                if cnt:
                    hist_rows.append([repr(float(t_snap)), repr(float(bins[bi])), int(cnt)])
        p = out_dir / "trait_histogram.csv"
        write_csv(p, ["t", "trait_bin", "count"], hist_rows)
        q = out_dir / "population.csv"
        write_csv(q, ["t", "N"], [[repr(float(t)), int(n)] for t, n
                                  in zip(res1.event_times, res1.population)])
        report.artifacts.extend([str(p), str(q)])


# ---------------------------------------------------------------------------
# 11. Kernel property suite
# ---------------------------------------------------------------------------

def _schema_kernel() -> Schema:
    return (Schema()
            .add("kernel", "ppm_rate", float, 2.0, lo=1e-9)
            .add("kernel", "ppm_horizon", float, 5.0, lo=0.1)
            .add("kernel", "n_ppm", int, 4000, lo=100)
            .add("kernel", "n_compensated", int, 4000, lo=100)
            .add("kernel", "n_branching", int, 20000, lo=100))


def run_kernel_props(cfg, out_dir: Path | None, report: RunReport):
    rng = RngStream(cfg["experiment.seed"])

    # bit-identical rerun of a representative batch
    mech = csbp.feller_mechanism(0.5, 1.0)
    a = csbp.csbp_sde_batch(mech, 1.0, 1.0, 0.01, 0.01, 200, RngStream(cfg["experiment.seed"], 7))
    b = csbp.csbp_sde_batch(mech, 1.0, 1.0, 0.01, 0.01, 200, RngStream(cfg["experiment.seed"], 7))
    identical = bool(np.array_equal(a, b))
    report.add("kernel/determinism-bitwise", 1.0, 1.0 if identical else 0.0, 0.0, identical)

    # Poisson count law
    n_ppm = cfg["kernel.n_ppm"]
    lam_mean = cfg["kernel.ppm_rate"] * cfg["kernel.ppm_horizon"]
    intensity = MarkIntensity(cfg["kernel.ppm_rate"], lambda g, n: np.ones(n))
    gen = rng.substream(0).generator()
    counts = np.array([sample_ppm(intensity, cfg["kernel.ppm_horizon"], gen).count()
                       for _ in range(n_ppm)])
    kmax = int(counts.max())
    obs = np.bincount(counts, minlength=kmax + 1)
    pmf = sstats.poisson.pmf(np.arange(kmax + 1), lam_mean)
    pmf[-1] = 1.0 - pmf[:-1].sum()
    # pool bins with small expectation
    exp_counts = pmf * n_ppm
    keep = exp_counts >= 5
    o = np.append(obs[keep], obs[~keep].sum())
    e = np.append(exp_counts[keep], exp_counts[~keep].sum())
    chi2 = float(np.sum((o - e) ** 2 / e))
    pval = float(sstats.chi2.sf(chi2, len(o) - 1))
    report.add("kernel/ppm-poisson-chisq", 0.01, pval, 0.0, pval >= 0.01)

    # compensated integral has mean zero for a bounded predictable integrand
    n_c = cfg["kernel.n_compensated"]
    gen = rng.substream(1).generator()
    horizon = cfg["kernel.ppm_horizon"]
    rate = cfg["kernel.ppm_rate"]
    comp = rate * (1.0 - math.cos(horizon))  # int_0^T sin(s) rate ds
    vals = np.empty(n_c)
    for i in range(n_c):
        s = sample_ppm(MarkIntensity(rate, lambda g, n: np.ones(n)), horizon, gen)
        vals[i] = float(np.sum(np.sin(s.times))) - comp
    m, se = float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_c))
    report.add("kernel/compensated-mean-zero", 0.0, m, se, abs(m) <= 3 * se)

    # branching property: law(Z from z1+z2) = law(sum of independent copies)
    n_b = cfg["kernel.n_branching"]
    z1, z2 = 1.0, 2.0
    pa = csbp.csbp_sde_batch(mech, z1 + z2, 1.0, 0.004, 0.01, n_b, rng.substream(2))[:, -1]
    pb = (csbp.csbp_sde_batch(mech, z1, 1.0, 0.004, 0.01, n_b, rng.substream(3))[:, -1]
          + csbp.csbp_sde_batch(mech, z2, 1.0, 0.004, 0.01, n_b, rng.substream(4))[:, -1])
    ks = sstats.ks_2samp(pa, pb)
    report.add("kernel/branching-property-ks", 0.01, float(ks.pvalue), 0.0, ks.pvalue >= 0.01)

    # quenched Laplace multiplicativity is an exact identity
    gen = rng.substream(5).generator()
    worst = 0.0
    for _ in range(200):
        env = cat.sample_env(0.4, 1.3, cat.half_law(), 3.0, gen)
        y1, y2, lam = gen.uniform(0.1, 3.0, size=3)
        v = cat.quenched_laplace(0.4, 1.0, env, y1 + y2, lam, 3.0)
        v12 = (cat.quenched_laplace(0.4, 1.0, env, y1, lam, 3.0)
               * cat.quenched_laplace(0.4, 1.0, env, y2, lam, 3.0))
        worst = max(worst, abs(v - v12) / max(v, 1e-300))
    report.add("kernel/quenched-multiplicativity", 0.0, worst, 1e-12, worst <= 1e-12)

    # mass conservation at division is bitwise
    gen = rng.substream(6).generator()
    exact = True
    for _ in range(1000):
        x = float(gen.uniform(0.0, 10.0))
        theta = float(gen.uniform(0.0, 1.0))
        x1, x2 = split_mass(x, theta)
        exact &= (x1 + x2) == x
    report.add("kernel/mass-conservation-bitwise", 1.0, 1.0 if exact else 0.0, 0.0, exact)

    # stable-path symmetry: mean of S_t over replicates within 3 se of 0
    gen = rng.substream(8).generator()
    finals = np.array([simulate_stable_symmetric(1.5, 0.01, 1.0, 0.01, gen).values[-1]
                       for _ in range(1500)])
    m, se = float(np.mean(finals)), float(np.std(finals, ddof=1) / math.sqrt(len(finals)))
    report.add("kernel/stable-symmetry", 0.0, m, se, abs(m) <= 3 * se)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    schema_factory: Callable[[], Schema]
    runner: Callable[[dict, Path | None, RunReport], None]
    criterion: int      # headline acceptance criterion this experiment covers


_REGISTRY: dict[str, Experiment] = {}


def _register(name, description, schema_factory, runner, criterion):
    _REGISTRY[name] = Experiment(name, description, schema_factory, runner, criterion)


_register("bd-extinction-linear",
          "linear birth-death extinction frequency against the closed-form power",
          _schema_bd_extinction, run_bd_extinction, 1)
_register("bd-mean-extinction-logistic",
          "logistic mean extinction time: series vs linear solve vs Monte Carlo",
          _schema_bd_meantime, run_bd_meantime, 2)
_register("scaling-deterministic-limit",
          "scaled chains approach the logistic ODE as K grows",
          _schema_scaling_det, run_scaling_det, 3)
_register("scaling-random-env-stationary",
          "random-environment logistic diffusion matches its Gamma stationary law",
          _schema_scaling_env, run_scaling_env, 4)
_register("csbp-laplace-cross",
          "branching-diffusion Laplace transform against the exponent ODE",
          _schema_csbp_laplace, run_csbp_laplace, 5)
_register("csbp-lamperti-stable",
          "jump-SDE and time-change simulators agree for the heavy-tail mechanism",
          _schema_csbp_lamperti, run_csbp_lamperti, 6)
_register("catastrophe-regimes",
          "survival-decay regime classification and tail fits",
          _schema_cat_regimes, run_cat_regimes, 7)
_register("splitting-identities",
          "cell-tree mass identities, rate-doubled lineage identity, recovery classifier",
          _schema_splitting, run_splitting, 8)
_register("gwtree-many-to-one",
          "branching Markov many-to-one identity with size-bias falsification",
          _schema_gw, run_gw, 9)
_register("ibm-soundness",
          "individual-based model: dominator invariance, martingale residual, equilibrium",
          _schema_ibm, run_ibm, 10)
_register("kernel-properties",
          "determinism, Poisson counts, compensated integrals, exact identities",
          _schema_kernel, run_kernel_props, 11)


def list_experiments() -> list[Experiment]:
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


def get_experiment(name: str) -> Experiment:
    if name not in _REGISTRY:
        raise KeyError(f"unknown experiment {name!r}; see `popdyn list`")
    return _REGISTRY[name]


def run_experiment(name: str, cfg: dict, out_dir: Path | None = None) -> RunReport:
    exp = get_experiment(name)
    report = RunReport(experiment=name, seed=cfg["experiment.seed"],
                       config_digest=config_hash(cfg))
    exp.runner(cfg, out_dir, report)
    if out_dir is not None:
        write_report(report, out_dir)
    return report
