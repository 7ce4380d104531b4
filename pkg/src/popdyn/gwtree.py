"""Branching Markov processes along continuous-time Galton-Watson genealogies:
tree construction with exponential lifetimes and integer offspring counts,
trait dynamics along edges with non-local branching kernels, the size-biased
auxiliary lineage process, many-to-one verification, and the empirical law of
large numbers for the trait distribution.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernel import (RngStream, feller_transition, intensity_generator, split_mass,
                     sqrt_immigration_transition)

Label = tuple[int, ...]


# ---------------------------------------------------------------------------
# Offspring laws and genealogies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution (p_k).  Mean and second moment
    are computed at construction; supercriticality (m > 1) is required by the
    long-time statements but degenerate laws are accepted for simulation."""

    pmf: tuple[tuple[int, float], ...]

    def __post_init__(self):
        total = sum(p for _, p in self.pmf)
        if abs(total - 1.0) > 1e-12:
            raise ValueError("offspring probabilities must sum to 1")
        if any(k < 0 or p < 0 for k, p in self.pmf):
            raise ValueError("invalid offspring law")

    @property
    def mean(self) -> float:
        return sum(k * p for k, p in self.pmf)

    @property
    def second_moment(self) -> float:
        return sum(k * k * p for k, p in self.pmf)

    @property
    def supercritical(self) -> bool:
        return self.mean > 1.0

    def sample(self, gen: np.random.Generator, n: int = 1) -> np.ndarray:
        ks = np.array([k for k, _ in self.pmf])
        ps = np.array([p for _, p in self.pmf])
        return gen.choice(ks, size=n, p=ps)

    def size_biased_sample(self, gen: np.random.Generator) -> int:
        """Draw k with probability k p_k / m (k = 0 never chosen)."""
        ks = np.array([k for k, _ in self.pmf], dtype=float)
        ps = np.array([p for _, p in self.pmf])
        w = ks * ps
        w = w / w.sum()
        return int(gen.choice(ks.astype(int), p=w))


@dataclass
class GWNode:
    label: Label
    birth: float
    death: float                 # division/death time (inf if alive at horizon)
    n_offspring: int             # -1 when right-censored at the horizon
    # trait decoration, filled by the branching Markov simulation
    x_birth: float = math.nan
    x_death: float = math.nan
    grid_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class GWTree:
    horizon: float
    nodes: dict[Label, GWNode]
    truncated: bool = False

    def alive_at(self, t: float) -> list[Label]:
        return [lab for lab, nd in self.nodes.items() if nd.birth <= t < nd.death]

    def counts(self, grid: np.ndarray) -> np.ndarray:
        ns = np.zeros(len(grid), dtype=np.int64)
        for nd in self.nodes.values():
            lo = np.searchsorted(grid, nd.birth, side="left")
            hi = np.searchsorted(grid, nd.death, side="right")
            ns[lo:hi] += 1
        return ns


def simulate_gw_genealogy(tau: float, offspring: OffspringLaw, horizon: float,
                          max_nodes: int, rng: RngStream | np.random.Generator) -> GWTree:
    """Genealogy from a single root: iid Exponential(tau) lifetimes, offspring
    counts iid from the law; children are born at the parent's death."""
    gen = intensity_generator(rng)
    tree = GWTree(horizon=horizon, nodes={})
    heap: list[tuple[float, int, Label]] = [(0.0, 0, ())]
    counter = 0
    created = 1
    while heap:
        birth, _, label = heapq.heappop(heap)
        death = birth + gen.exponential(1.0 / tau)
        if death > horizon:
            tree.nodes[label] = GWNode(label, birth, math.inf, -1)
            continue
        k = int(offspring.sample(gen, 1)[0])
        tree.nodes[label] = GWNode(label, birth, death, k)
        if created + k > max_nodes:
            tree.truncated = True
            continue
        for j in range(1, k + 1):
            counter += 1
            heapq.heappush(heap, (death, counter, label + (j,)))
        created += k
    return tree


# ---------------------------------------------------------------------------
# Trait dynamics along the tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BranchingMarkovSpec:
    """Trait stepper (Markov transition sampler between branch events),
    branching kernels P^(k) as samplers, branching rate tau and offspring law.

    Offspring-trait marginals are made identical across coordinates by a
    uniform permutation applied to every kernel draw.
    """

    stepper: Callable[[float, float, np.random.Generator], float]
    branch_kernel: Callable[[float, int, np.random.Generator], Sequence[float]]
    tau: float
    offspring: OffspringLaw

    def branch(self, x: float, k: int, gen: np.random.Generator) -> list[float]:
        kids = list(self.branch_kernel(x, k, gen))
        if len(kids) != k:
            raise ValueError("branch kernel returned wrong arity")
        gen.shuffle(kids)
        return kids


def constant_stepper(x: float, dt: float, gen: np.random.Generator) -> float:
    return x


def feller_stepper(r: float, gamma: float):
    def step(x, dt, gen):
        return feller_transition(x, r, gamma, dt, gen)
    return step


def sqrt_drift_stepper(drift: float, gamma: float):
    """Additive-drift square-root diffusion (ergodic under multiplicative
    down-jumps); exact noncentral chi-square transitions."""
    def step(x, dt, gen):
        return sqrt_immigration_transition(x, drift, gamma, dt, gen)
    return step


def sharing_kernel(F):
    """Binary conservation kernel (theta x, (1-theta) x) with theta ~ F;
    arity 0 and 1 degenerate gracefully."""
    def kernel(x, k, gen):
        if k == 0:
            return ()
        if k == 1:
            return (x,)
        if k == 2:
            theta = float(F.sample(gen, 1)[0])
            return split_mass(x, theta)
        raise ValueError("sharing kernel is binary")
    return kernel


def copy_kernel(x, k, gen):
    return (x,) * k


def simulate_branching_markov(spec: BranchingMarkovSpec, x0: float, horizon: float,
                              rng: RngStream | np.random.Generator, step: float,
                              max_nodes: int = 200_000) -> tuple[GWTree, np.ndarray]:
    """Genealogy plus per-node trait paths recorded on the global grid.

    The branching rate is trait-independent, so the genealogy is drawn first
    and traits are filled along edges in birth order; offspring initial traits
    come from the permuted kernel draw at the parent's death.
    """
    gen = intensity_generator(rng)
    tree = simulate_gw_genealogy(spec.tau, spec.offspring, horizon, max_nodes, gen)
    n = int(round(horizon / step))
    grid = np.linspace(0.0, n * step, n + 1)

    order = sorted(tree.nodes.values(), key=lambda nd: (nd.birth, nd.label))
    inits: dict[Label, float] = {(): float(x0)}
    for nd in order:
        x = inits.pop(nd.label)
        nd.x_birth = x
        t_cur = x_cur = None
        gi = int(np.searchsorted(grid, nd.birth, side="left" if nd.birth == 0.0 else "right"))
        t_cur, x_cur = nd.birth, x
        idxs, vals = [], []
        end = min(nd.death, horizon)
        while gi <= n and grid[gi] <= end:
            x_cur = spec.stepper(x_cur, grid[gi] - t_cur, gen)
            t_cur = grid[gi]
            idxs.append(gi)
            vals.append(x_cur)
            gi += 1
        nd.grid_idx = np.array(idxs, dtype=np.int64)
        nd.values = np.array(vals)
        if nd.death <= horizon:
            x_cur = spec.stepper(x_cur, nd.death - t_cur, gen)
            nd.x_death = x_cur
            if nd.n_offspring > 0 and (nd.label + (1,)) in tree.nodes:
                kids = spec.branch(x_cur, nd.n_offspring, gen)
                for j, xk in enumerate(kids, start=1):
                    inits[nd.label + (j,)] = float(xk)
    return tree, grid


def ancestral_path(tree: GWTree, grid: np.ndarray, leaf: Label, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Trait path of the ancestral line of ``leaf`` sampled at grid times <= t."""
    cut = np.searchsorted(grid, t, side="right")
    vals = np.full(cut, math.nan)
    lab = leaf
    while True:
        nd = tree.nodes[lab]
        take = nd.grid_idx[nd.grid_idx < cut]
        vals[take] = nd.values[: len(take)]
        if not lab:
            if len(nd.grid_idx) == 0 or nd.grid_idx[0] != 0:
                vals[0] = nd.x_birth
            break
        lab = lab[:-1]
    return grid[:cut], vals


# ---------------------------------------------------------------------------
# Auxiliary process and many-to-one
# ---------------------------------------------------------------------------

def auxiliary_path(spec: BranchingMarkovSpec, x0: float, grid: np.ndarray,
                   gen: np.random.Generator, jump_rate: float | None = None) -> np.ndarray:
    """Single-lineage process: the trait stepper plus jumps at rate tau*m whose
    law is the size-biased kernel marginal (sample k with probability k p_k/m,
    apply the kernel, keep one coordinate).

    ``jump_rate`` overrides tau*m, which is only useful to demonstrate that a
    wrong rate breaks the many-to-one identity.
    """
    rate = spec.tau * spec.offspring.mean if jump_rate is None else jump_rate
    vals = np.empty(len(grid))
    vals[0] = x = float(x0)
    t_cur = grid[0]
    next_jump = t_cur + (gen.exponential(1.0 / rate) if rate > 0 else math.inf)
    for i in range(1, len(grid)):
        target = grid[i]
        while next_jump < target:
            x = spec.stepper(x, next_jump - t_cur, gen)
            t_cur = next_jump
            k = spec.offspring.size_biased_sample(gen)
            kids = spec.branch(x, k, gen)
            x = float(kids[0])
            next_jump = t_cur + gen.exponential(1.0 / rate)
        x = spec.stepper(x, target - t_cur, gen)
        t_cur = target
        vals[i] = x
    return vals


@dataclass
class ManyToOneResult:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    gap_se: float
    verdict: bool


def many_to_one_check(spec: BranchingMarkovSpec, functional: Callable[[np.ndarray, np.ndarray], float],
                      x0: float, t: float, replicates: int, rng: RngStream,
                      step: float | None = None, aux_factor: float | None = None,
                      aux_replicates: int | None = None, tol_se: float = 3.0) -> ManyToOneResult:
    """lhs = E sum over individuals alive at t of functional(ancestral path);
    rhs = e^{tau (m-1) t} * E functional(auxiliary path).

    ``aux_factor`` rescales the auxiliary jump rate away from tau*m for the
    falsification control.  The functional receives (times, values) on the
    common grid and may depend on the whole path.
    """
    step = step or t / 50.0
    gen_tree = rng.substream(0).generator()
    vals = np.empty(replicates)
    for i in range(replicates):
        tree, grid = simulate_branching_markov(spec, x0, t, gen_tree, step)
        total = 0.0
        for leaf in tree.alive_at(t):
            ts, xs = ancestral_path(tree, grid, leaf, t)
            total += functional(ts, xs)
        vals[i] = total
    lhs, lhs_se = float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(replicates))

    n_aux = aux_replicates or 4 * replicates
    gen_aux = rng.substream(1).generator()
    n = int(round(t / step))
    grid = np.linspace(0.0, n * step, n + 1)
    rate = spec.tau * spec.offspring.mean * (aux_factor if aux_factor else 1.0)
    ys = np.empty(n_aux)
    for i in range(n_aux):
        path = auxiliary_path(spec, x0, grid, gen_aux, jump_rate=rate)
        ys[i] = functional(grid, path)
    scale = math.exp(spec.tau * (spec.offspring.mean - 1.0) * t)
    rhs = scale * float(np.mean(ys))
    rhs_se = scale * float(np.std(ys, ddof=1) / math.sqrt(n_aux))
    comb = math.hypot(lhs_se, rhs_se)
    gap = abs(lhs - rhs) / comb
    return ManyToOneResult(lhs, lhs_se, rhs, rhs_se, gap, bool(gap <= tol_se))


# ---------------------------------------------------------------------------
# Law of large numbers for the trait distribution
# ---------------------------------------------------------------------------

@dataclass
class LlnResult:
    t_grid: np.ndarray
    averages: np.ndarray        # (n_rep, len(t_grid)), nan where extinct
    extinct_fraction: np.ndarray
    pi_f: float                 # long-run surrogate from one auxiliary path
    dispersion: np.ndarray      # cross-replicate std of the averages per time


def lln_empirical(spec: BranchingMarkovSpec, f: Callable[[np.ndarray], np.ndarray],
                  x0: float, t_grid: Sequence[float], replicates: int, rng: RngStream,
                  step: float = 0.05, pi_run_length: float | None = None) -> LlnResult:
    """Empirical trait average (1/N_t) sum f(X^i_t) per replicate, conditioned
    on survival by rejection, against the stationary surrogate pi(f) computed
    as the time average of one long auxiliary run (20% burn-in)."""
    t_grid = np.asarray(t_grid, dtype=float)
    horizon = float(t_grid[-1])
    gen = rng.substream(0).generator()
    avgs = np.full((replicates, len(t_grid)), np.nan)
    for i in range(replicates):
        tree, grid = simulate_branching_markov(spec, x0, horizon, gen, step)
        for j, t in enumerate(t_grid):
            gi = int(round(t / step))
            loads = []
            for leaf in tree.alive_at(t):
                nd = tree.nodes[leaf]
                pos = np.searchsorted(nd.grid_idx, gi)
                if pos < len(nd.grid_idx) and nd.grid_idx[pos] == gi:
                    loads.append(nd.values[pos])
                elif gi == 0 and not leaf:
                    loads.append(nd.x_birth)
            if loads:
                avgs[i, j] = float(np.mean(f(np.asarray(loads))))
    length = pi_run_length if pi_run_length is not None else 100.0 / spec.tau
    n = int(round(length / step))
    grid = np.linspace(0.0, n * step, n + 1)
    path = auxiliary_path(spec, x0, grid, rng.substream(1).generator())
    burn = int(0.2 * len(path))
    pi_f = float(np.mean(f(path[burn:])))
    extinct = np.mean(np.isnan(avgs), axis=0)
    disp = np.array([np.nanstd(avgs[:, j]) for j in range(len(t_grid))])
    return LlnResult(t_grid=t_grid, averages=avgs, extinct_fraction=extinct,
                     pi_f=pi_f, dispersion=disp)
