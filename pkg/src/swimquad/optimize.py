"""NSGA-II gait search with a weighted scalar ranking of the final front."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dynamics import BodyConfig, Trajectory, simulate_batch
from .hydro import EfParams
from .kinematics import GaitParams, LinkageGeometry, LinkageInfeasible

GENE_NAMES = ("theta_H_min", "theta_K_max", "freq", "alpha_LF", "alpha_RF", "alpha_LH", "alpha_RH")
LOWER = np.array([math.radians(-50.0), math.radians(-80.0), 0.2, 0.0, 0.0, 0.0, 0.0])
UPPER = np.array([math.radians(10.0), math.radians(-20.0), 0.65] + [2.0 * math.pi] * 4)
ALPHA = slice(3, 7)
GAIT_PHI = math.pi / 3
WEIGHTS = (1.0, 4.0, 2.0)


@dataclass
class Individual:
    genes: np.ndarray
    objectives: tuple = (math.inf, math.inf, math.inf)
    rank: int = -1
    crowding: float = 0.0
    status: str = "unevaluated"

    @property
    def feasible(self) -> bool:
        return all(math.isfinite(v) for v in self.objectives)


@dataclass(frozen=True)
class OptConfig:
    mode: str = "straight"
    population: int = 100
    generations: int = 50
    crossover_prob: float = 0.9
    mutation_prob: float = 1.0 / 7.0
    sbx_eta: float = 15.0
    pm_eta: float = 20.0
    seed: int = 0
    weights: tuple = WEIGHTS
    retain_k: int = 8
    chunk: int = 50

    def __post_init__(self):
        if self.mode not in ("straight", "turn"):
            raise ValueError(f"mode must be straight or turn, got {self.mode!r}")
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be an even number >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not (0 <= self.crossover_prob <= 1 and 0 <= self.mutation_prob <= 1):
            raise ValueError("crossover_prob and mutation_prob must lie in [0, 1]")
        if len(self.weights) != 3 or self.retain_k < 1 or self.chunk < 1:
            raise ValueError("need three weights, retain_k >= 1 and chunk >= 1")


def genes_to_gait(genes) -> GaitParams:
    g = np.asarray(genes, dtype=float)
    return GaitParams(float(g[0]), float(g[1]), float(g[2]), GAIT_PHI, tuple(float(a) for a in g[ALPHA]))


def gait_to_genes(gait: GaitParams) -> np.ndarray:
    return np.array([gait.theta_H_min, gait.theta_K_max, gait.freq, *gait.alpha])


def genes_dict(genes) -> dict:
    g = np.asarray(genes, dtype=float)
    return {"theta_H_min_deg": math.degrees(g[0]), "theta_K_max_deg": math.degrees(g[1]),
            "freq": float(g[2]), "alpha": [float(a) for a in g[ALPHA]]}


def clip_genes(genes: np.ndarray) -> np.ndarray:
    out = np.clip(genes, LOWER, UPPER)
    out[..., ALPHA] = np.mod(out[..., ALPHA], 2.0 * math.pi)
    return out


def random_genes(rng: np.random.Generator, n: int) -> np.ndarray:
    return clip_genes(rng.uniform(LOWER, UPPER, size=(n, len(GENE_NAMES))))


# --- objectives --------------------------------------------------------------

def evaluate_objectives(traj: Trajectory, mode: str) -> tuple[float, float, float]:
    t_final = traj.t_final
    if mode == "straight":
        f1 = -float(np.sum(traj.wrench[:, 4]) * traj.dt)
        f2 = abs(float(traj.yaw[-1]) - 0.0)
    elif mode == "turn":
        f1 = float(np.sum(np.hypot(np.diff(traj.x), np.diff(traj.y))))
        f2 = abs(float(traj.yaw[-1]) - 2.0 * math.pi * traj.turn_direction)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return (f1, f2, float(t_final))


def scalar_score(objectives, weights=WEIGHTS) -> float:
    w1, w2, w3 = weights
    f1, f2, f3 = objectives
    return w1 * f1 + w2 * f2 + w3 * f3


# --- sorting and crowding ------------------------------------------------------

def dominates(a, b) -> bool:
    a = np.asarray(a)
    b = np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def nondominated_sort(objs) -> list[list[int]]:
    """Pareto fronts (lists of indices, ascending) for minimization."""
    F = np.asarray(objs, dtype=float)
    n = len(F)
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=-1)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=-1)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current.tolist())
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(objs) -> np.ndarray:
    F = np.asarray(objs, dtype=float)
    n, m = F.shape
    d = np.zeros(n)
    if n <= 2:
        d[:] = math.inf
        return d
    for j in range(m):
        order = np.argsort(F[:, j], kind="stable")
        col = F[order, j]
        d[order[0]] = d[order[-1]] = math.inf
        span = col[-1] - col[0]
        if not np.isfinite(span) or span <= 0:
            continue
        gaps = (col[2:] - col[:-2]) / span
        gaps[~np.isfinite(gaps)] = 0.0
        d[order[1:-1]] += gaps
    return d


def rank_and_crowd(objs):
    fronts = nondominated_sort(objs)
    rank = np.empty(len(objs), dtype=int)
    crowd = np.empty(len(objs))
    for r, front in enumerate(fronts):
        rank[front] = r
        crowd[front] = crowding_distance(np.asarray(objs)[front])
    return fronts, rank, crowd


# --- variation -------------------------------------------------------------

def tournament(rank, crowd, rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.integers(0, len(rank), size=n)
    b = rng.integers(0, len(rank), size=n)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def sbx_pair(p1, p2, eta, lo, hi, rng):
    c1, c2 = p1.copy(), p2.copy()
    for i in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        u = rng.random()
        children = []
        for beta in (1.0 + 2.0 * (y1 - lo[i]) / (y2 - y1), 1.0 + 2.0 * (hi[i] - y2) / (y2 - y1)):
            alpha = 2.0 - beta ** (-(eta + 1.0))
            if u <= 1.0 / alpha:
                bq = (u * alpha) ** (1.0 / (eta + 1.0))
            else:
                bq = (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
            children.append(bq)
        lo_child = 0.5 * ((y1 + y2) - children[0] * (y2 - y1))
        hi_child = 0.5 * ((y1 + y2) + children[1] * (y2 - y1))
        if rng.random() < 0.5:
            lo_child, hi_child = hi_child, lo_child
        c1[i], c2[i] = lo_child, hi_child
    return c1, c2


def polynomial_mutation(x, prob, eta, lo, hi, rng):
    y = x.copy()
    for i in range(len(x)):
        if rng.random() >= prob:
            continue
        span = hi[i] - lo[i]
        d1 = (y[i] - lo[i]) / span
        d2 = (hi[i] - y[i]) / span
        u = rng.random()
        p = 1.0 / (eta + 1.0)
        if u < 0.5:
            v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            dq = v**p - 1.0
        else:
            v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - v**p
        y[i] = y[i] + dq * span
    return y


def make_offspring(genes, rank, crowd, cfg: OptConfig, rng: np.random.Generator) -> np.ndarray:
    """Binary tournament, SBX, polynomial mutation, then clip (and wrap the phases)."""
    genes = np.asarray(genes, dtype=float)
    n = len(genes)
    winners = genes[tournament(np.asarray(rank), np.asarray(crowd), rng, n)]
    out = np.empty_like(winners)
    for k in range(0, n, 2):
        p1 = winners[k]
        p2 = winners[(k + 1) % n]
        if rng.random() < cfg.crossover_prob:
            c1, c2 = sbx_pair(p1, p2, cfg.sbx_eta, LOWER, UPPER, rng)
        else:
            c1, c2 = p1.copy(), p2.copy()
        out[k] = polynomial_mutation(c1, cfg.mutation_prob, cfg.pm_eta, LOWER, UPPER, rng)
        if k + 1 < n:
            out[k + 1] = polynomial_mutation(c2, cfg.mutation_prob, cfg.pm_eta, LOWER, UPPER, rng)
    return clip_genes(out)


# --- evaluation --------------------------------------------------------------

Evaluator = Callable[[np.ndarray], tuple[np.ndarray, list]]


def simulation_evaluator(model="EF", mode: str = "straight", body: BodyConfig = BodyConfig(),
                         ef: EfParams = EfParams(), geom: LinkageGeometry = LinkageGeometry(),
                         chunk: int = 50) -> Evaluator:
    """Objectives for a block of genomes; failures score +inf instead of raising."""

    def run(gaits):
        try:
            return simulate_batch(gaits, model, body, mode, ef, geom)
        except LinkageInfeasible as exc:
            if len(gaits) == 1:
                return [str(exc)]
            return [r for g in gaits for r in run([g])]

    def evaluate(genes):
        genes = np.asarray(genes, dtype=float)
        objs = np.full((len(genes), 3), math.inf)
        status = []
        gaits = [genes_to_gait(g) for g in genes]
        for s in range(0, len(gaits), chunk):
            for i, tr in enumerate(run(gaits[s:s + chunk]), start=s):
                if isinstance(tr, str):
                    status.append(f"infeasible: {tr}")
                elif tr.status == "diverged":
                    status.append(f"infeasible: {tr.error}")
                else:
                    objs[i] = evaluate_objectives(tr, mode)
                    if not np.all(np.isfinite(objs[i])):
                        objs[i] = math.inf
                        status.append("infeasible: non-finite objective")
                    else:
                        status.append(tr.status)
        return objs, status

    return evaluate


# --- main loop ---------------------------------------------------------------

@dataclass
class GenerationSummary:
    generation: int
    front_size: int
    n_infeasible: int
    best_S: float
    archive_best_S: float
    front_min: list

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NsgaResult:
    population: list[Individual]
    front: list[Individual]
    archive: list[Individual]
    history: list[GenerationSummary] = field(default_factory=list)
    archive_best: Individual | None = None


def _individuals(genes, objs, status):
    return [Individual(g.copy(), tuple(float(v) for v in o), status=s) for g, o, s in zip(genes, objs, status)]


def _select(genes, objs, status, n):
    fronts = nondominated_sort(objs)
    chosen = []
    for front in fronts:
        if len(chosen) + len(front) <= n:
            chosen.extend(front)
            continue
        crowd = crowding_distance(objs[front])
        order = np.argsort(-crowd, kind="stable")
        chosen.extend(np.asarray(front)[order[: n - len(chosen)]].tolist())
        break
    idx = np.asarray(chosen)
    return genes[idx], objs[idx], [status[i] for i in idx]


def nsga2_run(cfg: OptConfig, evaluate: Evaluator, log=None) -> NsgaResult:
    rng = np.random.default_rng(cfg.seed)
    genes = random_genes(rng, cfg.population)
    objs, status = evaluate(genes)
    archive = _individuals(genes, objs, status)
    best = min(archive, key=lambda ind: scalar_score(ind.objectives, cfg.weights))
    history = []

    def summarize(gen, objs):
        fronts = nondominated_sort(objs)
        first = objs[fronts[0]]
        s = np.array([scalar_score(o, cfg.weights) for o in objs])
        summary = GenerationSummary(
            generation=gen, front_size=len(fronts[0]),
            n_infeasible=int(np.sum(~np.all(np.isfinite(objs), axis=1))),
            best_S=float(s.min()), archive_best_S=scalar_score(best.objectives, cfg.weights),
            front_min=[float(v) for v in first.min(axis=0)])
        history.append(summary)
        if log:
            log(f"generation {gen}: front {summary.front_size}, best S {summary.best_S:.4f}, "
                f"archive best S {summary.archive_best_S:.4f}")

    summarize(0, objs)
    for gen in range(1, cfg.generations + 1):
        _, rank, crowd = rank_and_crowd(objs)
        child = make_offspring(genes, rank, crowd, cfg, rng)
        c_objs, c_status = evaluate(child)
        children = _individuals(child, c_objs, c_status)
        archive.extend(children)
        cand = min(children, key=lambda ind: scalar_score(ind.objectives, cfg.weights))
        if scalar_score(cand.objectives, cfg.weights) < scalar_score(best.objectives, cfg.weights):
            best = cand
        genes, objs, status = _select(np.vstack([genes, child]), np.vstack([objs, c_objs]),
                                      status + c_status, cfg.population)
        summarize(gen, objs)

    fronts, rank, crowd = rank_and_crowd(objs)
    population = _individuals(genes, objs, status)
    for ind, r, c in zip(population, rank, crowd):
        ind.rank, ind.crowding = int(r), float(c)
    front = [population[i] for i in fronts[0]]
    return NsgaResult(population, front, archive, history, best)


@dataclass
class RankedSolution:
    rank: int
    genes: np.ndarray
    objectives: tuple
    S: float
    front: int

    def to_dict(self) -> dict:
        return {"rank": self.rank, "genes": genes_dict(self.genes),
                "objectives": [float(v) for v in self.objectives], "S": self.S, "front": self.front}


def score_and_rank(individuals: list[Individual], weights=WEIGHTS, k: int = 8) -> list[RankedSolution]:
    """Ascending S; ties keep input order."""
    s = np.array([scalar_score(ind.objectives, weights) for ind in individuals])
    order = np.argsort(s, kind="stable")[:k]
    return [RankedSolution(i + 1, individuals[j].genes.copy(), individuals[j].objectives, float(s[j]),
                           individuals[j].rank) for i, j in enumerate(order)]


def top_solutions(result: NsgaResult, cfg: OptConfig) -> list[RankedSolution]:
    """Best ``retain_k`` distinct genomes by S, from the first front onward.

    Later fronts are only consulted when earlier ones hold fewer than ``retain_k``
    distinct genomes; duplicates are used only if the population has too few.
    """
    by_rank = sorted(result.population, key=lambda ind: ind.rank)
    pool: list[Individual] = []
    seen = set()
    dupes: list[Individual] = []
    rank = None
    for ind in by_rank:
        if len(pool) >= cfg.retain_k and ind.rank != rank:
            break
        key = ind.genes.tobytes()
        if key in seen:
            dupes.append(ind)
            continue
        seen.add(key)
        pool.append(ind)
        rank = ind.rank
    if len(pool) < cfg.retain_k:
        pool.extend(dupes[: cfg.retain_k - len(pool)])
    return score_and_rank(pool, cfg.weights, cfg.retain_k)
