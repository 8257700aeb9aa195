"""Constraint-dominance non-dominated sorting, crowding, elitist selection and 2D hypervolume."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Individual:
    ident: str
    objectives: np.ndarray  # minimization pair
    violation: float = 0.0  # 0 when feasible
    z: np.ndarray | None = None
    x: object = None  # decoded DesignField
    rank: int = 0
    crowding: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.violation == 0.0 and bool(np.all(np.isfinite(self.objectives)))


def _arrays(pop):
    F = np.array([np.asarray(p.objectives, float) for p in pop]).reshape(len(pop), -1)
    V = np.array([0.0 if p.feasible else max(float(p.violation), np.finfo(float).tiny) for p in pop])
    return F, V


def dominance_matrix(F: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is True when i constraint-dominates j."""
    feas = V == 0
    with np.errstate(invalid="ignore"):
        le = np.all(F[:, None, :] <= F[None, :, :], axis=-1)
        lt = np.any(F[:, None, :] < F[None, :, :], axis=-1)
    pareto = le & lt & feas[:, None] & feas[None, :]
    return pareto | (feas[:, None] & ~feas[None, :]) | ((~feas[:, None] & ~feas[None, :]) & (V[:, None] < V[None, :]))


def front_ranks(F: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Fast non-dominated sorting; rank 1 is the best front."""
    n = len(F)
    D = dominance_matrix(F, V)
    count = D.sum(axis=0)
    ranks = np.zeros(n, dtype=np.int64)
    current = np.flatnonzero(count == 0)
    r = 1
    while current.size:
        ranks[current] = r
        count = count - D[current].sum(axis=0)
        count[ranks > 0] = -1
        current = np.flatnonzero(count == 0)
        r += 1
    return ranks


def crowding_distance(F: np.ndarray) -> np.ndarray:
    """Crowding distance within one front (boundary points get infinity)."""
    n, m = F.shape
    d = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        f = F[order, k]
        d[order[0]] = d[order[-1]] = np.inf
        span = f[-1] - f[0]
        if span > 0 and np.isfinite(span):
            d[order[1:-1]] += (f[2:] - f[:-2]) / span
    return d


def nondominated_sort(pop):
    """Assign ``rank`` and ``crowding`` in place and return the population."""
    pop = list(pop)
    if not pop:
        return pop
    F, V = _arrays(pop)
    ranks = front_ranks(F, V)
    crowd = np.zeros(len(pop))
    for r in np.unique(ranks):
        idx = np.flatnonzero(ranks == r)
        if np.all(V[idx] == 0):
            crowd[idx] = crowding_distance(F[idx])
        else:
            crowd[idx] = np.inf if idx.size == 1 else 0.0
    for p, r, c in zip(pop, ranks, crowd):
        p.rank, p.crowding = int(r), float(c)
    return pop


def select(pop, n: int):
    """Elitist survivor selection: whole fronts by rank, then by crowding."""
    pop = nondominated_sort(pop)
    if n >= len(pop):
        return list(pop)
    order = sorted(range(len(pop)), key=lambda i: (pop[i].rank, -pop[i].crowding, i))
    return [pop[i] for i in order[:n]]


def pareto_mask(F: np.ndarray) -> np.ndarray:
    """Non-dominated rows of a finite objective matrix."""
    return front_ranks(F, np.zeros(len(F))) == 1


def hypervolume(points, ref) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (2D minimization)."""
    P = np.asarray(points, float).reshape(-1, 2)
    ref = np.asarray(ref, float)
    P = P[np.all(np.isfinite(P), axis=1) & np.all(P < ref, axis=1)]
    if len(P) == 0:
        return 0.0
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    hv, best2 = 0.0, ref[1]
    front = []
    for p in P:
        if p[1] < best2:
            front.append(p)
            best2 = p[1]
    front = np.array(front)
    nxt = np.append(front[1:, 0], ref[0])
    hv = float(np.sum((nxt - front[:, 0]) * (ref[1] - front[:, 1])))
    return hv
