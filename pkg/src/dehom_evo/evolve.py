"""The evolutionary loop: latent crossover, deformation mutation, pixel evaluation, elitist selection.

Every generation is written to ``<out>/gen_k/`` and a run can be resumed from
any of them. Random streams are derived from ``(seed, generation, purpose)``
so a resumed run continues exactly as the uninterrupted one would have.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .design import DesignField
from .errors import ConfigError, DehomError, NumericalError
from .hifi import FineProblem, StiffnessReference, evaluate
from .io import atomic_write_text, read_csv, read_pgm, write_csv, write_pgm
from .lowfid import CoarseProblem, assemble_and_solve
from .mutation import MutationConfig, element_displacement, mutate
from .nsga import Individual, hypervolume, pareto_mask, select
from .phasor import MeshHierarchy, PhasorConfig, dehomogenize
from .reduce import PcaBasis, fit_pca, project, reconstruct
from .vae import VaeConfig, crossover, train_vae

logger = logging.getLogger(__name__)

OPT_OBJECTIVES = ("u_max", "compliance", "sigma_max", "inv_blf")
REF_FACTOR = 1.1
# random stream purposes
VAE, CROSSOVER, MUTATION = 0, 1, 2


@dataclass(frozen=True)
class EvolveConfig:
    generations: int = 15
    seed: int = 0
    objective: str = "u_max"  # second objective; the first is always vf
    n_offspring: int | None = None  # None: same as the population
    n_c: int | None = None  # None: smallest count reaching 99% explained variance
    stiffness_constraint: bool = False
    workers: int = 1
    vae: VaeConfig = field(default_factory=VaeConfig)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    phasor: PhasorConfig = field(default_factory=PhasorConfig)

    def __post_init__(self):
        if self.objective not in OPT_OBJECTIVES:
            raise ConfigError(f"objective must be one of {OPT_OBJECTIVES}, got {self.objective!r}")
        if self.generations < 0:
            raise ConfigError(f"generations must be >= 0, got {self.generations}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.n_offspring is not None and self.n_offspring < 1:
            raise ConfigError(f"n_offspring must be positive, got {self.n_offspring}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def digest(self) -> str:
        """Hash of everything that shapes the trajectory (not its length or fan-out)."""
        d = asdict(self)
        d.pop("generations")
        d.pop("workers")
        return hashlib.sha1(repr(sorted(d.items())).encode()).hexdigest()[:12]


@dataclass
class RunState:
    generation: int
    population: list
    history: list  # hypervolume per generation, starting with the initial one
    reference: np.ndarray
    basis: PcaBasis
    archive: np.ndarray  # feasible non-dominated objective points seen so far
    stiffness: StiffnessReference | None = None
    out: Path | None = None


def stream(seed: int, generation: int, purpose: int):
    return np.random.default_rng([seed, generation, purpose])


# --------------------------------------------------------------------------- evaluation


class Evaluator:
    def __init__(self, problem: CoarseProblem, cfg: EvolveConfig):
        self.cfg = cfg
        self.fine = FineProblem.from_coarse(problem, cfg.phasor.s_f)
        self.mesh = MeshHierarchy(problem.nx, problem.ny, cfg.phasor.s_i, cfg.phasor.s_f)
        metric = "blf" if cfg.objective == "inv_blf" else cfg.objective
        self.metrics = ("vf", metric) + (("u_max",) if cfg.stiffness_constraint and metric != "u_max" else ())

    def assess(self, x: DesignField):
        bits = dehomogenize(x, self.cfg.phasor, self.mesh)
        return bits, evaluate(self.fine, bits, self.metrics)

    def batch(self, xs):
        if self.cfg.workers <= 1:
            return [self.assess(x) for x in xs]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            return list(pool.map(self.assess, xs))

    def objectives(self, res) -> np.ndarray:
        if self.cfg.objective == "inv_blf":
            g = 1.0 / res.blf if res.blf > 0 else np.nan
        else:
            g = getattr(res, self.cfg.objective)
        return np.array([res.vf, g], dtype=float)


def _individual(ident, z, x, bits, res, ev: Evaluator, stiffness):
    f = ev.objectives(res)
    if not res.feasible or not np.all(np.isfinite(f)):
        viol = np.inf
    elif stiffness is not None:
        viol = stiffness.violation(res.vf, res.u_max)
    else:
        viol = 0.0
    ind = Individual(ident, f, viol, z, x, meta={"notes": res.notes})
    ind.meta["bits"] = bits.bits
    return ind


def reference_point(points: np.ndarray) -> np.ndarray:
    """``REF_FACTOR`` times the per-objective maximum (pushed outward for negative maxima)."""
    top = np.max(points, axis=0)
    return top + (REF_FACTOR - 1.0) * np.abs(top)


def _merge_archive(archive: np.ndarray, pop) -> np.ndarray:
    pts = [p.objectives for p in pop if p.feasible]
    if not pts:
        return archive
    P = np.vstack([archive.reshape(-1, 2), np.array(pts)])
    P = np.unique(P, axis=0)
    return P[pareto_mask(P)]


# --------------------------------------------------------------------------- persistence


def _save_generation(state: RunState, cfg: EvolveConfig) -> None:
    if state.out is None:
        return
    gdir = state.out / f"gen_{state.generation}"
    d = state.basis.phi.shape[1] * 3
    header = ("id",) + tuple(f"z{k}" for k in range(d)) + ("vf", cfg.objective, "violation", "rank", "feasible")
    rows = [
        (p.ident, *p.z.ravel(), *p.objectives, p.violation, p.rank, p.feasible) for p in state.population
    ]
    write_csv(gdir / "population.csv", header, rows)
    for p in state.population:
        p.x.to_csv(gdir / "fields" / f"{p.ident}.csv")
        write_pgm(gdir / "binary" / f"{p.ident}.pgm", p.meta["bits"])
    write_csv(gdir / "archive.csv", ("vf", cfg.objective), state.archive.reshape(-1, 2))
    write_csv(state.out / "hypervolume.csv", ("generation", "hv"), list(enumerate(state.history)))


def _save_run(state: RunState, cfg: EvolveConfig) -> None:
    if state.out is None:
        return
    state.basis.to_csv(state.out / "basis")
    write_csv(state.out / "reference.csv", ("vf", cfg.objective), [state.reference])
    if state.stiffness is not None:
        write_csv(state.out / "stiffness_reference.csv", ("vf", "u_max"), zip(state.stiffness.vf, state.stiffness.u))
    atomic_write_text(state.out / "run.txt", f"config_digest = {cfg.digest()}\nobjective = {cfg.objective}\n")


def load_state(gen_dir, cfg: EvolveConfig) -> RunState:
    """Rebuild the run state persisted in ``gen_dir`` (a ``gen_k`` directory)."""
    gen_dir = Path(gen_dir)
    out = gen_dir.parent
    try:
        k = int(gen_dir.name.split("_")[1])
    except (IndexError, ValueError):
        raise ConfigError(f"{gen_dir} is not a gen_<k> directory") from None
    meta = dict(line.split(" = ", 1) for line in (out / "run.txt").read_text().splitlines() if " = " in line)
    if meta.get("config_digest") != cfg.digest():
        raise ConfigError(f"{out}: run was produced with a different configuration; cannot resume")
    basis = PcaBasis.from_csv(out / "basis")
    ref = np.array([float(v) for v in read_csv(out / "reference.csv")[0].values()])
    stiffness = None
    if (out / "stiffness_reference.csv").exists():
        rows = read_csv(out / "stiffness_reference.csv")
        stiffness = StiffnessReference([float(r["vf"]) for r in rows], [float(r["u_max"]) for r in rows])
    hv_rows = read_csv(out / "hypervolume.csv")
    history = [float(r["hv"]) for r in hv_rows if int(r["generation"]) <= k]
    if len(history) != k + 1:
        raise ConfigError(f"{out}/hypervolume.csv has no complete history up to generation {k}")
    archive = np.array([[float(r["vf"]), float(r[cfg.objective])] for r in read_csv(gen_dir / "archive.csv")])
    pop = []
    for r in read_csv(gen_dir / "population.csv"):
        z = np.array([float(r[f"z{i}"]) for i in range(basis.n_c * 3)]).reshape(basis.n_c, 3)
        ind = Individual(r["id"], np.array([float(r["vf"]), float(r[cfg.objective])]), float(r["violation"]), z)
        ind.x = reconstruct(basis, z)
        ind.meta["bits"] = read_pgm(gen_dir / "binary" / f"{r['id']}.pgm")
        pop.append(ind)
    return RunState(k, pop, history, ref, basis, archive.reshape(-1, 2), stiffness, out)


# --------------------------------------------------------------------------- loop


def initialize(problem, initial_population, cfg: EvolveConfig, out=None) -> RunState:
    """Project, decode and evaluate the initial designs; freeze the reference point."""
    initial_population = list(initial_population)
    basis = fit_pca(initial_population, cfg.n_c)
    ev = Evaluator(problem, cfg)
    zs = [project(basis, x).z for x in initial_population]
    xs = [reconstruct(basis, z) for z in zs]
    results = ev.batch(xs)
    stiffness = None
    if cfg.stiffness_constraint:
        stiffness = StiffnessReference([r.vf for _, r in results], [r.u_max for _, r in results])
    pop = [
        _individual(f"g0_{k:03d}", z, x, bits, res, ev, stiffness)
        for k, (z, x, (bits, res)) in enumerate(zip(zs, xs, results))
    ]
    feasible = np.array([p.objectives for p in pop if p.feasible])
    if feasible.size == 0:
        raise NumericalError("no feasible design in the initial population; cannot fix a reference point")
    state = RunState(0, pop, [], reference_point(feasible), basis, np.zeros((0, 2)), stiffness)
    select(state.population, len(pop))  # assigns ranks for the record
    state.archive = _merge_archive(state.archive, pop)
    state.history.append(hypervolume(state.archive, state.reference))
    state.out = None if out is None else Path(out)
    _save_run(state, cfg)
    _save_generation(state, cfg)
    return state


def _offspring(state: RunState, problem: CoarseProblem, surrogate, cfg: EvolveConfig, g: int):
    n = cfg.n_offspring or len(state.population)
    elite = [p.z.ravel() for p in state.population]
    model = train_vae(elite, cfg.vae, stream(cfg.seed, g, VAE))
    Z = crossover(model, elite, n, cfg.vae.jitter, stream(cfg.seed, g, CROSSOVER))
    basis = state.basis
    xs = [reconstruct(basis, z) for z in Z]
    zs = [project(basis, x).z for x in xs]
    rng = stream(cfg.seed, g, MUTATION)
    chosen = np.sort(rng.choice(n, size=min(cfg.mutation.n_samples, n), replace=False))
    solver = problem.with_(mode="free-widths")  # decoded fields carry folded widths
    for k in chosen:
        sub = np.random.default_rng([cfg.seed, g, MUTATION, int(k)])
        try:
            st = assemble_and_solve(solver, xs[k], surrogate)
        except NumericalError as exc:
            logger.info("generation %d offspring %d not mutated: %s", g, k, exc)
            continue
        moved = mutate(xs[k], element_displacement(solver.grid, st.u), cfg.mutation, sub)
        zs[k] = project(basis, moved).z
        xs[k] = reconstruct(basis, zs[k])
    return zs, xs


def step(state: RunState, problem: CoarseProblem, surrogate, cfg: EvolveConfig) -> RunState:
    g = state.generation + 1
    ev = Evaluator(problem, cfg)
    zs, xs = _offspring(state, problem, surrogate, cfg, g)
    results = ev.batch(xs)
    kids = [
        _individual(f"g{g}_{k:03d}", z, x, bits, res, ev, state.stiffness)
        for k, (z, x, (bits, res)) in enumerate(zip(zs, xs, results))
    ]
    state.population = select(state.population + kids, len(state.population))
    state.archive = _merge_archive(state.archive, kids)
    state.history.append(hypervolume(state.archive, state.reference))
    state.generation = g
    n_feas = sum(p.feasible for p in kids)
    logger.info("generation %d: hv %.6g, %d/%d offspring feasible", g, state.history[-1], n_feas, len(kids))
    _save_generation(state, cfg)
    return state


def run(problem, surrogate, initial_population=None, cfg: EvolveConfig = EvolveConfig(), out=None, resume=None):
    """Evolve for ``cfg.generations`` generations and return the final state.

    Either ``initial_population`` (a list of DesignField) or ``resume`` (a
    persisted ``gen_k`` directory) must be given.
    """
    if resume is not None:
        state = load_state(resume, cfg)
        if out is not None and Path(out).resolve() != state.out.resolve():
            raise ConfigError("--out must match the run directory being resumed")
    elif initial_population is not None:
        state = initialize(problem, initial_population, cfg, out)
    else:
        raise ConfigError("run needs an initial population or a generation to resume from")
    while state.generation < cfg.generations:
        try:
            step(state, problem, surrogate, cfg)
        except DehomError as exc:
            raise type(exc)(f"generation {state.generation + 1}: {exc}") from exc
    return state
