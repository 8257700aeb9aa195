from dataclasses import replace

import numpy as np
import pytest

from dehom_evo.design import uniform_field
from dehom_evo.errors import ConfigError, NumericalError
from dehom_evo.evolve import EvolveConfig, Evaluator, reference_point, run
from dehom_evo.hifi import EvalResult
from dehom_evo.io import read_csv
from dehom_evo.nsga import Individual, select
from dehom_evo.phasor import PhasorConfig
from dehom_evo.vae import VaeConfig

FAST = EvolveConfig(generations=2, seed=3, vae=VaeConfig(epochs=40), phasor=PhasorConfig(s_f=4))


def test_zero_generations_record_the_initial_state(small_population, surrogate, tmp_path):
    problem, pop = small_population
    st = run(problem, surrogate, pop, replace(FAST, generations=0), out=tmp_path)
    assert st.generation == 0 and len(st.history) == 1 and st.history[0] > 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["basis", "gen_0", "hypervolume.csv", "reference.csv", "run.txt"]
    g0 = tmp_path / "gen_0"
    assert len(list((g0 / "fields").glob("*.csv"))) == len(pop)
    assert len(list((g0 / "binary").glob("*.pgm"))) == len(pop)
    rows = read_csv(g0 / "population.csv")
    assert len(rows) == len(pop) and {"id", "z0", "vf", "u_max", "rank", "feasible"} <= set(rows[0])
    assert (tmp_path / "hypervolume.csv").read_text().splitlines()[0] == "generation,hv"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hypervolume_never_decreases(small_population, surrogate, seed):
    problem, pop = small_population
    st = run(problem, surrogate, pop, EvolveConfig(generations=10, seed=seed, phasor=PhasorConfig(s_f=4)))
    assert len(st.history) == 11
    assert np.all(np.diff(st.history) >= 0)
    assert len(st.population) == len(pop)


def test_runs_are_reproducible(small_population, surrogate, tmp_path):
    problem, pop = small_population
    a = run(problem, surrogate, pop, FAST, out=tmp_path / "a")
    b = run(problem, surrogate, pop, FAST, out=tmp_path / "b")
    assert a.history == b.history
    assert (tmp_path / "a" / "hypervolume.csv").read_bytes() == (tmp_path / "b" / "hypervolume.csv").read_bytes()
    assert [p.ident for p in a.population] == [p.ident for p in b.population]
    assert all(np.array_equal(p.z, q.z) for p, q in zip(a.population, b.population))


def test_resuming_continues_the_same_trajectory(small_population, surrogate, tmp_path):
    problem, pop = small_population
    full = run(problem, surrogate, pop, FAST, out=tmp_path / "full")
    run(problem, surrogate, pop, replace(FAST, generations=1), out=tmp_path / "part")
    resumed = run(problem, surrogate, cfg=FAST, resume=tmp_path / "part" / "gen_1")
    assert resumed.history == full.history
    assert [p.ident for p in resumed.population] == [p.ident for p in full.population]
    assert (tmp_path / "part" / "gen_2" / "population.csv").exists()


def test_resume_rejects_a_different_configuration(small_population, surrogate, tmp_path):
    problem, pop = small_population
    run(problem, surrogate, pop, replace(FAST, generations=0), out=tmp_path)
    with pytest.raises(ConfigError, match="different configuration"):
        run(problem, surrogate, cfg=replace(FAST, seed=4), resume=tmp_path / "gen_0")
    with pytest.raises(ConfigError, match="gen_"):
        run(problem, surrogate, cfg=FAST, resume=tmp_path / "basis")
    with pytest.raises(ConfigError):
        run(problem, surrogate, cfg=FAST)


def test_stiffness_constrained_run(small_population, surrogate, tmp_path):
    problem, pop = small_population
    cfg = replace(FAST, generations=1, objective="compliance", stiffness_constraint=True)
    st = run(problem, surrogate, pop, cfg, out=tmp_path)
    assert (tmp_path / "stiffness_reference.csv").exists()
    assert np.all(np.diff(st.history) >= 0)
    assert all(p.violation >= 0 for p in st.population)


def test_unbuildable_initial_population(surrogate):
    from dehom_evo.lowfid import double_clamped_beam

    void = [uniform_field(12, 6, 0.0, 0.0, theta=0.1 * k) for k in range(3)]
    void[0] = uniform_field(12, 6, 0.01, 0.0)
    with pytest.raises(NumericalError, match="no feasible design"):
        run(double_clamped_beam(12, 6), surrogate, void, replace(FAST, generations=0))


def test_reference_point():
    np.testing.assert_allclose(reference_point(np.array([[0.2, 3.0], [0.5, 1.0]])), [0.55, 3.3])
    np.testing.assert_allclose(reference_point(np.array([[0.2, -3.0], [0.5, -1.0]])), [0.55, -0.9])


def test_objective_vectors(small_population):
    problem, _ = small_population
    ev = Evaluator(problem, replace(FAST, objective="inv_blf"))
    assert ev.metrics == ("vf", "blf")
    np.testing.assert_allclose(ev.objectives(EvalResult(vf=0.4, blf=4.0)), [0.4, 0.25])
    assert np.isnan(ev.objectives(EvalResult(vf=0.4, blf=-1.0))[1])
    assert Evaluator(problem, replace(FAST, objective="compliance", stiffness_constraint=True)).metrics == (
        "vf",
        "compliance",
        "u_max",
    )


def test_feasible_designs_are_never_dropped_for_infeasible_ones():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pop = [Individual(str(k), rng.random(2), 0.0 if rng.random() < 0.5 else float(rng.random())) for k in range(30)]
        kept = {p.ident for p in select(pop, 15)}
        dropped_feasible = any(p.feasible and p.ident not in kept for p in pop)
        kept_infeasible = any(not p.feasible and p.ident in kept for p in pop)
        assert not (dropped_feasible and kept_infeasible)


def test_configuration_validation():
    for kw in (dict(objective="mass"), dict(generations=-1), dict(seed=-2), dict(n_offspring=0), dict(workers=0)):
        with pytest.raises(ConfigError):
            EvolveConfig(**kw)
    assert EvolveConfig().digest() == replace(EvolveConfig(), generations=99, workers=4).digest()
    assert EvolveConfig().digest() != EvolveConfig(seed=1).digest()
