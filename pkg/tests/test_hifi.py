import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dehom_evo.boundary import Load, Support
from dehom_evo.errors import ConfigError
from dehom_evo.hifi import (
    FineProblem,
    StaticSolution,
    StiffnessReference,
    buckling_blf,
    evaluate,
    evaluate_batch,
    solve_static,
    volume_fraction,
    von_mises,
    von_mises_max,
)

from oracles import dense_solve, plane_stress


def cantilever(nx=64, ny=32, force=(0.0, -1.0)):
    return FineProblem(nx, ny, (Support((0, 0, 0, ny)),), (Load((nx, ny // 2, nx, ny // 2), force),))


def column(force=1.0):
    return FineProblem(8, 80, (Support((0, 0, 8, 0)),), (Load((0, 80, 8, 80), (0.0, -force)),))


def holey(seed, nx=24, ny=12, frac=0.3):
    bits = np.random.default_rng(seed).random((nx, ny)) > frac
    bits[:, ny // 3 : 2 * ny // 3] = True  # a solid spine through the load keeps it connected
    return bits


def test_volume_fraction_counts_pixels():
    assert volume_fraction(np.ones((4, 4))) == 1.0
    assert volume_fraction(np.zeros((4, 4))) == 0.0
    board = np.indices((64, 64)).sum(axis=0) % 2
    assert volume_fraction(board) == 0.5
    with pytest.raises(ValueError):
        volume_fraction(np.zeros((0, 3)))


def test_solid_cantilever_matches_dense_assembly():
    p = cantilever()
    st = solve_static(p, np.ones((64, 32)))
    D = plane_stress(1.0, 0.3)
    u_ref, c_ref = dense_solve(64, 32, lambda ix, iy: D, [(0, j, "xy") for j in range(33)], {(64, 16): (0.0, -1.0)})
    assert st.compliance == pytest.approx(c_ref, rel=1e-8)
    assert st.u_max == pytest.approx(np.max(np.hypot(u_ref[0::2], u_ref[1::2])), rel=1e-8)


def test_load_scaling():
    bits = holey(0)
    a = solve_static(cantilever(24, 12), bits)
    b = solve_static(cantilever(24, 12, (0.0, -2.0)), bits)
    assert b.u_max == pytest.approx(2 * a.u_max, rel=1e-6)
    assert b.compliance == pytest.approx(4 * a.compliance, rel=1e-6)


def test_disconnected_load_is_infeasible():
    bits = np.ones((24, 12), bool)
    bits[12, :] = False
    st = solve_static(cantilever(24, 12), bits)
    assert not st.feasible and "not connected" in st.notes
    res = evaluate(cantilever(24, 12), bits, ("vf", "compliance"))
    assert not res.feasible and res.vf == pytest.approx(1 - 1 / 24)


def test_uniform_tension_stress():
    # roller on the left edge, one pinned corner, traction 0.3 on the right edge
    p = FineProblem(10, 10, (Support((0, 0, 0, 10), "x"), Support((0, 0, 0, 0), "y")), (Load((10, 0, 10, 10), (3.0, 0.0)),))
    bits = np.ones((10, 10))
    st = solve_static(p, bits)
    agg, top = von_mises_max(p, bits, st.u, raw=True)
    assert agg == pytest.approx(0.3, rel=0.02)
    assert top == pytest.approx(0.3, rel=1e-9)


def test_pure_shear_stress():
    p = FineProblem(6, 6, (Support((0, 0, 0, 0)),), (Load((6, 6, 6, 6), (1.0, 0.0)),))
    gamma = 1e-3
    xy = p.grid.node_coords()
    u = np.zeros(p.grid.n_dofs)
    u[0::2], u[1::2] = 0.5 * gamma * xy[:, 1], 0.5 * gamma * xy[:, 0]
    tau = gamma / (2 * 1.3)
    assert von_mises_max(p, np.ones((6, 6)), u) == pytest.approx(np.sqrt(3) * tau, rel=0.02)
    assert von_mises(np.array([0.0, 0.0, 2.0])) == pytest.approx(2 * np.sqrt(3))
    assert von_mises_max(p, np.ones((6, 6)), np.zeros(p.grid.n_dofs)) == 0.0


def test_stress_ignores_void():
    p = cantilever(24, 12)
    bits = holey(1)
    st = solve_static(p, bits)
    agg, top = von_mises_max(p, bits, st.u, raw=True)
    assert 0 < agg <= top


def test_euler_column():
    p = column()
    bits = np.ones((8, 80))
    lam, ok, _ = buckling_blf(p, bits, solve_static(p, bits))
    euler = np.pi**2 * (8**3 / 12) / (4 * 80**2)  # fixed base, free top
    assert ok and abs(lam / euler - 1) < 0.10


def test_buckling_load_scales_inversely():
    bits = np.ones((8, 80))
    a = buckling_blf(column(), bits, solve_static(column(), bits))[0]
    b = buckling_blf(column(2.0), bits, solve_static(column(2.0), bits))[0]
    assert b == pytest.approx(a / 2, rel=1e-6)


def test_stress_free_structure_has_no_buckling_load():
    p = column()
    st = StaticSolution(np.zeros(p.grid.n_dofs), 0.0, 0.0, True)
    lam, ok, note = buckling_blf(p, np.ones((8, 80)), st)
    assert not ok and np.isnan(lam) and "stress-free" in note
    assert buckling_blf(p, np.ones((8, 80)), StaticSolution(None, np.nan, np.nan, False))[1] is False


def test_tension_only_structure_has_no_positive_buckling_load():
    p = FineProblem(4, 20, (Support((0, 0, 4, 0)),), (Load((0, 20, 4, 20), (0.0, 1.0)),))
    bits = np.ones((4, 20))
    lam, ok, note = buckling_blf(p, bits, solve_static(p, bits))
    assert not ok and "positive" in note


@pytest.mark.parametrize("seed", [0, 1])
def test_mirror_image_buckles_at_the_same_load(seed):
    bits = np.random.default_rng(seed).random((16, 24)) > 0.15
    bits[6:10, :] = True
    left = FineProblem(16, 24, (Support((0, 0, 16, 0)),), (Load((7, 24, 7, 24), (0.2, -1.0)),))
    right = FineProblem(16, 24, (Support((0, 0, 16, 0)),), (Load((9, 24, 9, 24), (-0.2, -1.0)),))
    a = buckling_blf(left, bits, solve_static(left, bits))
    b = buckling_blf(right, bits[::-1], solve_static(right, bits[::-1]))
    assert a[1] and b[1]
    assert b[0] == pytest.approx(a[0], rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adding_material_never_increases_compliance(seed):
    rng = np.random.default_rng(seed)
    p = cantilever(24, 12)
    bits = holey(seed)
    void = np.flatnonzero(~bits.ravel())
    more = bits.copy().ravel()
    more[rng.choice(void, max(1, int(0.01 * bits.size)), replace=False)] = True
    c0 = solve_static(p, bits).compliance
    c1 = solve_static(p, more.reshape(bits.shape)).compliance
    assert c1 <= c0 + 1e-9


def test_evaluation_is_deterministic_and_order_independent():
    p = cantilever(24, 12)
    fields = [holey(s) for s in range(4)]
    serial = evaluate_batch(p, fields, ("vf", "compliance", "u_max"))
    threaded = evaluate_batch(p, fields, ("vf", "compliance", "u_max"), workers=3)
    assert [r.row(k) for k, r in enumerate(serial)] == [r.row(k) for k, r in enumerate(threaded)]
    back = evaluate_batch(p, fields[::-1], ("vf", "compliance", "u_max"))[::-1]
    assert [r.row(0) for r in back] == [r.row(0) for r in serial]


def test_only_requested_metrics_are_computed():
    r = evaluate(cantilever(24, 12), holey(0), ("vf",))
    assert np.isfinite(r.vf) and np.isnan(r.compliance) and np.isnan(r.u_max) and np.isnan(r.blf)
    with pytest.raises(ConfigError, match="unknown metrics"):
        evaluate(cantilever(24, 12), holey(0), ("mass",))


def test_batch_isolates_failures():
    fields = [holey(s) for s in range(10)]
    fields[3] = np.zeros((24, 12), bool)
    fields[7] = np.ones((5, 5), bool)  # wrong grid
    res = evaluate_batch(cantilever(24, 12), fields, ("vf", "compliance"))
    assert len(res) == 10
    assert [r.feasible for r in res] == [k not in (3, 7) for k in range(10)]
    assert "ConfigError" in res[7].notes


def test_solid_column_composition():
    r = evaluate(column(), np.ones((8, 80)), ("vf", "compliance", "u_max", "sigma_max", "blf"))
    assert r.feasible and r.vf == 1.0
    assert all(np.isfinite([r.compliance, r.u_max, r.sigma_max, r.blf]))
    assert "raw_sigma_max" in r.notes


def test_problem_validation():
    with pytest.raises(ConfigError):
        FineProblem(4, 4, (), (Load((0, 0, 0, 0), (1.0, 0.0)),))
    with pytest.raises(ConfigError):
        FineProblem(4, 4, (Support((0, 0, 0, 4)),), (Load((4, 4, 4, 4), (0.0, 0.0)),))
    with pytest.raises(ConfigError):
        FineProblem(4, 4, (Support((0, 0, 0, 4)),), (Load((4, 4, 4, 4), (1.0, 0.0)),), e_min=0.1)


def test_coarse_problems_scale_onto_the_fine_grid():
    from dehom_evo.lowfid import double_clamped_beam

    fp = FineProblem.from_coarse(double_clamped_beam(6, 3), 4)
    assert (fp.nx, fp.ny, fp.scale) == (24, 12, 4.0)
    assert evaluate(fp, np.ones((24, 12)), ("compliance",)).feasible


def test_stiffness_reference():
    ref = StiffnessReference([0.3, 0.3, 0.5, np.nan], [2.0, 4.0, 1.0, 7.0])
    np.testing.assert_allclose(ref([0.3, 0.4, 0.9, 0.1]), [3.0, 2.0, 1.0, 3.0], atol=1e-15)
    assert ref.violation(0.5, 0.5) == 0.0 and ref.violation(0.5, 1.5) == 0.5
    with pytest.raises(ValueError):
        StiffnessReference([np.nan], [1.0])
