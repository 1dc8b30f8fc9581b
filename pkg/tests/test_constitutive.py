import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from prnn.constitutive import (
    BulkProps,
    BulkState,
    CohesiveState,
    CzmProps,
    czm_branch,
    czm_thresholds,
    czm_update,
    elastic_stiffness,
    elastic_update,
    fd_tangent,
    j2_branch,
    j2_update,
    near_branch,
    yield_function,
)

BULK = BulkProps()
CZM = CzmProps()


# --------------------------------------------------------------------------
# props
# --------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    {"youngs_modulus": 0.0}, {"poisson_ratio": 0.5}, {"poisson_ratio": -0.1},
    {"yield_stress": 0.0}, {"hardening_modulus": -1.0},
])
def test_bulk_props_rejects_invalid(kw):
    with pytest.raises(ValueError):
        BulkProps(**kw)


@pytest.mark.parametrize("kw", [
    {"normal_strength": 0.0}, {"g_iic": -1.0}, {"eta": 0.0}, {"penalty_stiffness": 0.0},
    {"penalty_stiffness": 100.0},  # onset jump beyond the final jump
])
def test_czm_props_rejects_invalid(kw):
    with pytest.raises(ValueError):
        CzmProps(**kw)


def test_czm_default_thresholds():
    assert CZM.onset_normal == pytest.approx(1.2e-6, rel=1e-12)
    assert CZM.final_normal == pytest.approx(0.029133333333333334, rel=1e-12)
    assert CZM.final_shear == pytest.approx(0.05723333333333334, rel=1e-12)


# --------------------------------------------------------------------------
# elasticity
# --------------------------------------------------------------------------

def test_elastic_zero():
    np.testing.assert_array_equal(elastic_update(np.zeros(3), BULK), np.zeros(3))


def test_elastic_uncoupled_when_nu_zero():
    props = BulkProps(youngs_modulus=1.0, poisson_ratio=0.0)
    np.testing.assert_allclose(elastic_update([0.01, 0.0, 0.0], props), [0.01, 0.0, 0.0], rtol=1e-15)


def test_elastic_matches_dense_assembly():
    # frozen from an explicit C = E/(1-nu^2) [[1, nu, 0], [nu, 1, 0], [0, 0, (1-nu)/2]] product
    expected = [3.8948209940910674, 2.0670837678136946, 0.5711678832116789]
    np.testing.assert_allclose(elastic_update([1e-3, 2e-4, 5e-4], BULK), expected, rtol=1e-14)


def test_elastic_rejects_nan():
    with pytest.raises(ValueError):
        elastic_update([np.nan, 0.0, 0.0], BULK)


def test_elastic_tangent_is_stiffness():
    J = fd_tangent(elastic_update, np.array([1e-3, -2e-3, 4e-4]), None, BULK)
    np.testing.assert_allclose(J, elastic_stiffness(BULK), rtol=1e-7, atol=1e-6)


# --------------------------------------------------------------------------
# J2
# --------------------------------------------------------------------------

def test_j2_elastic_regime_matches_elasticity():
    eps = np.array([1e-3, -5e-4, 2e-3])
    s, st_new = j2_update(eps, BulkState.virgin(), BULK)
    np.testing.assert_array_equal(s, elastic_update(eps, BULK))
    np.testing.assert_array_equal(st_new.plastic_strain, 0.0)
    assert st_new.equivalent_plastic_strain == 0.0
    J = fd_tangent(j2_update, eps, BulkState.virgin(), BULK)
    np.testing.assert_allclose(J, elastic_stiffness(BULK), rtol=1e-7, atol=1e-6)


def test_j2_plastic_step_on_yield_surface():
    s, st_new = j2_update(np.array([0.05, 0.0, 0.0]), BulkState.virgin(), BULK)
    f = yield_function(s, st_new.equivalent_plastic_strain, BULK)
    assert abs(f) <= 1e-8 * BULK.yield_stress
    assert st_new.equivalent_plastic_strain > 0


def test_j2_rejects_nonfinite():
    with pytest.raises(ValueError):
        j2_update([np.inf, 0.0, 0.0], BulkState.virgin(), BULK)


def uniaxial_stress_step(exx, state, props):
    """Mixed control: find eyy with syy = 0 (gxy = 0) for a given exx."""
    def syy(eyy):
        return j2_update(np.array([exx, eyy, 0.0]), state, props)[0][1]

    span = 2.0 * abs(exx) + 1e-3
    eyy = brentq(syy, -span, span, xtol=1e-16, rtol=1e-15, maxiter=200)
    return j2_update(np.array([exx, eyy, 0.0]), state, props)


def test_j2_uniaxial_plateau_perfect_plasticity():
    props = BulkProps(youngs_modulus=3130.0, poisson_ratio=0.0, yield_stress=64.8, hardening_modulus=0.0)
    state = BulkState.virgin()
    ey = props.yield_stress / props.youngs_modulus
    for exx in np.linspace(0.0, 5 * ey, 41)[1:]:
        s, state = uniaxial_stress_step(exx, state, props)
        expected = min(props.youngs_modulus * exx, props.yield_stress)
        assert s[0] == pytest.approx(expected, rel=1e-8)


def test_j2_elastic_unloading_slope_and_fine_step_oracle():
    props = BULK
    peak, drop = 0.06, 0.004
    # coarse: ten loading steps; oracle: 100x finer
    coarse = BulkState.virgin()
    for e in np.linspace(0, peak, 11)[1:]:
        s_peak, coarse = uniaxial_stress_step(e, coarse, props)
    fine = BulkState.virgin()
    for e in np.linspace(0, peak, 1001)[1:]:
        s_fine, fine = uniaxial_stress_step(e, fine, props)
    # proportional uniaxial stress: the return map is step-size independent
    np.testing.assert_allclose(s_peak, s_fine, rtol=1e-8, atol=1e-9)
    s_un, after = uniaxial_stress_step(peak - drop, coarse, props)
    assert s_peak[0] - s_un[0] == pytest.approx(props.youngs_modulus * drop, rel=1e-8)
    np.testing.assert_array_equal(after.plastic_strain, coarse.plastic_strain)
    assert after.equivalent_plastic_strain == coarse.equivalent_plastic_strain


strain3 = st.lists(st.floats(-0.03, 0.03, allow_nan=False), min_size=3, max_size=3)


@given(st.lists(strain3, min_size=1, max_size=20))
def test_j2_yield_consistency_property(incs):
    state = BulkState.virgin()
    eps = np.zeros(3)
    for inc in incs:
        eps = eps + np.asarray(inc)
        s, new = j2_update(eps, state, BULK)
        assert yield_function(s, new.equivalent_plastic_strain, BULK) <= 1e-8 * BULK.yield_stress
        assert new.equivalent_plastic_strain >= state.equivalent_plastic_strain
        state = new


@given(st.lists(strain3, min_size=2, max_size=12))
def test_j2_dissipation_nonnegative_on_closed_loop(points):
    path = [np.zeros(3)] + [np.asarray(p) for p in points] + [np.zeros(3)]
    state = BulkState.virgin()
    for eps in path[1:]:
        s, new = j2_update(eps, state, BULK)
        work = float(s @ (new.plastic_strain - state.plastic_strain))
        assert work >= -1e-12 * BULK.yield_stress
        state = new


def test_j2_fd_tangent_second_order_on_plastic_branch():
    state = j2_update(np.array([0.02, 0.0, 0.0]), BulkState.virgin(), BULK)[1]
    eps = np.array([0.025, 0.004, 0.003])
    assert j2_branch(eps, state, BULK) == 1
    J = [fd_tangent(j2_update, eps, state, BULK, h) for h in (4e-5, 2e-5, 1e-5)]
    e1 = np.max(np.abs(J[0] - J[1]))
    e2 = np.max(np.abs(J[1] - J[2]))
    assert 3.0 < e1 / e2 < 5.0


# --------------------------------------------------------------------------
# CZM
# --------------------------------------------------------------------------

def test_czm_onset_peak_mode_one():
    t, s = czm_update(np.array([1.2e-6, 0.0]), CohesiveState.virgin(), CZM)
    assert t[0] == pytest.approx(60.0, rel=1e-10)
    assert s.damage == pytest.approx(0.0, abs=1e-12)


def test_czm_final_jump_mode_one():
    for dn in (0.029133333333333334, 0.05):
        t, s = czm_update(np.array([dn, 0.0]), CohesiveState.virgin(), CZM)
        assert t[0] == pytest.approx(0.0, abs=1e-9)
        assert s.damage == 1.0


def test_czm_zero_jump_keeps_state():
    st0 = CohesiveState(np.float64(0.3), np.float64(0.01))
    t, s = czm_update(np.zeros(2), st0, CZM)
    np.testing.assert_array_equal(t, 0.0)
    assert s.damage == 0.3 and s.max_effective_jump == 0.01


def test_czm_compression_is_penalty_without_damage():
    t, s = czm_update(np.array([-1e-3, 0.0]), CohesiveState(np.float64(0.5), np.float64(0.01)), CZM)
    assert t[0] == pytest.approx(CZM.penalty_stiffness * -1e-3)
    assert s.damage == 0.5


def test_czm_softening_tangent_negative_and_analytic():
    dn = 0.01
    J = fd_tangent(czm_update, np.array([dn, 0.0]), CohesiveState.virgin(), CZM)
    slope = -CZM.normal_strength / (CZM.final_normal - CZM.onset_normal)
    assert J[0, 0] < 0
    assert J[0, 0] == pytest.approx(slope, rel=1e-6)


def test_czm_mixed_mode_thresholds_interpolate():
    on, fi, B = czm_thresholds(np.array([1.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]), CZM)
    np.testing.assert_allclose(B[:2], [0.0, 1.0])
    assert on[0] == pytest.approx(CZM.onset_normal) and on[1] == pytest.approx(CZM.onset_shear)
    assert fi[0] == pytest.approx(CZM.final_normal) and fi[1] == pytest.approx(CZM.final_shear)
    assert CZM.final_normal < fi[2] < CZM.final_shear


def test_czm_rejects_nan():
    with pytest.raises(ValueError):
        czm_update(np.array([np.nan, 0.0]), CohesiveState.virgin(), CZM)


jumps = st.lists(st.tuples(st.floats(-0.04, 0.06), st.floats(-0.06, 0.06)), min_size=1, max_size=40)


@given(jumps)
def test_czm_damage_monotone_property(seq):
    state = CohesiveState.virgin()
    for j in seq:
        _, new = czm_update(np.asarray(j), state, CZM)
        assert 0.0 <= new.damage <= 1.0
        assert new.damage >= state.damage
        assert new.max_effective_jump >= state.max_effective_jump
        state = new


@given(st.floats(0.001, 0.025), st.floats(0.0, 0.999))
def test_czm_unloading_secant_reproduces_traction(peak, frac):
    _, state = czm_update(np.array([peak, 0.0]), CohesiveState.virgin(), CZM)
    probe = np.array([frac * peak, 0.0])
    t1, s1 = czm_update(probe, state, CZM)
    _, s0 = czm_update(np.array([0.0, 0.0]), s1, CZM)
    t2, s2 = czm_update(probe, s0, CZM)
    assert s2.damage == state.damage
    np.testing.assert_allclose(t2, t1, rtol=1e-10, atol=0)
    # secant through the origin
    t_peak = czm_update(np.array([peak, 0.0]), state, CZM)[0]
    assert t1[0] == pytest.approx(frac * t_peak[0], rel=1e-10, abs=1e-12)


def test_czm_branch_and_near_branch():
    virgin = CohesiveState.virgin()
    assert czm_branch(np.array([1e-3, 0.0]), virgin, CZM) & 1
    assert not czm_branch(np.array([1e-7, 0.0]), virgin, CZM) & 1
    assert near_branch(czm_branch, np.array([1.2e-6, 0.0]), virgin, CZM, 1e-7)
    assert not near_branch(czm_branch, np.array([1e-3, 1e-3]), virgin, CZM, 1e-7)
