import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ehcell import analytic as an
from ehcell.config import NetworkConfig
from ehcell.geometry import intensity_constants

# pmf of sum q N_q with N_q ~ Poisson(0.5 (sqrt(q) - sqrt(q-1))), q = 1..10,
# by direct convolution of the independent Poisson components
EXACT_HALF_SQRT = [0.20574066108381, 0.10287033054191, 0.06832786871174, 0.05828742928253, 0.05418654155819,
                   0.05207248504248, 0.05088771562869, 0.05022838315203, 0.04990037030884, 0.04979685653974]
# the same law from 10^6 sampled processes (seed 20240601)
SAMPLED_HALF_SQRT = [0.206158, 0.103019, 0.068387, 0.058213, 0.054371,
                     0.052164, 0.050992, 0.050369, 0.049933, 0.049318]


def half_sqrt(p):
    return 0.5 * math.sqrt(p)


def test_compound_sum_matches_exact_convolution():
    pmf = an.compound_sum_pmf(60, half_sqrt, 10)
    assert np.allclose(pmf[:10], EXACT_HALF_SQRT, atol=1e-13)
    assert pmf[0] == pytest.approx(math.exp(-half_sqrt(10)))


def test_compound_sum_matches_sampling_oracle():
    pmf = an.compound_sum_pmf(9, half_sqrt, 10)
    assert np.max(np.abs(pmf - SAMPLED_HALF_SQRT)) < 2e-3


def test_compound_sum_large_intensity_is_stable():
    # all points in (0, 1]: sum equals the Poisson count
    lam = 800.0
    pmf = an.compound_sum_pmf(1200, lambda p: lam * min(p, 1.0), 1)
    ref = stats.poisson.pmf(np.arange(1201), lam)
    assert np.all(np.isfinite(pmf))
    assert np.allclose(pmf, ref, rtol=1e-8, atol=1e-300)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-10)


def test_compound_sum_degenerate():
    assert np.array_equal(an.compound_sum_pmf(3, half_sqrt, 0), [1.0, 0.0, 0.0, 0.0])
    assert np.allclose(an.compound_sum_pmf(3, lambda p: 0.0, 5), [1.0, 0.0, 0.0, 0.0])


def test_availability_map_inverts_g(desk):
    amap = an.build_availability_map(desk)
    levels = np.arange(desk.broadcast_levels + 1)
    assert np.max(np.abs(amap.g_A(amap.p_cov) - levels)) < 1e-9
    assert np.all(amap.g_A(amap.p_cov) <= levels)
    assert np.all(np.diff(amap.p_cov) > 0)
    assert amap.p_cov[0] == 0.0


def test_availability_map_without_load_is_identity():
    cfg = NetworkConfig.desk().with_values(lambda_mt_per_m2=0.0)
    assert np.array_equal(an.build_availability_map(cfg).p_cov, np.arange(201.0))


def test_l_star_is_ceiling_of_g(desk):
    amap = an.build_availability_map(desk)
    p = np.linspace(0.001, amap.p_cov[-1], 500)
    assert np.array_equal(amap.l_star(p), np.ceil(amap.g_A(p) - 1e-9).astype(int))


def _lambda_a_direct(p, v, amap, cfg):
    # sum over levels of the BS intensity that level l can still serve
    return sum(v[l] * an.lambda_b_units(min(p, amap.p_cov[l]), cfg) for l in range(len(v)))


def test_available_intensity_matches_direct_sum(desk, desk_solution):
    amap, v = desk_solution.availability, desk_solution.v
    for p in (0.0, 0.3, 1.0, 2.71, 5.0, amap.p_cov[-1]):
        assert an.available_bs_intensity(p, v, amap, desk) == pytest.approx(_lambda_a_direct(p, v, amap, desk),
                                                                            rel=1e-12, abs=1e-15)


def test_available_intensity_full_battery_is_plain_bs_intensity(desk):
    amap = an.build_availability_map(desk)
    v = np.zeros(201)
    v[-1] = 1.0
    p = np.linspace(0, amap.p_cov[-1], 7)
    assert np.allclose(an.available_bs_intensity(p, v, amap, desk), an.lambda_b_units(p, desk))


def test_available_intensity_domain(desk, desk_solution):
    with pytest.raises(an.DomainError):
        an.available_bs_intensity(desk_solution.availability.p_cov[-1] * 1.01, desk_solution.v,
                                  desk_solution.availability, desk)


def test_association_prob_support(desk, desk_solution):
    amap, v = desk_solution.availability, desk_solution.v
    l = 50
    inside = an.association_prob(amap.p_cov[l] * 0.99, l, v, amap, desk)
    assert 0 < inside < 1
    assert an.association_prob(amap.p_cov[l] * 1.01, l, v, amap, desk) == 0.0


def test_served_intensity_against_quadrature(desk, desk_solution):
    amap, v = desk_solution.availability, desk_solution.v
    ups = intensity_constants(desk).upsilon_units
    rate = desk.lambda_mt_eff * ups * desk.delta

    def integrand(s):
        return rate * s ** (desk.delta - 1) * math.exp(-_lambda_a_direct(s, v, amap, desk))

    pts = list(amap.p_cov[amap.p_cov < 6.0])
    for l, p in ((200, 6.0), (30, 6.0), (200, 0.7)):
        top = min(p, amap.p_cov[l])
        ref = integrate.quad(integrand, 0, top, points=[x for x in pts if x < top], limit=400)[0]
        assert an.served_mt_intensity(p, l, v, amap, desk) == pytest.approx(ref, rel=1e-7)


def test_served_intensity_with_empty_battery_mass(desk):
    # every BS at level 0: the thinning factor is 0 on every segment
    amap = an.build_availability_map(desk)
    v = np.zeros(201)
    v[0] = 1.0
    fn = an._ServedIntensity(v, amap, desk)
    # nothing is available, so no MT is taken by another BS either
    full = desk.lambda_mt_eff / desk.deployment.lambda_bs * an.lambda_b_units(3.0, desk)
    assert fn(3.0) == pytest.approx(full, rel=1e-12)


def test_phi_limit():
    x = np.array([0.0, 1e-12, 1.0, 50.0])
    assert np.allclose(an._phi(x), [1.0, 1.0, 1 - math.exp(-1), 1 / 50.0])


def test_harvest_pmf():
    cfg = NetworkConfig.desk().with_values(burst_size=4, harvest_rate=5.0)
    units, probs = an.harvest_pmf(cfg)
    assert probs.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(units % 4 == 0)
    assert units @ probs == pytest.approx(20.0, rel=1e-12)
    none = an.harvest_pmf(cfg.with_values(harvest_rate=0.0))
    assert none[0].tolist() == [0] and none[1].tolist() == [1.0]


def test_consumption_rows(desk, desk_solution):
    c = desk_solution.consumption
    assert np.max(np.abs(c.sum(axis=1) - 1)) < 1e-10
    assert np.allclose(np.triu(c, k=1), 0.0)
    assert c[0, 0] == 1.0
    nz = an.consumption_matrix(desk_solution.v, desk_solution.availability, desk, include_zero=False)
    assert np.all(nz[1:, 0] == 0.0)
    assert np.max(np.abs(nz.sum(axis=1) - 1)) < 1e-10
    assert np.array_equal(an.consumption_pmf(7, desk_solution.v, desk_solution.availability, desk), c[7, :8])


def test_transition_rule_on_small_chain():
    cfg = NetworkConfig.desk().with_values(levels=6, broadcast_cost_units=1)
    cons = np.zeros((6, 6))
    cons[:, 0] = 1.0
    cons[3] = [0.0, 0.5, 0.5, 0.0, 0.0, 0.0]
    harvest = (np.array([0, 2]), np.array([0.25, 0.75]))
    p = an.transition_matrix(cons, harvest, cfg)
    assert np.allclose(p.sum(axis=1), 1.0)
    # level 3 uses 1 or 2 units, gains 0 or 2, then pays 1 for the next broadcast
    expected = np.zeros(6)
    for m, pm in ((1, 0.5), (2, 0.5)):
        for h, ph in ((0, 0.25), (2, 0.75)):
            expected[min(max(3 - m + h - 1, 0), 5)] += pm * ph
    assert np.allclose(p[3], expected)
    assert p[5, 5] == pytest.approx(0.75)  # full battery clips
    assert p[0, 0] == pytest.approx(0.25) and p[0, 1] == pytest.approx(0.75)


def test_stationary_without_users_fills_batteries():
    cfg = NetworkConfig.desk().with_values(lambda_mt_per_m2=0.0)
    sol = an.solve_stationary(cfg)
    assert sol.v[-1] == pytest.approx(1.0, abs=1e-5)
    out = an.outage_probability(sol.v, sol.availability, cfg)
    ups = intensity_constants(cfg).upsilon_units
    closed = math.exp(-cfg.deployment.lambda_bs * ups * cfg.levels ** cfg.delta)
    assert out == pytest.approx(closed, rel=1e-4)


def test_stationary_fixed_point(desk, desk_solution):
    sol = desk_solution
    assert sol.residual < 1e-10
    assert sol.v.sum() == pytest.approx(1.0, abs=1e-12)
    cons = an.consumption_matrix(sol.v, sol.availability, desk)
    p = an.transition_matrix(cons, an.harvest_pmf(desk), desk)
    assert np.mean((sol.v @ p - sol.v) ** 2) < 1e-10


def test_nonconvergence_raised(desk):
    with pytest.raises(an.NonConvergence) as exc:
        an.solve_stationary(desk, max_iter=3)
    assert exc.value.iterations == 3 and exc.value.residual > 1e-10


def test_damping_reaches_same_point(desk, desk_solution):
    sol = an.solve_stationary(desk, damping=0.3)
    assert 0.5 * np.abs(sol.v - desk_solution.v).sum() < 1e-3


def test_outage_decreases_with_battery_capacity():
    base = NetworkConfig.desk()
    out = []
    for cap in (0.5, 1.0, 2.0):
        cfg = base.with_values(capacity_watts=cap, harvest_rate=20.0)
        sol = an.solve_stationary(cfg)
        out.append(an.outage_probability(sol.v, sol.availability, cfg))
    assert out[0] > out[1] > out[2]


def test_tail_integral_closed_form_matches_quadrature():
    u0 = np.array([0.0, 1e-4, 0.2, 1.0, 3.7, 40.0])
    closed = an.tail_integral(u0, 4.0, method="closed")
    quad = an.tail_integral(u0, 4.0, method="quad")
    assert np.max(np.abs(closed - quad)) < 1e-9
    assert closed[0] == pytest.approx(math.pi)


@pytest.mark.parametrize("alpha,u0,frozen", [
    (3.0, 0.0, 3.6275987284684357), (3.0, 0.3, 3.023603938430139), (3.0, 2.0, 2.1469065667314844),
    (5.0, 0.0, 3.3032659991941244), (5.0, 0.3, 1.871973077996345), (5.0, 2.0, 0.940319868945644),
])
def test_tail_integral_general_alpha(alpha, u0, frozen):
    # frozen values: B(d, 1-d) (1 - I_{u0/(1+u0)}(d, 1-d)), d = 2/alpha
    assert an.tail_integral(u0, alpha) == pytest.approx(frozen, rel=1e-9)


def test_tail_integral_rejects_closed_form_off_alpha_four():
    with pytest.raises(ValueError):
        an.tail_integral(0.5, 3.0, method="closed")


def test_coverage_properties(desk, desk_solution):
    sol = desk_solution
    t = 10 ** (np.arange(-10, 21, 5) / 10)
    cov = an.coverage_probability(t, sol.v, sol.consumption, sol.availability, desk)
    assert np.all((cov > 0) & (cov <= 1))
    assert np.all(np.diff(cov) < 0)


def test_coverage_without_interference_is_one(desk):
    amap = an.build_availability_map(desk)
    v = np.full(201, 1 / 201)
    cons = np.zeros((201, 201))
    cons[:, 0] = 1.0
    assert an.coverage_probability(3.0, v, cons, amap, desk) == 1.0


def test_coverage_general_alpha_runs():
    cfg = NetworkConfig.desk().with_values(alpha=3.5)
    rep = an.analyze(cfg, threshold_db=(0.0, 10.0))
    assert 0 < rep.coverage[1] < rep.coverage[0] < 1


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(1, 25))
def test_compound_sum_mean_matches_campbell(scale, cap):
    # E[sum ceil(p)] = sum_q q C_q; the pmf over a wide window must reproduce it
    lam = lambda p: scale * math.sqrt(p)  # noqa: E731
    pmf = an.compound_sum_pmf(1000, lam, cap)
    mean = sum(q * (lam(q) - lam(q - 1)) for q in range(1, cap + 1))
    assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.arange(1001) @ pmf == pytest.approx(mean, rel=1e-8)
