import numpy as np
import pytest

from andlab import (DisorderSpec, FractionalMomentParams, GoodBoxParams,
                    MsaParams, apriori_constant, apriori_integral,
                    build_delone, build_lattice, decay_rate_fit,
                    decoupling_check, fractional_moment,
                    fractional_moment_profile, good_box_probability,
                    msa_scale_run, msa_schedule, sample_potential,
                    wegner_between_boxes, wegner_estimate)
from andlab.criteria import box_is_good, good_box_probability_sup
from andlab.errors import ValidationError


def uspec(lam=1.0, seed=7, a=0.0, b=1.0):
    return DisorderSpec("uniform", lam=lam, seed=seed, a=a, b=b)


# --- Wegner estimates ---------------------------------------------------------

def test_wegner_single_vertex_exact_probability():
    topo = build_lattice([1])
    est = wegner_estimate(uspec(seed=42), topo, [0], 0.5, 0.1, 10_000)
    # oracle: P(|omega - 0.5| < 0.1) = 0.2 for uniform(0, 1)
    assert abs(est.mean - 0.2) <= 3.0 * est.stderr
    assert est.bound_value == pytest.approx(0.2)


def test_wegner_exponent_near_one():
    topo = build_lattice([10])
    spec = uspec(lam=2.0, seed=42)
    etas = [0.01, 0.02, 0.04, 0.08]
    ps = [wegner_estimate(spec, topo, range(10), 1.0, eta, 8000).mean
          for eta in etas]
    slope = np.polyfit(np.log(etas), np.log(ps), 1)[0]
    assert abs(slope - 1.0) < 0.15


def test_wegner_deterministic_spectrum_off_energy():
    topo = build_lattice([8])
    spec = uspec(lam=0.0)
    est = wegner_estimate(spec, topo, range(8), 5.0, 0.05, 50)
    assert est.mean == 0.0


def test_wegner_monotone_in_eta_under_common_seeds():
    topo = build_lattice([6])
    spec = uspec(lam=1.0, seed=13)
    means = [wegner_estimate(spec, topo, range(6), 0.3, eta, 400).mean
             for eta in (0.02, 0.05, 0.1, 0.3)]
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_wegner_bernoulli_has_no_bound():
    topo = build_lattice([4])
    spec = DisorderSpec("bernoulli", lam=1.0, seed=3, p=0.5)
    est = wegner_estimate(spec, topo, range(4), 0.5, 0.1, 100)
    assert est.bound_value is None and est.bound_satisfied is None


def test_wegner_between_single_vertices_exact():
    topo = build_lattice([2])
    est = wegner_between_boxes(uspec(seed=8), topo, [0], [1], 0.05, 10_000)
    # oracle: P(|w1 - w2| < 0.1) = 0.1 * (2 - 0.1) from the triangle density
    exact = 0.1 * (2.0 - 0.1)
    assert abs(est.mean - exact) <= 3.0 * est.stderr


def test_wegner_between_certain_event():
    topo = build_lattice([4])
    est = wegner_between_boxes(uspec(), topo, [0, 1], [2, 3], 1.0, 50)
    assert est.mean == 1.0


def test_wegner_between_disjoint_spectra_uncorrelated():
    topo = build_lattice([8])
    spec = uspec(seed=21)
    n, E = 2000, 0.5
    d1 = np.empty(n)
    d2 = np.empty(n)
    from andlab import assemble_hamiltonian, restrict
    import scipy.linalg
    for r in range(n):
        pot = sample_potential(spec, topo, r)
        H = assemble_hamiltonian(topo, pot, 1.0)
        e1 = scipy.linalg.eigvalsh(restrict(H, [0, 1, 2]).to_dense())
        e2 = scipy.linalg.eigvalsh(restrict(H, [5, 6, 7]).to_dense())
        d1[r] = np.abs(e1 - E).min()
        d2[r] = np.abs(e2 - E).min()
    corr = np.corrcoef(d1, d2)[0, 1]
    assert abs(corr) < 3.0 / np.sqrt(n)


def test_wegner_between_rejects_overlap():
    topo = build_lattice([5])
    with pytest.raises(ValidationError):
        wegner_between_boxes(uspec(), topo, [0, 1], [1, 2], 0.1, 10)


# --- good boxes ----------------------------------------------------------------

def test_good_box_deterministic_off_spectrum():
    # lam=0, E=5 is 3 units off the free band: Combes-Thomas decay wins
    topo = build_lattice([25])
    spec = uspec(lam=0.0)
    params = GoodBoxParams(E=5.0, L=20, m=0.05, u=12)
    est = good_box_probability(spec, topo, params, 2)
    assert est.mean == 0.0


def test_good_box_free_resolvent_inside_band():
    # lam=0, E=0 sits in the band: no decay, never good
    topo = build_lattice([25])
    spec = uspec(lam=0.0)
    params = GoodBoxParams(E=0.0, L=20, m=0.2, u=12)
    est = good_box_probability(spec, topo, params, 2)
    assert est.mean == 1.0


def test_good_box_high_disorder_mostly_good():
    topo = build_lattice([25])
    spec = uspec(lam=16.0, seed=7)
    params = GoodBoxParams(E=8.0, L=20, m=0.2, u=12)
    est = good_box_probability(spec, topo, params, 300)
    assert est.mean < 0.1


def test_good_box_monotone_in_m_under_common_seeds():
    topo = build_lattice([25])
    spec = uspec(lam=4.0, seed=5)
    means = [good_box_probability(spec, topo,
                                  GoodBoxParams(E=2.0, L=12, m=m, u=12),
                                  60).mean
             for m in (0.05, 0.15, 0.3, 0.6)]
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_good_box_translation_invariance_on_torus():
    topo = build_lattice([16], boundary="periodic")
    spec = uspec(lam=3.0, seed=31)
    sides = np.array([16])
    gamma = 5
    params_u = GoodBoxParams(E=1.0, L=6, m=0.3, u=2)
    params_v = GoodBoxParams(E=1.0, L=6, m=0.3, u=(2 + gamma) % 16)
    for r in range(40):
        pot = sample_potential(spec, topo, r)
        # potential mapped by the translation: v'(x) = v(x - gamma)
        shifted = pot.values[(np.arange(16) - gamma) % 16]
        assert box_is_good(topo, pot.values, 3.0, params_u) == \
            box_is_good(topo, shifted, 3.0, params_v)


def test_good_box_sup_over_centers_on_delone():
    topo = build_delone([20], 1, seed=2)
    spec = uspec(lam=4.0, seed=3)
    from dataclasses import replace
    params = GoodBoxParams(E=2.0, L=8, m=0.1, u=0)
    best, ests = good_box_probability_sup(spec, topo, params, [6, 9, 13], 30)
    assert best.mean == max(e.mean for e in ests)


def test_good_box_validation():
    with pytest.raises(ValidationError):
        GoodBoxParams(E=0.0, L=3, m=0.1, u=0)
    with pytest.raises(ValidationError):
        GoodBoxParams(E=0.0, L=8, m=0.0, u=0)


# --- multiscale schedule ----------------------------------------------------------

def test_msa_schedule_odd_rounding_oracle():
    # oracle: smallest odd integer >= L^alpha, applied from L0 = 10
    def next_odd(x):
        k = int(np.ceil(x))
        return k if k % 2 else k + 1

    got = msa_schedule(10, 1.5, 2)
    expect = [next_odd(10)]
    for _ in range(2):
        expect.append(next_odd(expect[-1] ** 1.5))
    assert got == expect == [11, 37, 227]


def test_msa_schedule_rejects_boundary_alpha():
    for alpha in (1.0, 2.0):
        with pytest.raises(ValidationError):
            msa_schedule(10, alpha, 2)
    with pytest.raises(ValidationError):
        MsaParams(L0=10, alpha=2.0, beta=3.0, k_max=2)


def test_msa_run_high_disorder_monotone():
    spec = uspec(lam=16.0, seed=11)
    params = MsaParams(L0=5, alpha=1.5, beta=2.5, k_max=2)
    run = msa_scale_run(spec, params, m=0.2, E=8.0, n_samples=150, d=1)
    assert len(run.scales) >= 2
    means = [e.mean for e in run.estimates]
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert run.thresholds == tuple(L ** -2.5 for L in run.scales)


def test_msa_run_budget_truncates():
    spec = uspec(lam=8.0, seed=1)
    params = MsaParams(L0=9, alpha=1.9, beta=2.5, k_max=6)
    run = msa_scale_run(spec, params, m=0.2, E=4.0, n_samples=4, d=1,
                        volume_budget=128)
    assert run.truncated
    assert all((L + 5) <= 128 for L in run.scales)


def test_msa_rejects_small_beta():
    spec = uspec()
    params = MsaParams(L0=5, alpha=1.5, beta=1.5, k_max=1)
    with pytest.raises(ValidationError):
        msa_scale_run(spec, params, m=0.2, E=0.0, n_samples=4, d=1)


# --- fractional moments -------------------------------------------------------------

def test_fractional_moment_free_scalar():
    topo = build_lattice([1])
    spec = uspec(lam=0.0)
    params = FractionalMomentParams(s=0.5, z=1j)
    est = fractional_moment(spec, topo, params, 0, 0, 50)
    assert est.mean == pytest.approx(1.0)
    assert est.stderr == 0.0


@pytest.mark.parametrize("lam", [4.0, 8.0, 16.0])
def test_fractional_moment_diagonal_apriori_bound(lam):
    topo = build_lattice([61])
    spec = uspec(lam=lam, seed=3)
    params = FractionalMomentParams(s=0.5, z=0.5 + 1e-2j)
    est = fractional_moment(spec, topo, params, 30, 30, 150)
    assert est.bound_value == pytest.approx(
        apriori_constant(spec, 0.5) / lam ** 0.5)
    assert est.mean - 3.0 * est.stderr <= est.bound_value
    assert est.bound_satisfied


def test_fractional_moment_profile_decays():
    topo = build_lattice([101])
    spec = uspec(lam=10.0, seed=5)
    params = FractionalMomentParams(s=1.0 / 3.0, z=0.0 + 1e-3j)
    x = 50
    targets = [x + d for d in range(1, 11)]
    ests = fractional_moment_profile(spec, topo, params, x, targets, 150)
    fit = decay_rate_fit(range(1, 11), [e.mean for e in ests])
    assert fit.rate < -0.1
    assert fit.r_squared >= 0.9


def test_fractional_moment_validation():
    with pytest.raises(ValidationError):
        FractionalMomentParams(s=1.2, z=1j)
    with pytest.raises(ValidationError):
        FractionalMomentParams(s=0.5, z=1.0 + 0j)


# --- regularity integral and decoupling -----------------------------------------------

def test_apriori_integral_center_closed_form():
    spec = uspec()
    # oracle: antiderivative 2*2*sqrt(1/2) = 2 sqrt 2
    assert apriori_integral(spec, 0.5, 0.5) == pytest.approx(
        2.0 * np.sqrt(2.0), abs=1e-8)


def test_apriori_integral_outside_closed_form():
    spec = uspec()
    # oracle: int_0^1 (10 - v)^(-1/2) dv = 2 (sqrt 10 - 3)
    assert apriori_integral(spec, 0.5, 10.0) == pytest.approx(
        2.0 * (np.sqrt(10.0) - 3.0), abs=1e-8)


def test_apriori_integral_complex_beta_bounded():
    spec = uspec()
    for s in (0.25, 0.5, 0.75):
        val = apriori_integral(spec, s, 0.3 + 1j)
        assert 0.0 < val <= 1.0


def test_apriori_integral_rejects_s_out_of_range():
    with pytest.raises(ValidationError):
        apriori_integral(uspec(), 1.0, 0.5)
    with pytest.raises(ValidationError):
        apriori_integral(DisorderSpec("bernoulli", lam=1.0, seed=0, p=0.5),
                         0.5, 0.5)


def test_apriori_constant_closed_form():
    # oracle: for uniform(0,1) the sup sits at beta = 1/2, value 2^s/(1-s)
    for s in (0.25, 0.5, 0.75):
        assert apriori_constant(uspec(), s) == pytest.approx(
            2.0 ** s / (1.0 - s), rel=1e-8)


def test_decoupling_far_alpha_is_never_argmax():
    spec = uspec()
    res = decoupling_check(spec, 0.5, [0.5, 1000.0], [0.25, 0.75])
    assert res.argmax[0] != 1000.0
    # ratio at |alpha| = 1e3 is tiny: rhs >= (|alpha|-1)^s * lhs
    big = res.ratios[1, :]
    assert np.nanmax(big) < 1.0 / (999.0 ** 0.5) * 1.01


def test_decoupling_grid_refinement_stability():
    spec = uspec()
    grid1 = [0.0, 0.25, 0.5, 0.75, 1.0]
    grid2 = list(np.linspace(0.0, 1.0, 9))
    r1 = decoupling_check(spec, 0.5, grid1, grid1)
    r2 = decoupling_check(spec, 0.5, grid2, grid2)
    assert r2.c2 >= r1.c2  # refinement by inclusion
    assert abs(r2.c2 - r1.c2) / r1.c2 < 0.05
    assert np.isfinite(r1.c2)


def test_decoupling_rejects_point_mass():
    spec = DisorderSpec("bernoulli", lam=1.0, seed=0, p=0.5)
    with pytest.raises(ValidationError):
        decoupling_check(spec, 0.5, [0.0], [0.5])


# --- decay fits ---------------------------------------------------------------------------

def test_decay_fit_exact_series():
    d = np.arange(1, 9)
    fit = decay_rate_fit(d, np.exp(-0.7 * d))
    assert fit.rate == pytest.approx(-0.7, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_decay_fit_noisy_series():
    rng = np.random.default_rng(0)
    d = np.arange(1, 30)
    noise = 1.0 + 0.01 * rng.standard_normal(d.size)
    fit = decay_rate_fit(d, np.exp(-0.42 * d) * noise)
    assert fit.rate == pytest.approx(-0.42, abs=0.05)


def test_decay_fit_constant_series():
    fit = decay_rate_fit([1, 2, 3, 4], [2.0, 2.0, 2.0, 2.0])
    assert fit.rate == 0.0
    assert fit.r_squared == 0.0


def test_decay_fit_validation():
    with pytest.raises(ValidationError):
        decay_rate_fit([1, 2, 3], [1.0, 0.5, 0.25])
    with pytest.raises(ValidationError):
        decay_rate_fit([1, 2, 3, 4], [1.0, 0.5, -0.25, 0.1])
