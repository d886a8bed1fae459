import numpy as np
import pytest
import scipy.linalg

from andlab import (BoxRegion, DisorderSpec, assemble_hamiltonian,
                    boundary_operator, build_bethe, build_delone,
                    build_lattice, decomposition_residual, eigendecompose,
                    extreme_eigenvalues, ids_estimate, restrict,
                    sample_potential, spectrum_hull,
                    translation_covariance_check, weyl_residual)
from andlab.errors import BudgetExceededError, ValidationError
from andlab.operators import direct_sum


def uspec(lam=1.0, seed=7, a=0.0, b=1.0):
    return DisorderSpec("uniform", lam=lam, seed=seed, a=a, b=b)


# --- disorder sampling -----------------------------------------------------

def test_bernoulli_p0_is_zero_potential():
    topo = build_lattice([8])
    spec = DisorderSpec("bernoulli", lam=1.0, seed=1, p=0.0)
    pot = sample_potential(spec, topo, 0)
    assert (pot.values == 0.0).all()


def test_uniform_sample_mean_clt():
    topo = build_lattice([100_000])
    pot = sample_potential(uspec(seed=2024), topo, 0)
    # oracle: 3 sigma / sqrt(n) with sigma^2 = 1/12
    bound = 3.0 * np.sqrt(1.0 / 12.0) / np.sqrt(topo.vertex_count)
    assert abs(pot.values.mean() - 0.5) < bound < 0.005


def test_sampling_is_deterministic_per_key():
    topo = build_lattice([50])
    a = sample_potential(uspec(seed=5), topo, 3)
    b = sample_potential(uspec(seed=5), topo, 3)
    c = sample_potential(uspec(seed=5), topo, 4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_values_live_in_support():
    topo = build_lattice([200])
    spec = DisorderSpec("discrete", lam=1.0, seed=9,
                        values=(0.0, 0.5, 2.0), probs=(0.2, 0.3, 0.5))
    pot = sample_potential(spec, topo, 1)
    assert set(np.unique(pot.values)) <= {0.0, 0.5, 2.0}


def test_delone_potential_vanishes_off_mask():
    topo = build_delone([12], 1, seed=4)
    pot = sample_potential(uspec(a=0.5, b=1.5), topo, 0)
    assert (pot.values[~topo.mask] == 0.0).all()
    assert (pot.values[topo.mask] != 0.0).all()


def test_spec_validation():
    with pytest.raises(ValidationError):
        DisorderSpec("uniform", lam=1.0, seed=0, a=1.0, b=0.0)
    with pytest.raises(ValidationError):
        DisorderSpec("bernoulli", lam=1.0, seed=0, p=1.5)
    with pytest.raises(ValidationError):
        DisorderSpec("discrete", lam=1.0, seed=0, values=(1.0,), probs=(0.9,))


# --- assembly and restriction ----------------------------------------------

def test_pure_adjacency_tridiagonal():
    topo = build_lattice([3])
    H = assemble_hamiltonian(topo, np.zeros(3), 0.0)
    assert np.array_equal(H.to_dense(),
                          [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_single_vertex_diagonal():
    topo = build_lattice([1])
    H = assemble_hamiltonian(topo, np.array([0.7]), 2.0)
    assert H.to_dense()[0, 0] == pytest.approx(1.4)


def test_laplacian_convention_by_hand():
    topo = build_lattice([3])
    H = assemble_hamiltonian(topo, np.zeros(3), 1.0, "laplacian")
    # oracle: deg - A computed by hand
    expect = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
    assert np.array_equal(H.to_dense(), expect)


def test_assembly_scaling_linearity():
    topo = build_lattice([4, 3])
    pot = sample_potential(uspec(), topo, 0)
    H1 = assemble_hamiltonian(topo, pot, 2.5)
    H2 = assemble_hamiltonian(topo, 2.5 * pot.values, 1.0)
    assert np.array_equal(H1.to_dense(), H2.to_dense())


def test_restrict_whole_graph_identity():
    topo = build_lattice([5])
    H = assemble_hamiltonian(topo, sample_potential(uspec(), topo, 0), 1.0)
    sub = restrict(H, range(5))
    assert np.array_equal(sub.to_dense(), H.to_dense())


def test_restrict_prefix_block():
    topo = build_lattice([3])
    H = assemble_hamiltonian(topo, sample_potential(uspec(), topo, 0), 1.0)
    sub = restrict(H, [0, 1])
    assert np.array_equal(sub.to_dense(), H.to_dense()[:2, :2])


def test_restrict_center_of_square():
    topo = build_lattice([3, 3])
    pot = sample_potential(uspec(lam=3.0), topo, 2)
    H = assemble_hamiltonian(topo, pot, 3.0)
    center = topo.vertex_at([1, 1])
    sub = restrict(H, [center])
    assert sub.to_dense()[0, 0] == pytest.approx(3.0 * pot.values[center])
    assert sub.sites.tolist() == [center]


def test_dimension_mismatch_rejected():
    topo = build_lattice([4])
    with pytest.raises(ValidationError):
        assemble_hamiltonian(topo, np.zeros(5), 1.0)


# --- boundary operator -----------------------------------------------------

def test_boundary_operator_path_cut():
    topo = build_lattice([3])
    H = assemble_hamiltonian(topo, np.zeros(3), 0.0)
    ups = boundary_operator(H, [0, 1]).toarray()
    expect = np.zeros((3, 3))
    expect[1, 2] = expect[2, 1] = 1.0
    assert np.array_equal(ups, expect)


@pytest.mark.parametrize("convention,sign", [("adjacency", 1.0),
                                             ("laplacian", -1.0)])
def test_boundary_sign_follows_convention(convention, sign):
    topo = build_lattice([4])
    H = assemble_hamiltonian(topo, np.zeros(4), 0.0, convention)
    ups = boundary_operator(H, [0, 1]).toarray()
    assert ups[1, 2] == sign


def test_boundary_support_left_column():
    topo = build_lattice([3, 3])
    H = assemble_hamiltonian(topo, np.zeros(9), 0.0)
    column = [topo.vertex_at([0, j]) for j in range(3)]
    ups = boundary_operator(H, column)
    # oracle: 3 cut edges, both orientations
    assert ups.nnz == 6


@pytest.mark.parametrize("convention", ["adjacency", "laplacian"])
def test_decomposition_identity_exhaustive_small(convention):
    rng = np.random.default_rng(0)
    for topo in (build_lattice([6]), build_lattice([3, 3]), build_bethe(2, 2)):
        pot = sample_potential(uspec(seed=3), topo, 1)
        H = assemble_hamiltonian(topo, pot, 1.7, convention)
        n = topo.vertex_count
        for _ in range(12):
            k = rng.integers(1, n)
            region = rng.choice(n, size=k, replace=False)
            assert decomposition_residual(H, region) == 0.0


def test_direct_sum_zeroes_cut_entries():
    topo = build_lattice([4])
    H = assemble_hamiltonian(topo, np.zeros(4), 0.0)
    ds = direct_sum(H, [0, 1]).toarray()
    assert ds[1, 2] == 0.0 and ds[0, 1] == 1.0 and ds[2, 3] == 1.0


# --- eigendecomposition ----------------------------------------------------

def test_path3_closed_form_eigenvalues():
    topo = build_lattice([3])
    H = assemble_hamiltonian(topo, np.zeros(3), 0.0)
    dec = eigendecompose(H)
    # oracle: 2 cos(k pi / (n+1))
    expect = np.sort(2.0 * np.cos(np.arange(1, 4) * np.pi / 4.0))
    assert dec.eigenvalues == pytest.approx(expect, abs=1e-12)


def test_eigendecompose_scalar():
    topo = build_lattice([1])
    H = assemble_hamiltonian(topo, np.array([0.3]), 1.0)
    dec = eigendecompose(H)
    assert dec.eigenvalues == pytest.approx([0.3])
    assert abs(dec.eigenvectors[0, 0]) == pytest.approx(1.0)


def test_eigendecompose_residual_contract():
    topo = build_lattice([50])
    pot = sample_potential(uspec(lam=2.0), topo, 0)
    H = assemble_hamiltonian(topo, pot, 2.0)
    dec = eigendecompose(H)
    norm = np.linalg.norm(H.to_dense(), 2)
    assert dec.residual(H) <= 1e-8 * norm
    assert dec.orthonormality_defect() <= 1e-10


def test_dense_cap_instructs_iterative_mode():
    topo = build_lattice([10])
    H = assemble_hamiltonian(topo, np.zeros(10), 0.0)
    with pytest.raises(BudgetExceededError, match="extreme_eigenvalues"):
        eigendecompose(H, dense_cap=5)


def test_interlacing_bracket_per_realization():
    topo = build_lattice([5, 4])
    spec = uspec(lam=3.0)
    pot = sample_potential(spec, topo, 0)
    H = assemble_hamiltonian(topo, pot, 3.0)
    lo, hi = extreme_eigenvalues(H)
    sub = restrict(H, BoxRegion(topo.vertex_at([2, 2]), 3))
    slo, shi = extreme_eigenvalues(sub)
    width = 3.0 * (spec.b - spec.a)
    assert lo - width <= slo and shi <= hi + width


def test_bernoulli_p1_is_exact_shift():
    topo = build_lattice([12])
    spec = DisorderSpec("bernoulli", lam=1.5, seed=0, p=1.0)
    pot = sample_potential(spec, topo, 0)
    H = assemble_hamiltonian(topo, pot, 1.5)
    dec = eigendecompose(H)
    free = eigendecompose(assemble_hamiltonian(topo, np.zeros(12), 0.0))
    assert dec.eigenvalues == pytest.approx(free.eigenvalues + 1.5, abs=1e-12)


# --- spectrum hull ----------------------------------------------------------

def test_hull_free_chain_closed_form():
    topo = build_lattice([500])
    hull = spectrum_hull(uspec(lam=0.0), topo, 1)
    # oracle: extreme eigenvalues of the free chain are +-2cos(pi/(n+1))
    edge = 2.0 * np.cos(np.pi / 501.0)
    assert hull.empirical_max == pytest.approx(edge, abs=1e-9)
    assert hull.empirical_min == pytest.approx(-edge, abs=1e-9)
    assert (hull.theory_min, hull.theory_max) == (-2.0, 2.0)


def test_hull_bethe_against_radial_reduction():
    K, depth = 2, 8
    topo = build_bethe(K, depth)
    hull = spectrum_hull(DisorderSpec("bernoulli", lam=0.0, seed=0, p=0.0),
                         topo, 1)
    # oracle: radial reduction of the rooted tree is the (depth+1)-site
    # Jacobi matrix with hopping sqrt(K)
    J = np.diag(np.full(depth, np.sqrt(K)), 1)
    J = J + J.T
    top = scipy.linalg.eigvalsh(J)[-1]
    assert hull.empirical_max == pytest.approx(top, abs=1e-9)
    assert hull.empirical_max <= hull.theory_max == 2.0 * np.sqrt(K)


def test_hull_contained_in_theory():
    topo = build_lattice([300])
    hull = spectrum_hull(uspec(lam=1.0, seed=11), topo, 5)
    assert hull.theory_min <= hull.empirical_min
    assert hull.empirical_max <= hull.theory_max
    assert (hull.theory_min, hull.theory_max) == (-2.0, 3.0)


# --- covariance, ids, weyl ---------------------------------------------------

def test_translation_covariance_identity_shift():
    topo = build_lattice([6], boundary="periodic")
    assert translation_covariance_check(uspec(), topo, [0]) == 0.0


def test_translation_covariance_1d():
    topo = build_lattice([6], boundary="periodic")
    assert translation_covariance_check(uspec(seed=3), topo, [2]) == 0.0


def test_translation_covariance_2d_oracle():
    topo = build_lattice([4, 4], boundary="periodic")
    gamma = np.array([1, 3])
    assert translation_covariance_check(uspec(seed=5), topo, gamma) == 0.0
    # independent permutation-conjugation oracle
    spec = uspec(seed=5)
    pot = sample_potential(spec, topo, 0)
    H = assemble_hamiltonian(topo, pot, 1.0).to_dense()
    n = topo.vertex_count
    P = np.zeros((n, n))
    for v in range(n):
        shifted = (topo.coords[v] + gamma) % [4, 4]
        P[v, topo.vertex_at(shifted)] = 1.0
    Hs = assemble_hamiltonian(topo, pot.values[
        [topo.vertex_at((topo.coords[v] + gamma) % [4, 4]) for v in range(n)]
    ], 1.0).to_dense()
    assert np.array_equal(P @ H @ P.T, Hs)


def test_translation_covariance_rejects_open():
    topo = build_lattice([6])
    with pytest.raises(ValidationError):
        translation_covariance_check(uspec(), topo, [1])


def test_ids_limits_and_midpoint():
    topo = build_lattice([200])
    spec = uspec(lam=0.0)
    ids = ids_estimate(spec, topo, [-3.0, 0.0, 3.0], 2)
    assert ids.mean[0] == 0.0
    assert ids.mean[2] == 1.0
    # oracle: count of 2cos(k pi/(n+1)) <= 0
    evals = 2.0 * np.cos(np.arange(1, 201) * np.pi / 201.0)
    expect = np.sum(evals <= 0.0) / 200.0
    assert ids.mean[1] == pytest.approx(expect)
    assert abs(ids.mean[1] - 0.5) < 0.01
    assert (np.diff(ids.mean) >= 0).all()


def test_weyl_residual_shrinks_and_scales():
    r100 = weyl_residual(build_lattice([100]), 0.0)
    r400 = weyl_residual(build_lattice([400]), 0.0)
    r1600 = weyl_residual(build_lattice([1600]), 0.0)
    assert r400 < r100
    # oracle: hand expansion gives exactly sqrt(2)/sqrt(n) on the open chain
    for n, r in ((100, r100), (400, r400), (1600, r1600)):
        assert r == pytest.approx(np.sqrt(2.0 / n), rel=1e-12)


def test_weyl_residual_band_edge_boundary_defect():
    # E = 2, theta = 0: (A - 2) on the constant vector is -1 at both ends
    r = weyl_residual(build_lattice([100]), 2.0)
    assert r == pytest.approx(np.sqrt(2.0) / 10.0, rel=1e-12)


def test_weyl_rejects_outside_band():
    with pytest.raises(ValidationError):
        weyl_residual(build_lattice([10, 10]), 4.5)
