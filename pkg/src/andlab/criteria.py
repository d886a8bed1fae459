"""Monte-Carlo estimators for the probabilistic localization diagnostics.

Every estimator returns a DiagnosticEstimate carrying the sample mean,
its standard error, the sample count and the seed provenance, plus an
optional model bound and verdict.  Realizations are keyed by
(spec.seed, realization_index), so repeated runs are bit-identical and
parameter sweeps at a fixed seed share their random numbers (which makes
the monotonicity properties exact rather than statistical).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.optimize

from .errors import ValidationError
from .operators import assemble_hamiltonian, restrict, sample_potential
from .topology import BoxRegion, boundary_sets, build_lattice, resolve_region

__all__ = [
    "DiagnosticEstimate",
    "GoodBoxParams",
    "MsaParams",
    "FractionalMomentParams",
    "wegner_estimate",
    "wegner_between_boxes",
    "box_is_good",
    "good_box_probability",
    "good_box_probability_sup",
    "msa_schedule",
    "msa_scale_run",
    "MsaRun",
    "fractional_moment",
    "fractional_moment_profile",
    "apriori_integral",
    "apriori_constant",
    "decoupling_check",
    "DecouplingResult",
    "decay_rate_fit",
    "DecayFit",
]


@dataclass(frozen=True)
class DiagnosticEstimate:
    """Monte-Carlo estimate with provenance and an optional bound check."""

    mean: float
    stderr: float
    n_samples: int
    seed: int
    label: str
    bound_value: float | None = None
    bound_satisfied: bool | None = None


def _estimate(values, seed, label, bound=None):
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise ValidationError("estimators need n_samples >= 2")
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n))
    satisfied = None
    if bound is not None:
        satisfied = bool(mean - 3.0 * stderr <= bound)
    return DiagnosticEstimate(mean, stderr, n, int(seed), label,
                              None if bound is None else float(bound), satisfied)


def _region_spectra(spec, topology, members, n_samples, convention,
                    realization_offset=0):
    """Eigenvalue samples of H restricted to a vertex set, one row per
    realization.  The hopping block is fixed, so only the diagonal is
    resampled and the stack is diagonalized in one batched call."""
    m = members.size
    base = restrict(
        assemble_hamiltonian(topology, np.zeros(topology.vertex_count), 0.0,
                             convention),
        members).to_dense()
    mats = np.broadcast_to(base, (n_samples, m, m)).copy()
    rows = np.arange(m)
    for r in range(n_samples):
        pot = sample_potential(spec, topology, r + realization_offset)
        mats[r, rows, rows] += spec.lam * pot.values[members]
    return np.linalg.eigvalsh(mats)


def _scaled_density_sup(spec):
    """Sup of the density of the scaled coupling lam * omega."""
    if spec.lam <= 0:
        raise ValidationError("bound check needs lam > 0")
    return spec.density_sup / spec.lam


def wegner_estimate(spec, topology, region, E, eta, n_samples,
                    convention="adjacency"):
    """P(dist(E, sigma(H_region)) < eta), with the model bound
    rho_max * 2 eta * vol for absolutely continuous families.

    For singular families (bernoulli, discrete) the estimate is returned
    with the bound marked not applicable.
    """
    if not 0.0 < eta <= 1.0:
        raise ValidationError("eta must lie in (0, 1]")
    members = resolve_region(topology, region)
    spectra = _region_spectra(spec, topology, members, n_samples, convention)
    hits = (np.abs(spectra - E).min(axis=1) < eta).astype(float)
    bound = None
    if spec.absolutely_continuous and spec.lam > 0:
        bound = _scaled_density_sup(spec) * 2.0 * eta * members.size
    return _estimate(hits, spec.seed, f"wegner(E={E}, eta={eta})", bound)


def wegner_between_boxes(spec, topology, region1, region2, eta, n_samples,
                         convention="adjacency"):
    """P(some E is eta-close to both region spectra), decided per
    realization by the minimum pairwise gap between the two finite
    spectra being below 2 eta; disjointness of the regions is required
    (it makes the two spectra independent)."""
    if not 0.0 < eta <= 1.0:
        raise ValidationError("eta must lie in (0, 1]")
    m1 = resolve_region(topology, region1)
    m2 = resolve_region(topology, region2)
    if np.intersect1d(m1, m2).size:
        raise ValidationError("regions must be disjoint")
    s1 = _region_spectra(spec, topology, m1, n_samples, convention)
    s2 = _region_spectra(spec, topology, m2, n_samples, convention)
    gaps = np.abs(s1[:, :, None] - s2[:, None, :]).min(axis=(1, 2))
    hits = (gaps < 2.0 * eta).astype(float)
    bound = None
    if spec.absolutely_continuous and spec.lam > 0:
        bound = 4.0 * _scaled_density_sup(spec) * eta * m1.size * m2.size
    return _estimate(hits, spec.seed,
                     f"wegner_between(eta={eta})", bound)


@dataclass(frozen=True)
class GoodBoxParams:
    """Decay test for the box of side L at center u: from the core box of
    side floor(L/2) to the inner boundary, at energy E with rate m."""

    E: float
    L: int
    m: float
    u: int

    def __post_init__(self):
        if self.L < 4:
            raise ValidationError("good-box side must be >= 4 so that the "
                                  "core and the inner boundary are disjoint")
        if self.m <= 0:
            raise ValidationError("decay rate m must be positive")


SPECTRUM_HIT_TOL = 1e-12


def box_is_good(topology, potential, lam, params, convention="adjacency"):
    """Goodness of one realization: E outside the box spectrum and
    |G_box(E; x, y)| <= exp(-m L / 2) for every core x and inner-boundary
    y.  A spectrum hit within 1e-12 counts as not good."""
    box = BoxRegion(params.u, params.L)
    members = box.members(topology)
    inner = np.array(boundary_sets(topology, members).inner, dtype=np.int64)
    if inner.size == 0:
        raise ValidationError("box touches no complement: shrink L or grow "
                              "the topology")
    core = BoxRegion(params.u, params.L // 2).members(topology)
    H = restrict(assemble_hamiltonian(topology, potential, lam, convention),
                 members)
    Hd = H.to_dense()
    evals = scipy.linalg.eigvalsh(Hd)
    if np.abs(evals - params.E).min() < SPECTRUM_HIT_TOL:
        return False
    rows = np.array([H.row_of(v) for v in core])
    cols = np.array([H.row_of(v) for v in inner])
    A = Hd - params.E * np.eye(H.dim)
    rhs = np.zeros((H.dim, cols.size))
    rhs[cols, np.arange(cols.size)] = 1.0
    G = np.linalg.solve(A, rhs)
    worst = np.abs(G[rows, :]).max()
    return bool(worst <= math.exp(-params.m * params.L / 2.0))


def good_box_probability(spec, topology, params, n_samples,
                         convention="adjacency", realization_offset=0):
    """Monte-Carlo estimate of P(box is not (m, E)-good)."""
    bad = np.empty(n_samples)
    for r in range(n_samples):
        pot = sample_potential(spec, topology, r + realization_offset)
        bad[r] = 0.0 if box_is_good(topology, pot, spec.lam, params,
                                    convention) else 1.0
    return _estimate(bad, spec.seed,
                     f"not_good(E={params.E}, L={params.L}, m={params.m})")


def good_box_probability_sup(spec, topology, params, centers, n_samples,
                             convention="adjacency"):
    """Sup over box centers of the not-good probability; the uniform
    variant needed on non-ergodic (delone) topologies."""
    from dataclasses import replace
    ests = [good_box_probability(spec, topology, replace(params, u=int(u)),
                                 n_samples, convention) for u in centers]
    best = max(ests, key=lambda e: e.mean)
    return best, ests


def _next_odd_at_least(x):
    k = math.ceil(x)
    return k if k % 2 == 1 else k + 1


def msa_schedule(L0, alpha, k_max):
    """Scale sequence: each scale is the smallest odd integer >= previous
    scale to the power alpha (odd sides keep boxes symmetric)."""
    if not 1.0 < alpha < 2.0:
        raise ValidationError("alpha must lie in the open interval (1, 2)")
    if L0 < 4:
        raise ValidationError("initial scale must be >= 4")
    scales = [_next_odd_at_least(L0)]
    for _ in range(k_max):
        scales.append(_next_odd_at_least(scales[-1] ** alpha))
    return scales


@dataclass(frozen=True)
class MsaParams:
    L0: int
    alpha: float
    beta: float
    k_max: int

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValidationError("alpha must lie in (1, 2)")
        if self.beta <= 0:
            raise ValidationError("beta must be positive")


@dataclass(frozen=True)
class MsaRun:
    scales: tuple
    estimates: tuple
    thresholds: tuple
    verdicts: tuple
    truncated: bool


def msa_scale_run(spec, params, m, E, n_samples, d=1, convention="adjacency",
                  volume_budget=2048):
    """Good-box probabilities along the multiscale schedule.

    At each scale L the box of side L sits at the center of a fresh
    open lattice with margin 2; the verdict per scale is whether the
    estimated not-good probability is <= L^(-beta).  Scales whose box
    volume exceeds `volume_budget` truncate the run (reported in the
    result).
    """
    if params.beta <= 2 * d:
        raise ValidationError(f"beta must exceed 2d = {2*d} for the "
                              "induction hypothesis to make sense")
    scales_all = msa_schedule(params.L0, params.alpha, params.k_max)
    scales, ests, thresholds, verdicts = [], [], [], []
    truncated = False
    for L in scales_all:
        if (L + 5) ** d > volume_budget:
            truncated = True
            break
        topo = build_lattice([L + 5] * d, "open")
        center = topo.vertex_at([(L + 5) // 2] * d)
        gb = GoodBoxParams(E=E, L=L, m=m, u=center)
        est = good_box_probability(spec, topo, gb, n_samples, convention)
        scales.append(L)
        ests.append(est)
        thresholds.append(L ** (-params.beta))
        verdicts.append(bool(est.mean <= L ** (-params.beta)))
    return MsaRun(tuple(scales), tuple(ests), tuple(thresholds),
                  tuple(verdicts), truncated)


@dataclass(frozen=True)
class FractionalMomentParams:
    s: float
    z: complex

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValidationError("the fractional power s must lie in (0, 1); "
                                  "s < 1 is what keeps the moments finite")
        if complex(self.z).imag <= 0.0:
            raise ValidationError("fractional moments need Im z > 0")


def fractional_moment(spec, topology, params, x, y, n_samples,
                      convention="adjacency"):
    """E |G(z; x, y)|^s by Monte Carlo.  On the diagonal (x == y) the
    a-priori bound C1(s) / lam^s is attached for absolutely continuous
    families."""
    from .green import green_entry
    vals = np.empty(n_samples)
    z = complex(params.z)
    for r in range(n_samples):
        pot = sample_potential(spec, topology, r)
        H = assemble_hamiltonian(topology, pot, spec.lam, convention)
        vals[r] = abs(green_entry(H, z, x, y)) ** params.s
    bound = None
    if int(x) == int(y) and spec.absolutely_continuous and spec.lam > 0:
        bound = apriori_constant(spec, params.s) / spec.lam ** params.s
    return _estimate(vals, spec.seed,
                     f"fmm(s={params.s}, z={params.z}, x={x}, y={y})", bound)


def fractional_moment_profile(spec, topology, params, x, targets, n_samples,
                              convention="adjacency"):
    """E |G(z; x, y)|^s for many targets y from one solve per realization."""
    from .green import green_column
    targets = [int(t) for t in targets]
    vals = np.empty((n_samples, len(targets)))
    z = complex(params.z)
    for r in range(n_samples):
        pot = sample_potential(spec, topology, r)
        H = assemble_hamiltonian(topology, pot, spec.lam, convention)
        col = green_column(H, z, int(x))
        vals[r] = np.abs(col[targets]) ** params.s
    return [
        _estimate(vals[:, j], spec.seed,
                  f"fmm(s={params.s}, z={params.z}, x={x}, y={t})")
        for j, t in enumerate(targets)
    ]


def apriori_integral(spec, s, beta, abs_tol=1e-8):
    """Integral of rho(v) / |v - beta|^s over the support, beta complex.

    Adaptive quadrature with the singularity split at Re(beta); finite
    exactly because s < 1.
    """
    if not 0.0 < s < 1.0:
        raise ValidationError("s must lie in (0, 1): the integral may "
                              "diverge otherwise")
    if not spec.absolutely_continuous:
        raise ValidationError("a-priori integral needs an absolutely "
                              "continuous family")
    beta = complex(beta)
    a, b = spec.a, spec.b
    rho = 1.0 / (b - a)

    def f(v):
        return rho / abs(v - beta) ** s

    points = [beta.real] if a < beta.real < b else None
    val, err = scipy.integrate.quad(f, a, b, points=points,
                                    epsabs=abs_tol * 1e-2, limit=200)
    if err > abs_tol:
        raise ValidationError(f"quadrature error {err:.2e} above {abs_tol}")
    return float(val)


def apriori_constant(spec, s):
    """C1(s) = sup over beta of the regularity integral; the sup sits at a
    real beta inside the support, located numerically."""
    res = scipy.optimize.minimize_scalar(
        lambda t: -apriori_integral(spec, s, t),
        bounds=(spec.a, spec.b), method="bounded",
        options={"xatol": 1e-10})
    return float(-res.fun)


@dataclass(frozen=True)
class DecouplingResult:
    c2: float
    argmax: tuple
    ratios: np.ndarray
    flagged: tuple


def decoupling_check(spec, s, alpha_grid, beta_grid, rhs_floor=1e-14):
    """Smallest constant C2 on the grid with
    integral(|v-beta|^-s rho) <= C2 * integral(|v-alpha|^s |v-beta|^-s rho)
    for every grid pair; the attaining pair is reported.  Grid points
    whose right-hand side falls below `rhs_floor` are flagged and
    excluded."""
    if not spec.absolutely_continuous:
        raise ValidationError("decoupling check needs an absolutely "
                              "continuous family")
    if not 0.0 < s < 1.0:
        raise ValidationError("s must lie in (0, 1)")
    alphas = [complex(a) for a in alpha_grid]
    betas = [complex(b) for b in beta_grid]
    if not alphas or not betas:
        raise ValidationError("grids must be nonempty")
    a, b = spec.a, spec.b
    rho = 1.0 / (b - a)
    ratios = np.full((len(alphas), len(betas)), np.nan)
    flagged = []
    best = (-np.inf, None)
    for i, al in enumerate(alphas):
        for j, be in enumerate(betas):
            lhs = apriori_integral(spec, s, be)

            def g(v):
                return rho * abs(v - al) ** s / abs(v - be) ** s

            points = [be.real] if a < be.real < b else None
            rhs, _ = scipy.integrate.quad(g, a, b, points=points, limit=200)
            if rhs < rhs_floor:
                flagged.append((al, be))
                continue
            ratios[i, j] = lhs / rhs
            if ratios[i, j] > best[0]:
                best = (ratios[i, j], (al, be))
    if best[1] is None:
        raise ValidationError("every grid point was excluded")
    return DecouplingResult(float(best[0]), best[1], ratios, tuple(flagged))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    r_squared: float


def decay_rate_fit(distances, values):
    """Least squares of log(value) against distance.

    Decay shows up as a negative rate.  A constant series fits rate 0
    with R^2 = 0 (no variance to explain).
    """
    d = np.asarray(distances, dtype=float)
    v = np.asarray(values, dtype=float)
    if d.size != v.size or d.size < 4:
        raise ValidationError("need at least 4 (distance, value) pairs")
    if np.any(v <= 0.0):
        raise ValidationError("values must be positive to fit a log decay")
    y = np.log(v)
    if np.all(y == y[0]):
        return DecayFit(0.0, float(y[0]), 0.0)
    rate, intercept = np.polyfit(d, y, 1)
    fitted = rate * d + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(float(rate), float(intercept), float(r2))
