"""Random potentials, finite-volume Hamiltonians, and spectrum-level checks.

Two matrix conventions are supported and carried on every Hamiltonian:

* ``"adjacency"`` (default): H = A + lam*V, off-diagonal +1 on edges.
* ``"laplacian"``: H = deg - A + lam*V, off-diagonal -1 on edges.

The degree shift between the two is a constant on regular graphs and is
absorbed into the potential for spectral purposes; checks that quote a
band edge state their convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import BudgetExceededError, NumericalError, ValidationError
from .topology import BoxRegion, boundary_sets, resolve_region

__all__ = [
    "DisorderSpec",
    "PotentialSample",
    "HamiltonianMatrix",
    "SpectralDecomposition",
    "SpectrumHull",
    "sample_potential",
    "assemble_hamiltonian",
    "restrict",
    "boundary_operator",
    "direct_sum",
    "decomposition_residual",
    "eigendecompose",
    "extreme_eigenvalues",
    "spectrum_hull",
    "translation_covariance_check",
    "ids_estimate",
    "weyl_residual",
    "matrix_to_json",
    "matrix_from_json",
]

DENSE_EIG_CAP = 4096
MASK64 = 2**64 - 1


@dataclass(frozen=True)
class DisorderSpec:
    """I.i.d. site-coupling law: family, disorder strength, master seed.

    Families: ``uniform(a, b)``, ``bernoulli(p)`` on values {0, 1}, and
    ``discrete(values, probs)``.  All are compactly supported.
    """

    family: str
    lam: float
    seed: int
    a: float = 0.0
    b: float = 1.0
    p: float = 0.5
    values: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.family not in ("uniform", "bernoulli", "discrete"):
            raise ValidationError(f"unknown disorder family {self.family!r}")
        if self.lam < 0:
            raise ValidationError("disorder strength must be >= 0")
        if not (0 <= int(self.seed) <= MASK64):
            raise ValidationError("seed must fit in 64 unsigned bits")
        if self.family == "uniform" and not self.a < self.b:
            raise ValidationError(f"uniform needs a < b, got [{self.a}, {self.b}]")
        if self.family == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"bernoulli p must be in [0, 1], got {self.p}")
        if self.family == "discrete":
            if len(self.values) != len(self.probs) or not self.values:
                raise ValidationError("discrete needs matching values/probs")
            if abs(sum(self.probs) - 1.0) > 1e-12:
                raise ValidationError("discrete probs must sum to 1 within 1e-12")
            if any(q < 0 for q in self.probs):
                raise ValidationError("discrete probs must be nonnegative")

    def support(self):
        if self.family == "uniform":
            return (self.a, self.b)
        if self.family == "bernoulli":
            return (0.0, 1.0)
        return (min(self.values), max(self.values))

    @property
    def absolutely_continuous(self):
        return self.family == "uniform"

    def density(self, v):
        """Probability density (uniform family only)."""
        if not self.absolutely_continuous:
            raise ValidationError(f"{self.family} has no density")
        v = np.asarray(v, dtype=float)
        return np.where((v >= self.a) & (v <= self.b), 1.0 / (self.b - self.a), 0.0)

    @property
    def density_sup(self):
        if not self.absolutely_continuous:
            raise ValidationError(f"{self.family} has no density")
        return 1.0 / (self.b - self.a)


@dataclass(frozen=True)
class PotentialSample:
    """One per-vertex draw of the couplings; reproducible from
    (spec.seed, realization_index)."""

    values: np.ndarray
    realization_index: int
    spec: DisorderSpec


def _stream(seed, realization_index):
    key = np.array([int(seed) & MASK64, int(realization_index) & MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_potential(spec, topology, realization_index=0):
    """Draw one i.i.d. potential realization for a topology.

    The stream is keyed by (master seed, realization index), so draws are
    bit-exactly reproducible and independent across realizations; on
    delone topologies the values are zeroed off the active-site mask.
    """
    rng = _stream(spec.seed, realization_index)
    n = topology.vertex_count
    if spec.family == "uniform":
        vals = rng.uniform(spec.a, spec.b, n)
    elif spec.family == "bernoulli":
        vals = (rng.random(n) < spec.p).astype(float)
    else:
        idx = rng.choice(len(spec.values), size=n, p=np.array(spec.probs))
        vals = np.array(spec.values, dtype=float)[idx]
    if topology.mask is not None:
        vals = np.where(topology.mask, vals, 0.0)
    vals.flags.writeable = False
    return PotentialSample(vals, int(realization_index), spec)


@dataclass
class HamiltonianMatrix:
    """Finite symmetric real Hamiltonian in sparse form.

    `sites` maps matrix rows back to topology vertex ids (identity for a
    full-volume matrix, the sorted region for a restriction).
    """

    topology: object
    convention: str
    matrix: sp.csr_matrix
    sites: np.ndarray
    lam: float

    @property
    def dim(self):
        return self.matrix.shape[0]

    def row_of(self, vertex):
        """Matrix row of a topology vertex id."""
        i = int(np.searchsorted(self.sites, int(vertex)))
        if i >= len(self.sites) or self.sites[i] != int(vertex):
            raise ValidationError(f"vertex {vertex} is not in this restriction")
        return i

    def to_dense(self):
        return self.matrix.toarray()

    def offdiag_sign(self):
        return 1.0 if self.convention == "adjacency" else -1.0


def assemble_hamiltonian(topology, potential, lam, convention="adjacency"):
    """H = A + lam*V (adjacency) or deg - A + lam*V (laplacian)."""
    if convention not in ("adjacency", "laplacian"):
        raise ValidationError(f"unknown convention {convention!r}")
    vals = np.asarray(potential.values if isinstance(potential, PotentialSample)
                      else potential, dtype=float)
    n = topology.vertex_count
    if vals.shape != (n,):
        raise ValidationError(
            f"potential has {vals.shape} entries for {n} vertices")
    A = topology.adjacency_matrix()
    if convention == "adjacency":
        H = A + sp.diags(lam * vals)
    else:
        H = -A + sp.diags(topology.degrees() + lam * vals)
    return HamiltonianMatrix(topology, convention, H.tocsr(), np.arange(n), float(lam))


def restrict(H, region):
    """Principal submatrix on a region, densely reindexed; the original
    vertex ids are retained in `sites`."""
    members = resolve_region(H.topology, region)
    rows = np.array([H.row_of(v) for v in members])
    sub = H.matrix[np.ix_(rows, rows)]
    return HamiltonianMatrix(H.topology, H.convention, sp.csr_matrix(sub),
                             members, H.lam)


def boundary_operator(H, region):
    """Boundary operator: the cut-edge entries of H, both orientations.

    Entries are +1 in the adjacency convention and -1 in the laplacian
    convention, matching the off-diagonal sign of H, so that
    H = H_region (+) H_complement + boundary holds entrywise exactly.
    """
    if len(H.sites) != H.topology.vertex_count:
        raise ValidationError("boundary_operator expects a full-volume H")
    bsets = boundary_sets(H.topology, region)
    n = H.dim
    sign = H.offdiag_sign()
    rows, cols, data = [], [], []
    for u, v in bsets.edge_boundary:
        rows.extend([u, v])
        cols.extend([v, u])
        data.extend([sign, sign])
    ups = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return ups


def direct_sum(H, region):
    """H_region (+) H_complement embedded in the full index space."""
    members = resolve_region(H.topology, region)
    inside = np.zeros(H.dim, dtype=bool)
    inside[members] = True
    coo = H.matrix.tocoo()
    keep = inside[coo.row] == inside[coo.col]
    return sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])),
                         shape=H.matrix.shape)


def decomposition_residual(H, region):
    """Max-abs entry of H - (H_region (+) H_complement) - boundary; zero in
    exact arithmetic for every proper region."""
    delta = H.matrix - direct_sum(H, region) - boundary_operator(H, region)
    return 0.0 if delta.nnz == 0 else float(np.abs(delta.data).max())


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues with an orthonormal eigenvector column set."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def residual(self, H):
        Hd = H.to_dense() if isinstance(H, HamiltonianMatrix) else np.asarray(H)
        R = Hd @ self.eigenvectors - self.eigenvectors * self.eigenvalues
        return float(np.linalg.norm(R, axis=0).max())

    def orthonormality_defect(self):
        G = self.eigenvectors.T @ self.eigenvectors
        return float(np.abs(G - np.eye(G.shape[0])).max())


def eigendecompose(H, dense_cap=DENSE_EIG_CAP):
    """Full dense eigendecomposition (ascending eigenvalues).

    Dimensions above `dense_cap` are refused; use `extreme_eigenvalues`
    for the iterative extreme-pair mode on large volumes.
    """
    if H.dim > dense_cap:
        raise BudgetExceededError(
            f"dimension {H.dim} exceeds the dense cap {dense_cap}; "
            "use extreme_eigenvalues (iterative mode) instead")
    evals, evecs = scipy.linalg.eigh(H.to_dense())
    return SpectralDecomposition(evals, evecs)


def extreme_eigenvalues(H, dense_cap=512):
    """(min, max) eigenvalue; iterative Lanczos above `dense_cap`."""
    if H.dim <= dense_cap:
        evals = scipy.linalg.eigvalsh(H.to_dense())
        return float(evals[0]), float(evals[-1])
    M = H.matrix.astype(float)
    lo = eigsh(M, k=1, which="SA", return_eigenvectors=False, tol=0)[0]
    hi = eigsh(M, k=1, which="LA", return_eigenvectors=False, tol=0)[0]
    return float(lo), float(hi)


@dataclass(frozen=True)
class SpectrumHull:
    """Empirical ensemble extremes against the infinite-volume hull."""

    empirical_min: float
    empirical_max: float
    theory_min: float
    theory_max: float
    per_realization: tuple


def free_spectrum_bounds(topology):
    """Infinite-volume adjacency spectrum endpoints for the topology family."""
    if topology.kind in ("lattice", "delone"):
        d = len(topology.params["sides"])
        return -2.0 * d, 2.0 * d
    K = topology.params["branching"]
    return -2.0 * np.sqrt(K), 2.0 * np.sqrt(K)


def spectrum_hull(spec, topology, n_realizations):
    """Ensemble extremes of H = A + lam*V versus sigma(A) + lam*supp(mu)."""
    if n_realizations < 1:
        raise ValidationError("need at least one realization")
    extremes = []
    for r in range(n_realizations):
        pot = sample_potential(spec, topology, r)
        H = assemble_hamiltonian(topology, pot, spec.lam, "adjacency")
        extremes.append(extreme_eigenvalues(H))
    lo_free, hi_free = free_spectrum_bounds(topology)
    a, b = spec.support()
    return SpectrumHull(
        empirical_min=min(e[0] for e in extremes),
        empirical_max=max(e[1] for e in extremes),
        theory_min=lo_free + spec.lam * a,
        theory_max=hi_free + spec.lam * b,
        per_realization=tuple(extremes),
    )


def translation_covariance_check(spec, topology, gamma, realization_index=0,
                                 convention="adjacency"):
    """Max-abs residual of the covariance identity on a periodic lattice:
    conjugating H by the translation gamma equals assembling H from the
    translated potential.  Exactly zero (permutation similarity)."""
    if topology.kind != "lattice" or topology.params["boundary"] != "periodic":
        raise ValidationError(
            "translation covariance requires a periodic lattice "
            "(open boundary breaks covariance at the edge)")
    sides = np.array(topology.params["sides"])
    gamma = np.asarray(gamma, dtype=np.int64) % sides
    perm = np.empty(topology.vertex_count, dtype=np.int64)
    for v in range(topology.vertex_count):
        perm[v] = topology.vertex_at((topology.coords[v] + gamma) % sides)
    pot = sample_potential(spec, topology, realization_index)
    H1 = assemble_hamiltonian(topology, pot, spec.lam, convention).to_dense()
    shifted = pot.values[perm]
    H2 = assemble_hamiltonian(topology, shifted, spec.lam, convention).to_dense()
    conj = H1[np.ix_(perm, perm)]
    return float(np.abs(conj - H2).max())


@dataclass(frozen=True)
class IdsEstimate:
    grid: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_realizations: int


def ids_estimate(spec, topology, energy_grid, n_realizations,
                 convention="adjacency", dense_cap=DENSE_EIG_CAP):
    """Empirical integrated density of states N(E) over an energy grid."""
    grid = np.asarray(energy_grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValidationError("energy grid must be sorted")
    if topology.vertex_count > dense_cap:
        raise BudgetExceededError("ids_estimate needs a dense-solvable volume")
    counts = np.empty((n_realizations, grid.size))
    for r in range(n_realizations):
        pot = sample_potential(spec, topology, r)
        H = assemble_hamiltonian(topology, pot, spec.lam, convention)
        evals = scipy.linalg.eigvalsh(H.to_dense())
        counts[r] = np.searchsorted(evals, grid, side="right") / topology.vertex_count
    mean = counts.mean(axis=0)
    if n_realizations > 1:
        stderr = counts.std(axis=0, ddof=1) / np.sqrt(n_realizations)
    else:
        stderr = np.zeros_like(mean)
    return IdsEstimate(grid, mean, stderr, n_realizations)


def weyl_residual(topology, E):
    """||(A - E) phi|| / ||phi|| for the truncated plane wave with
    A phi = E phi in the bulk (V = 0, adjacency convention).

    In d dimensions the wave is the product e^{i theta x_j} along each
    axis with theta = arccos(E / (2d)); |E| > 2d has no real momentum and
    is rejected.  The residual is pure boundary defect and shrinks like
    n^(-1/2).
    """
    if topology.kind != "lattice":
        raise ValidationError("weyl_residual is defined for lattice topologies")
    d = len(topology.params["sides"])
    if abs(E) > 2 * d:
        raise ValidationError(f"|E| = {abs(E)} > 2d = {2*d}: no real momentum")
    theta = np.arccos(E / (2.0 * d))
    phase = topology.coords.sum(axis=1) * theta
    phi = np.exp(1j * phase)
    A = topology.adjacency_matrix()
    r = A @ phi - E * phi
    return float(np.linalg.norm(r) / np.linalg.norm(phi))


def matrix_to_json(H):
    """Metadata + COO triplets with 17 significant digits (bit-faithful)."""
    coo = H.matrix.tocoo()
    doc = {
        "schema": "andlab.matrix.v1",
        "convention": H.convention,
        "lam": repr(float(H.lam)),
        "dim": H.dim,
        "sites": H.sites.tolist(),
        "rows": coo.row.tolist(),
        "cols": coo.col.tolist(),
        "data": [f"{v:.17g}" for v in coo.data],
    }
    return json.dumps(doc, sort_keys=True)


def matrix_from_json(text, topology):
    doc = json.loads(text)
    data = np.array([float(s) for s in doc["data"]])
    M = sp.csr_matrix((data, (doc["rows"], doc["cols"])),
                      shape=(doc["dim"], doc["dim"]))
    return HamiltonianMatrix(topology, doc["convention"], M,
                             np.array(doc["sites"]), float(doc["lam"]))
