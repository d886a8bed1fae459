"""Time-evolution observables: windowed evolution, the dynamical-
localization kernel and its eigenfunction-correlator envelope, transport
moments, eigenfunction decay profiles, and the inverse participation
ratio.

The unitary group is realized through a full SpectralDecomposition, so
everything here is exact up to the eigensolver residual.  The supremum
over all times in the localization bound is not computable; the kernel
op returns both a sampled max over a time grid and the correlator
Q(x, y) = sum over the window of |v_k(x)| |v_k(y)|, which dominates the
kernel at every time by the triangle inequality, so decay conclusions
can cite Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .criteria import decay_rate_fit
from .errors import ValidationError

__all__ = [
    "EnergyWindow",
    "EvolutionState",
    "evolve",
    "DlKernel",
    "dl_kernel",
    "correlator_row",
    "position_norms",
    "TransportSeries",
    "transport_moment",
    "diffusion_sum",
    "EigenfunctionProfile",
    "eigenfunction_profile",
    "ipr",
]


@dataclass(frozen=True)
class EnergyWindow:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValidationError("window needs lo <= hi")

    def selects(self, eigenvalues):
        return (eigenvalues >= self.lo) & (eigenvalues <= self.hi)

    @staticmethod
    def full(decomposition, pad=1.0):
        ev = decomposition.eigenvalues
        return EnergyWindow(float(ev[0]) - pad, float(ev[-1]) + pad)


@dataclass(frozen=True)
class EvolutionState:
    amplitudes: np.ndarray
    t: float
    empty_window: bool


def evolve(decomposition, window, initial, t):
    """exp(-itH) restricted to the energy window applied to a state."""
    sel = window.selects(decomposition.eigenvalues)
    initial = np.asarray(initial, dtype=complex)
    if not np.any(sel):
        return EvolutionState(np.zeros_like(initial), float(t), True)
    V = decomposition.eigenvectors[:, sel]
    phases = np.exp(-1j * float(t) * decomposition.eigenvalues[sel])
    amp = V @ (phases * (V.T @ initial))
    return EvolutionState(amp, float(t), False)


@dataclass(frozen=True)
class DlKernel:
    t_grid: np.ndarray
    sampled: np.ndarray
    sampled_max: float
    correlator: float


def dl_kernel(decomposition, window, x, y, t_grid):
    """|<delta_y, exp(-itH) chi_I delta_x>| sampled on a grid, together
    with the correlator bound Q(x, y); sampled values never exceed Q."""
    sel = window.selects(decomposition.eigenvalues)
    t_grid = np.asarray(t_grid, dtype=float)
    vx = decomposition.eigenvectors[int(x), sel]
    vy = decomposition.eigenvectors[int(y), sel]
    ev = decomposition.eigenvalues[sel]
    phases = np.exp(-1j * np.outer(t_grid, ev))
    sampled = np.abs(phases @ (vx * vy))
    q = float(np.sum(np.abs(vx) * np.abs(vy)))
    return DlKernel(t_grid, sampled, float(sampled.max(initial=0.0)), q)


def correlator_row(decomposition, window, x):
    """Q(x, y) for every y: the eigenfunction correlator over the window."""
    sel = window.selects(decomposition.eigenvalues)
    V = np.abs(decomposition.eigenvectors[:, sel])
    return V @ V[int(x)]


def position_norms(topology, origin):
    """Per-vertex position weight ||x||: sup-norm coordinate distance from
    the origin on lattices (wrapped when periodic), graph distance on
    trees."""
    if topology.kind == "bethe":
        return topology.bfs_distances(int(origin)).astype(float)
    c = topology.coords[int(origin)]
    diff = np.abs(topology.coords - c)
    if topology.kind == "lattice" and topology.params["boundary"] == "periodic":
        sides = np.array(topology.params["sides"])
        diff = np.minimum(diff, sides - diff)
    return diff.max(axis=1).astype(float)


def _light_cone_horizon(topology, support):
    """Time until a ballistic front (speed <= max degree) leaving the
    support could first feel the finite volume: distance to the nearest
    non-interior vertex on open graphs, half the shortest side on
    periodic lattices (self-interference through the wrap)."""
    speed = max(topology.max_degree, 1)
    if topology.kind == "lattice" and topology.params["boundary"] == "periodic":
        return min(topology.params["sides"]) / 2.0 / speed
    degrees = topology.degrees()
    edge_vertices = np.flatnonzero(degrees < degrees.max())
    if edge_vertices.size == 0:
        return float("inf")
    best = min(min(topology.bfs_distances(int(v))[edge_vertices])
               for v in support)
    return float(best) / speed


@dataclass(frozen=True)
class TransportSeries:
    t_grid: np.ndarray
    values: np.ndarray
    horizon: float
    beyond_horizon: np.ndarray


def transport_moment(decomposition, window, topology, initial, p, t_grid,
                     origin):
    """|| |X|^p exp(-itH) chi_I phi || over a time grid.

    |X| multiplies by the position weight relative to the origin.  The
    ballistic light cone travels at speed <= max degree, so times beyond
    (distance from the initial support to the farthest vertex) / degree
    are flagged as boundary-contaminated.
    """
    if p < 0:
        raise ValidationError("moment order p must be >= 0")
    initial = np.asarray(initial, dtype=complex)
    pos = position_norms(topology, origin)
    t_grid = np.asarray(t_grid, dtype=float)
    support = np.flatnonzero(np.abs(initial) > 0)
    if support.size == 0:
        raise ValidationError("initial state is zero")
    horizon = _light_cone_horizon(topology, support)
    vals = np.empty(t_grid.size)
    weight = pos ** (2.0 * p)
    for i, t in enumerate(t_grid):
        amp = evolve(decomposition, window, initial, t).amplitudes
        vals[i] = np.sqrt(np.sum(weight * np.abs(amp) ** 2))
    return TransportSeries(t_grid, vals, horizon, t_grid > horizon)


def diffusion_sum(decomposition, topology, t, origin):
    """Sum over x of ||x||^2 |<delta_x, exp(-itH) delta_origin>|^2; equal
    by definition to the squared p=1 transport moment over the full
    window."""
    n = decomposition.eigenvectors.shape[0]
    initial = np.zeros(n, dtype=complex)
    initial[int(origin)] = 1.0
    window = EnergyWindow.full(decomposition)
    amp = evolve(decomposition, window, initial, t).amplitudes
    pos = position_norms(topology, origin)
    return float(np.sum(pos ** 2 * np.abs(amp) ** 2))


@dataclass(frozen=True)
class EigenfunctionProfile:
    center: int
    rate: float
    r_squared: float
    max_amplitude: float


AMPLITUDE_FLOOR = 1e-14


def eigenfunction_profile(phi, topology):
    """Localization center (argmax |phi|, smallest index on ties) and the
    fitted exponential decay rate of |phi| against distance from it.

    Amplitudes below 1e-14 are excluded from the fit; if fewer than four
    points survive (a delta function, say) the rate is the -inf sentinel.
    """
    phi = np.asarray(phi)
    norm = np.linalg.norm(phi)
    if abs(norm - 1.0) > 1e-10:
        raise ValidationError("eigenfunction must be normalized")
    amps = np.abs(phi)
    center = int(np.argmax(amps))
    pos = position_norms(topology, center)
    keep = amps >= AMPLITUDE_FLOOR
    if keep.sum() < 4:
        return EigenfunctionProfile(center, float("-inf"), float("nan"),
                                    float(amps[center]))
    fit = decay_rate_fit(pos[keep], amps[keep])
    return EigenfunctionProfile(center, fit.rate, fit.r_squared,
                                float(amps[center]))


def ipr(phi):
    """Inverse participation ratio of a normalized state: 1/n for the
    flat state up to 1 for a single site."""
    phi = np.asarray(phi)
    if abs(np.linalg.norm(phi) - 1.0) > 1e-10:
        raise ValidationError("ipr expects a normalized state")
    return float(np.sum(np.abs(phi) ** 4))
