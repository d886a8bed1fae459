"""Numerical laboratory for random Schrodinger operators on discrete
graphs: finite-volume Hamiltonians, resolvent identities, localization
diagnostics, and time-evolution observables."""

__version__ = "0.1.0"

from .errors import (AndlabError, BudgetExceededError, DivergenceError,
                     NumericalError, SingularEnergyError, ValidationError)
from .topology import (BoundarySets, BoxRegion, GraphTopology, boundary_sets,
                       build_bethe, build_delone, build_lattice,
                       graph_distance, topology_from_json, topology_to_json)
from .operators import (DisorderSpec, HamiltonianMatrix, PotentialSample,
                        SpectralDecomposition, assemble_hamiltonian,
                        boundary_operator, decomposition_residual,
                        eigendecompose, extreme_eigenvalues, ids_estimate,
                        restrict, sample_potential, spectrum_hull,
                        translation_covariance_check, weyl_residual)
from .green import (combes_thomas_check, green_column, green_entry,
                    krein_rank2_check, boundary_formula_check,
                    population_dynamics, saw_expansion, saw_walks,
                    simon_wolff_sum, tree_green_recursive)
from .criteria import (DiagnosticEstimate, FractionalMomentParams,
                       GoodBoxParams, MsaParams, apriori_constant,
                       apriori_integral, decay_rate_fit, decoupling_check,
                       fractional_moment, fractional_moment_profile,
                       good_box_probability, msa_scale_run, msa_schedule,
                       wegner_between_boxes, wegner_estimate)
from .dynamics import (EnergyWindow, correlator_row, diffusion_sum, dl_kernel,
                       eigenfunction_profile, evolve, ipr, transport_moment)
