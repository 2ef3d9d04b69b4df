"""Stability analysis for constant-coefficient linear evolution systems ``u_t = P(d/dx) u``."""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .symbol import (MultiIndex, OperatorSpec, apply_operator_modes, eval_symbol,  # noqa: E402
                     multi_indices, symbol_derivative)
from .matfun import (ContourSpec, InterpPoly, NodeSet, PropagatorDecomposition,  # noqa: E402
                     eval_poly_at_matrix, exp_reference, exp_scaled, gelfand_shilov_bound,
                     newton_interp_exp, power_coeffs_contour, propagator_decomposition)
from .stability import (GardingFit, GrowthBoundReport, SpectrumSample, StabilityReport,  # noqa: E402
                        estimate_stability_index, garding_fit, log_growth_test, spectral_abscissa,
                        verify_derivative_growth_bound, verify_growth_bound)
from .semigroup import (Grid, GridState, PlaneWave, PropagatorTable, build_propagator,  # noqa: E402
                        check_loss_of_derivatives, estimate_omega_E, evolve, generator_apply,
                        make_grid, plane_wave_exact, sobolev_norm)
from .weighted import EKCertificate, ek_certificate, verify_ek_decay, weighted_seminorm  # noqa: E402
