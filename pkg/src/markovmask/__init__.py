"""Exact expectations of transition events on reducible Markov chains.

A mask ``M`` weighs each transition ``j -> i`` of a column-stochastic chain
``T``. The expected total weight collected before absorption is
``tr(M D T^*)`` with ``D`` the expected transient occupancy, so one
factorization of ``I - A_T`` serves any number of masks.
"""

from . import errors
from .chain import (CanonicalBlocks, DistributionVector, StateClass,
                    StateClassification, StochasticChain, canonical_blocks,
                    classify_states, kron_compose, kron_distribution,
                    make_distribution, point_mass, validate_chain)
from .chutes import BoardSpec, ChutesModel, build_chutes_chain, standard_board
from .diagnostics import (ConditionReport, PerturbationReport, StabilityReport,
                          condition_bounds, empirical_perturbation_check,
                          inverse_norm_2, stability_bounds)
from .engine import (CesaroProjector, ExpectationResult, SetupCache,
                     cesaro_projector, expect, expect_many, fundamental_matrix,
                     q_minus, setup, time_average_expect, truncated_series_oracle)
from .io import (parse_chain, parse_distribution, parse_mask, serialize_chain,
                 serialize_distribution, serialize_mask, write_chain)
from .masks import (Mask, linear_combination, mask_absorption_probability,
                    mask_arrivals, mask_departures, mask_distance, mask_explicit,
                    mask_lead_changes_2p, mask_lead_changes_p,
                    mask_steady_state_loop, mask_steps_to_absorption,
                    mask_transition_set)
from .montecarlo import (SimulationEstimate, estimate_cumulative,
                         estimate_cumulative_batch, estimate_time_average,
                         estimate_time_average_batch, sample_path)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
