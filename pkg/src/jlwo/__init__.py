"""Joint chunk placement, request scheduling and bandwidth weighting for
erasure-coded storage in multi-tenant data centers.

The latency model, the alternating optimizer and the queueing simulator are
importable from here; ``python -m jlwo`` runs the command-line harness.
"""
import sys

from .distributions import ServiceDistribution
from .errors import (BadMarginals, HorizonTooShort, InfeasibleInitialization, InvalidDesign,
                     JLWOError, NegativeResidualBandwidth, NoFeasibleSchedule, NoFeasibleWeights,
                     NoPerfectMatching, ParseError, PortCapacityExceeded, SchemaError,
                     UnstableQueue)
from .hungarian import hungarian_assign
from .latency import (LatencyModel, LatencyReport, bound_f, class_mean_latency,
                      combined_delay_moments, file_latency_bound, latency_report, minimize_z,
                      objective)
from .model import (BandwidthWeights, ClusterTopology, DesignPoint, ErasureCode, FileSpec,
                    IntraResidualMode, PlacementAndSchedule, ServiceClassSet, WorkloadSpec,
                    aggregate_arrival, effective_bandwidth_inter, effective_bandwidth_intra,
                    validate_design)
from .optimizer import (OptConfig, OptTrace, initial_design, jlwo_run, placement_edge_weights,
                        solve_inter_weights, solve_intra_weights, solve_placement,
                        solve_scheduling)
from .projection import project_capped_simplex
from .sampling import sample_k_subset
from .simulator import BoundValidation, SimConfig, SimResult, simulate, validate_bound

__all__ = [name for name, value in globals().items()
           if not name.startswith("_") and not isinstance(value, type(sys))]
