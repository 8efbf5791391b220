"""Per-event optical flow for event cameras.

The estimation pipeline: condition the stream (refractory + adaptive
activity filter), fit the local spatio-temporal plane of each accepted
event by eigen-decomposition of its neighborhood covariance, gate the fit
by planarity and trigger-time consensus, and read flow and lifetime off the
plane normal. Optional regularizers fuse estimates over time (weighted) or
over window sizes (leveled). Local plane fitting and event-count
Lucas-Kanade are included as baselines, together with a synthetic
ground-truth simulator and an evaluation/benchmark harness.
"""

from .baselines import (EventHistory, EventLkConfig, LocalPlaneConfig,
                        LocalPlaneFlow, LucasKanadeFlow, lucas_kanade_flow,
                        plane_fit_flow)
from .errors import ConfigError, DataError, EvflowError, NumericError
from .events import (EVENT_DTYPE, FLOW_DTYPE, GT_DTYPE, ActiveFlowBuffer,
                     ActiveSurface, Event, FlowEvent, SensorGeometry,
                     events_from_arrays, events_view, surface_neighborhood,
                     surface_update, validate_events)
from .filtering import (AdaptiveConfig, EventStreamFilter, RefractoryConfig,
                        activity_pass, adaptive_support_time, filter_stream,
                        refractory_pass)
from .metrics import (AngularError, EndpointError, FlowErrorStats,
                      LifetimeHistogram, TimingStats, benchmark, compute_aae,
                      compute_aepe, flow_error_stats, lifetime_histogram,
                      match_flow_to_truth)
from .pca import (PcaConfig, PcaFlow, PlaneFit, consensus_check, covariance,
                  estimate_event, fit_plane, flow_from_normal,
                  lifetime_from_normal, plane_time_residuals,
                  smallest_eigenvector)
from .regularize import (LeveledConfig, WeightedConfig, leveled_regularize,
                         weight_values, weighted_regularize)
from .simulate import (GradedStripes, RotatingBar, SceneSpec, TranslatingEdge,
                       VerticalStripes, generate, two_speed_stripes)

__version__ = "0.1.0"

__all__ = [
    "ActiveFlowBuffer", "ActiveSurface", "AdaptiveConfig", "AngularError",
    "ConfigError", "DataError", "EVENT_DTYPE", "EndpointError", "Event",
    "EventHistory", "EventLkConfig", "EventStreamFilter", "EvflowError",
    "FLOW_DTYPE", "FlowErrorStats", "FlowEvent", "GT_DTYPE",
    "GradedStripes", "LeveledConfig", "LifetimeHistogram", "LocalPlaneConfig",
    "LocalPlaneFlow", "LucasKanadeFlow", "NumericError", "PcaConfig",
    "PcaFlow", "PlaneFit", "RefractoryConfig", "RotatingBar", "SceneSpec",
    "SensorGeometry", "TimingStats", "TranslatingEdge", "VerticalStripes",
    "WeightedConfig", "activity_pass", "adaptive_support_time", "benchmark",
    "compute_aae", "compute_aepe", "consensus_check", "covariance",
    "estimate_event", "events_from_arrays", "events_view", "filter_stream",
    "fit_plane", "flow_error_stats", "flow_from_normal", "generate",
    "leveled_regularize", "lifetime_from_normal", "lifetime_histogram",
    "match_flow_to_truth", "plane_fit_flow", "plane_time_residuals",
    "refractory_pass", "smallest_eigenvector", "surface_neighborhood",
    "surface_update", "two_speed_stripes", "validate_events",
    "weight_values", "weighted_regularize",
]
