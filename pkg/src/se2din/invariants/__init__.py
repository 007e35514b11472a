"""Moving-frame invariants of SE(2): point level and image level."""
from .image import (
    DEFAULT_THIRD_ORDER,
    InvariantFeatures,
    default_eps,
    directional_derivatives,
    feature_count,
    invariant_derivative,
    invariant_features,
    regularized_invariant_maps,
    regularized_invariants,
    third_order_features,
)
from .point import (
    DegenerateFrameError,
    GroupElement,
    JetPoint,
    closed_form_invariants,
    invariance_oracle,
    invariantize_jet,
    moving_frame,
    printed_table_I20,
    prolonged_action,
    random_jet_points,
    regularized_point_invariants,
    third_order_point_features,
)

__all__ = [
    "DEFAULT_THIRD_ORDER",
    "DegenerateFrameError",
    "GroupElement",
    "InvariantFeatures",
    "JetPoint",
    "closed_form_invariants",
    "default_eps",
    "directional_derivatives",
    "feature_count",
    "invariance_oracle",
    "invariant_derivative",
    "invariant_features",
    "invariantize_jet",
    "moving_frame",
    "printed_table_I20",
    "prolonged_action",
    "random_jet_points",
    "regularized_invariant_maps",
    "regularized_invariants",
    "regularized_point_invariants",
    "third_order_features",
    "third_order_point_features",
]
