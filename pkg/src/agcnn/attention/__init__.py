from agcnn.attention.groundtruth import (
    AttentionMap,
    ConsistencyRow,
    FixationLog,
    accumulate_fixations,
    cleared_fraction,
    observer_consistency,
    pearson_cc,
    proportion_above,
    proportion_curve,
    render_attention,
    square_decay,
)

__all__ = [
    "AttentionMap",
    "ConsistencyRow",
    "FixationLog",
    "accumulate_fixations",
    "cleared_fraction",
    "observer_consistency",
    "pearson_cc",
    "proportion_above",
    "proportion_curve",
    "render_attention",
    "square_decay",
]
