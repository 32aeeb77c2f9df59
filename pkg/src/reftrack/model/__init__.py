"""Model subpackage: fusion frontend, query decoder, temporal memory."""

from reftrack.model.frontend import (
    CrossModalFrontend,
    CrossModalFusion,
    TextEncoder,
    VisualBackbone,
    Vocabulary,
)
from reftrack.model.network import (
    FramePass,
    TrackingModel,
    TrackingSession,
    TrackSlot,
    propagate_track_queries,
    run_video,
)
from reftrack.model.temporal import QueryMemory, TemporalModule

__all__ = [
    "CrossModalFrontend",
    "CrossModalFusion",
    "FramePass",
    "QueryMemory",
    "TemporalModule",
    "TextEncoder",
    "TrackingModel",
    "TrackingSession",
    "TrackSlot",
    "VisualBackbone",
    "Vocabulary",
    "propagate_track_queries",
    "run_video",
]
