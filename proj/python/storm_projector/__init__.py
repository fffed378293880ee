"""Selective-scan temporal projector, token compression and latency tools."""

from ._storm import (
    ConfigError,
    DirectionMode,
    IoError,
    ModeError,
    NumericError,
    ProjectorConfig,
    ProjectorWeights,
    ScanWeights,
    ShapeError,
    StormError,
    cli,
    compression_ratio,
    downsample,
    gradcheck,
    projector_forward,
    projector_stream,
    round_percent,
    scan,
    scan_backward,
    scan_check,
    sensitivity_matrix,
    spatial_pool,
    temporal_pool,
    temporal_sample,
    token_budget,
)

__all__ = [name for name in dir() if not name.startswith("_")]
