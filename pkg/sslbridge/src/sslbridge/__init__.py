"""Export frame-level features from a pretrained speech encoder to SPWF files."""

from .bridge import (
    BridgeConfig,
    BridgeError,
    ExportSummary,
    export_features,
)

__all__ = ["BridgeConfig", "BridgeError", "ExportSummary", "export_features"]
