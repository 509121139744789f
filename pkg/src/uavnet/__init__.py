"""UAV network-measurement toolkit.

Flight-log ingest and validation, handover detection and classification,
spatial/temporal link statistics, live end-to-end probing, a synthetic
flight + propagation oracle, and 3D signal prediction.
"""

from .model import (
    CellObservation,
    E2EMetrics,
    FlightDataset,
    FlightState,
    GeoPosition,
    LinkType,
    Sample,
    ValidationReport,
    local_projection,
    validate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "CellObservation",
    "E2EMetrics",
    "FlightDataset",
    "FlightState",
    "GeoPosition",
    "LinkType",
    "Sample",
    "ValidationReport",
    "local_projection",
    "validate_dataset",
    "__version__",
]
