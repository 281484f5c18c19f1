"""camnet: a desk-scale network camera platform.

Discover cameras by HTTP signature probing, keep them in a geospatial
registry, ingest snapshot and MJPEG streams, run per-frame analysis jobs
through an event-driven runtime, and plan compute allocation with
cost-ratio instance selection and multi-dimensional bin packing.
"""

__version__ = "0.1.0"


class CamnetError(Exception):
    """Base class for all camnet errors."""
