"""Joint digital/analog transceiver design for metasurface-antenna downlinks."""

from . import channel, manifold, mimo, miso

__version__ = "0.1.0"

__all__ = ["channel", "manifold", "mimo", "miso", "__version__"]
