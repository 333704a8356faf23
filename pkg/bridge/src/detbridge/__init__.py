"""Wire-protocol v1 server exposing torch object detectors to black-box
attribution clients."""

from .config import BridgeConfig
from .conformance import ConformanceReport, conformance_suite
from .models import TinyBlobDetector, TinyBlobNet, load_model
from .server import BridgeServer

__version__ = "0.1.0"
