"""HTTP reader service wrapping a fusion-style seq2seq model."""

from .fusion import FusionReader, ShimConfig
from .service import ShimServer, create_server, serve

__version__ = "0.1.0"
