"""Reference service exposing chat, similarity, and segmentation models
behind the engine's /v1 wire protocol.

The adapter is deliberately isolated: it shares no code with the engine
and meets it only at the HTTP/JSON surface. Stub models ship with the
package so the protocol contract can be exercised without any weights;
real models plug in behind the same three-method interfaces.
"""

from .config import AdapterConfig
from .service import create_app

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "create_app", "__version__"]
