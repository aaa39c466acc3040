"""Road-context-aware intrusion detection for CAN steering frames.

Stage 1 abstracts a camera image into a feature vector with a small CNN;
stage 2 classifies the (context, frame window) pair as normal or intrusion.
"""

from .codec import CanFrame, SignalSpec, STEERING_SIGNAL, pack_signal, parse_log_line, serialize_log_line, unpack_signal
from .config import RunConfig, load_config
from .errors import RaidsError

__all__ = ["CanFrame", "SignalSpec", "STEERING_SIGNAL", "pack_signal", "unpack_signal", "parse_log_line",
           "serialize_log_line", "RunConfig", "load_config", "RaidsError"]
__version__ = "0.1.0"
