"""Link-level simulator for two-relay concurrent decode-and-forward networks."""

__version__ = "0.1.0"

from .channel import ChannelRealization, draw_noise, draw_realization  # noqa: E402
from .schedule import Protocol, ProtocolSpec, SpMode, build_equivalent_channel  # noqa: E402
from .outage import is_outage, mutual_info_subset, outage_probability, rate_from_multiplexing  # noqa: E402
from .sim import ResultCurve, SimConfig, merge, run  # noqa: E402

__all__ = [
    "ChannelRealization",
    "draw_noise",
    "draw_realization",
    "Protocol",
    "ProtocolSpec",
    "SpMode",
    "build_equivalent_channel",
    "is_outage",
    "mutual_info_subset",
    "outage_probability",
    "rate_from_multiplexing",
    "ResultCurve",
    "SimConfig",
    "merge",
    "run",
]
