"""Budget- and delay-constrained QoE allocation for synchronized multi-user video."""

__version__ = "0.1.0"

from .allocator import (  # noqa: E402
    Allocation,
    SessionConfig,
    UserState,
    allocate,
    allocate_moderate,
    allocate_severe,
    discretize,
    feasibility_report,
    max_qoe_scheme,
    min_delay_scheme,
    total_qoe,
)
from .channel import ChannelConstants  # noqa: E402
from .qoe import QoEModel  # noqa: E402
