"""Ethernet model: daisy-chain topology, strict-priority egress ports, Qbv gates, background load.

The egress-port kernel is compiled with Cython when available; set
``ROBOTSYNC_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

import os

if os.environ.get("ROBOTSYNC_PURE_PYTHON"):
    from ._portcore_py import PortCore, wire_time

    KERNEL = "python"
else:
    try:
        from ._portcore import PortCore, wire_time

        KERNEL = "cython"
    except ImportError:  # extension not built
        from ._portcore_py import PortCore, wire_time

        KERNEL = "python"

from .gates import GateControlList, GateEntry
from .network import EgressPort, Frame, Hop, Link, Network, Topology, daisy_chain
from .traffic import TrafficGenerator, run_generator

__all__ = [
    "KERNEL", "PortCore", "wire_time", "GateControlList", "GateEntry", "EgressPort", "Frame",
    "Hop", "Link", "Network", "Topology", "daisy_chain", "TrafficGenerator", "run_generator",
]
