"""Deterministic laboratory for classic distributed protocols.

Every protocol runs as a set of per-process state machines inside the seeded
discrete-event simulator in :mod:`protolab.simnet`.
"""

__version__ = "0.1.0"
