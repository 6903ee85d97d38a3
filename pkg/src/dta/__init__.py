"""Desk-scale emulation of an RDMA-backed telemetry collection stack.

Reporters encapsulate telemetry in a compact report protocol; a translator
converts reports into one-sided memory verbs against emulated collector
memory, and probabilistic data structures (redundant key-value slots,
chunked postcards, ring-buffer lists, keyed counters, merged sketches) make
the memory queryable without collector CPU involvement.  Closed-form
failure models and Monte-Carlo suites validate each other.
"""

__version__ = "0.1.0"
