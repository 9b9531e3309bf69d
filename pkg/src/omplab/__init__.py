"""Implicit data sharing for OpenMP-style offloading, modelled end to end.

Pipeline: ``frontend`` parses ``.ompk`` sources and lowers them to the
mini IR, ``codegen`` outlines parallel regions and builds the master/worker
kernel, ``lowering`` places shared locals in the shared-memory depot,
``simulator`` executes the result with ``runtime`` semantics, and
``occupancy`` turns depot manifests into per-SM concurrency.
"""

__version__ = "0.1.0"
