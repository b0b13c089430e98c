"""Distributed coverage-guided fuzzing with centralized dynamic task scheduling.

A scheduler dispatches (seed, energy) tasks to worker nodes on request, a
networked seed store synchronizes seeds and fuzzing status, and workers
switch between fuzzing and evaluating roles to absorb deduplication load.
"""

__version__ = "0.1.0"
