"""Bidirectional acoustic path tracing."""

from .direct import BLOCKED, DIFFRACTED, TRANSMITTED, VISIBLE, DirectSound, compute_direct, knife_edge_loss_db
from .early import EarlyReflection, cluster_early_reflections
from .engine import (PathCache, PathRecords, SourcePaths, auto_receiver_radius, batch_size, default_path_cache,
                     path_energy, simulate, trace_listener_paths, trace_source_paths)
from .histogram import EnergyHistogram, accumulate, bin_index

__all__ = [
    "BLOCKED", "DIFFRACTED", "TRANSMITTED", "VISIBLE", "DirectSound", "compute_direct", "knife_edge_loss_db",
    "EarlyReflection", "cluster_early_reflections", "PathCache", "PathRecords", "SourcePaths",
    "auto_receiver_radius", "batch_size", "default_path_cache", "path_energy", "simulate",
    "trace_listener_paths", "trace_source_paths", "EnergyHistogram", "accumulate", "bin_index",
]
