"""Snapshot POD of wake fields and a partitioned FSI coupling kernel."""

from .fields import (FieldError, FieldSnapshot, PlaneSpec, SnapshotSet, StructuredGrid,
                     load_snapshot_set, save_snapshot_set)
from .pod import PodError, PodResult, SnapshotMatrix, assemble_snapshot_matrix, decompose

__version__ = "0.1.0"

__all__ = [
    "FieldError", "FieldSnapshot", "PlaneSpec", "SnapshotSet", "StructuredGrid",
    "load_snapshot_set", "save_snapshot_set",
    "PodError", "PodResult", "SnapshotMatrix", "assemble_snapshot_matrix", "decompose",
]
