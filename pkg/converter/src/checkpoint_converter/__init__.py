"""Checkpoint importer for the streamtag engine's SATW weight format."""

from .convert import ConversionError, compare_satw, convert, crosscheck, load_checkpoint
from .name_map import MapEntry, NameMap, default_map

__version__ = "0.1.0"

__all__ = [
    "ConversionError", "MapEntry", "NameMap", "compare_satw", "convert",
    "crosscheck", "default_map", "load_checkpoint",
]
