"""WESAD archive to per-subject wrist-BVP CSV converter."""

from wesad_converter.convert import (
    ArchiveFormatError,
    ConverterError,
    ConverterReport,
    MissingChannelError,
    align_labels,
    convert_subject,
    discover_archives,
)

__version__ = "0.1.0"

__all__ = [
    "ArchiveFormatError",
    "ConverterError",
    "ConverterReport",
    "MissingChannelError",
    "align_labels",
    "convert_subject",
    "discover_archives",
    "__version__",
]
