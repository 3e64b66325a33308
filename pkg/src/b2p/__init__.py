"""Respiration-based pairing for wearable devices.

Two devices with different respiration sensors derive one shared key from
correlated breathing signals: preprocess, synchronize on change points,
quantize, and reconcile mismatches with a BCH-based fuzzy commitment.
"""

from b2p.errors import (
    B2PError,
    DegenerateInputError,
    FormatError,
    ParameterError,
    WindowUnderflowError,
)

__version__ = "0.1.0"

__all__ = [
    "B2PError",
    "DegenerateInputError",
    "FormatError",
    "ParameterError",
    "WindowUnderflowError",
]
