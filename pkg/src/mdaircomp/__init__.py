"""Digital over-the-air aggregation for federated edge learning.

Devices vector-quantize their model updates, send the codeword indices as
shared non-orthogonal sequences over a fading multiple-access channel, and
the base station recovers how often each codeword was used with AMP-DA.
"""

from . import channel, detector, feel, harness, metrics, modcodebook, quantizer, seeding
from .cli import run_cli

__version__ = "0.1.0"

__all__ = ["channel", "detector", "feel", "harness", "metrics", "modcodebook", "quantizer",
           "seeding", "run_cli"]
