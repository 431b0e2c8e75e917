"""Offline model converter for the vcnn inference engine.

Reads a TorchScript graph (SqueezeNet v1.0 or any plain chain of the
supported operators), extracts hyperparameters and weights, applies the
offline kernel reordering, and writes the engine's binary model format.
The engine is consumed only through its documented file formats; this
package never imports it.
"""

from .convert import ConversionError, UnsupportedOperatorError, convert, verify_manifest
from .extract import extract_network
from .vectors import emit_test_vectors

__all__ = [
    "ConversionError",
    "UnsupportedOperatorError",
    "convert",
    "verify_manifest",
    "extract_network",
    "emit_test_vectors",
]
