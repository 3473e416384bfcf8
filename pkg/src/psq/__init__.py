"""Phase-space quantization with covariant POVMs in a truncated Fock basis."""

__version__ = "0.1.0"
