"""Post-training quantization of LLaMA-style blocks for integer-only execution."""

__version__ = "0.1.0"
