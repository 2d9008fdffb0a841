"""refil: split inference with measured and enforced Fisher information leakage."""

__version__ = "1.0.0"
