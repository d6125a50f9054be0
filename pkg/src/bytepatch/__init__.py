"""bytepatch: convert a small subword LM into a byte-level model with learned
patch boundaries, train it by two-stage distillation, and post-train it by
checkpoint arithmetic."""

__version__ = "0.1.0"
