"""Block multitask NMT: one shared encoder, several subword-granularity decoders."""

__version__ = "0.1.0"
