"""dexlet: a typed array language with effects, simplification and reverse-mode AD."""

__version__ = "0.1.0"
