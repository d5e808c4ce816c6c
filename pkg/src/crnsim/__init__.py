"""Seeded simulator of learning-automata channel selection in cognitive radio networks."""

__version__ = "0.1.0"
