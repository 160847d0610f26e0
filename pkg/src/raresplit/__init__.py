"""Rare-event statistical model checking with importance splitting observers."""
__version__ = "0.1.0"
