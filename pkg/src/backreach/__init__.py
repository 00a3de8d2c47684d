"""Backward reachability safety certification for neural feedback loops."""

__version__ = "0.1.0"
