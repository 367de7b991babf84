"""Stroke decomposition and reinforcement-learned refinement of calligraphy glyphs."""
__version__ = "0.1.0"
