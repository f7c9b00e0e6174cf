"""Self-similar implosion profiles with swirl: computation and verification."""

__version__ = "0.1.0"
