"""Forward and inverse resonance problems for compactly supported potentials."""

from artifact.potential import INF, AprioriParams, Potential

__all__ = ["INF", "AprioriParams", "Potential"]
__version__ = "0.1.0"
