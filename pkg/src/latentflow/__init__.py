"""latentflow: latent-dynamics surrogate of a two-phase reservoir proxy
plus soft actor-critic well-control optimization."""

__version__ = "0.1.0"
