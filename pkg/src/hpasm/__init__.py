"""High-order triangular elasticity with a p-, h- and lambda-uniform additive Schwarz preconditioner."""

__version__ = "0.1.0"
