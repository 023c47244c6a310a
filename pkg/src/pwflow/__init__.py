"""Piecewise-affine flows of zero-sum games: best-response dynamics,
Hamiltonian level-set flows, return maps and the random-walk model map."""
__version__ = "0.1.0"
