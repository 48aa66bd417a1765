"""Half-tube volumes and Steiner coefficients of surfaces in 3D contact sub-Riemannian manifolds."""

__version__ = "0.1.0"
