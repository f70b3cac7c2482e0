"""Desk-scale laboratory for heat kernels, flow hierarchies, tree weights,
and counterterm scaling on constant-curvature manifolds."""

__version__ = "0.1.0"
