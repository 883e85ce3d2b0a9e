"""Numerical laboratory for the anisotropic nonlinear Steklov problem

    div(a grad u) = 0 in Omega,   du/dnu = lam * sinh(u) on the boundary.
"""
__version__ = "0.1.0"
