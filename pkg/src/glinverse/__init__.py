"""Inverse source reconstruction for the linear complex Ginzburg-Landau equation.

Crank-Nicolson forward solver on a uniform grid, exact discrete adjoint
gradients of a Tikhonov-regularized terminal tracking functional, and a
projected Polak-Ribiere+ conjugate gradient minimizer.
"""

__version__ = "0.1.0"
