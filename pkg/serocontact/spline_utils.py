"""
Helper functions for penalized B-splines (P-splines) on one and two dimensions.
"""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import qr

from serocontact.errors import DomainError


def spline_knots(lower, upper, n_basis, spline_degree=3):
    """
    Equally spaced knots on [lower, upper], padded by ``spline_degree`` knots on each side.

    Args:
        lower: left boundary of the fitted range
        upper: right boundary of the fitted range
        n_basis: number of basis functions
        spline_degree: polynomial degree (3 = cubic)

    Returns:
        np.ndarray: knot vector of length n_basis + spline_degree + 1
    """
    num_knots = n_basis - spline_degree + 1
    if num_knots < 2:
        raise DomainError(f"n_basis must be at least {spline_degree + 1} for degree {spline_degree}")
    dx = (upper - lower) / (num_knots - 1)
    inner_knots = np.linspace(lower, upper, num_knots)
    return np.concatenate((
        np.linspace(lower - spline_degree * dx, lower - dx, spline_degree),
        inner_knots,
        np.linspace(upper + dx, upper + spline_degree * dx, spline_degree),
    ))


def spline_basis(x, knots, spline_degree=3):
    x = np.asarray(x, dtype=float)
    lo, hi = knots[spline_degree], knots[len(knots) - spline_degree - 1]
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise DomainError(f"x-values are outside the spline range [{lo:g}, {hi:g}]")
    return BSpline.design_matrix(np.clip(x, lo, hi), knots, spline_degree).toarray()


def difference_penalty(n_basis, diff_order=2):
    """D'D for the ``diff_order`` finite difference matrix D."""
    d = np.diff(np.eye(n_basis), n=diff_order, axis=0)
    return d.T @ d


def face_splitting(basis_rows, basis_cols):
    """Row-wise Kronecker product: row i is kron(basis_rows[i], basis_cols[i])."""
    n = basis_rows.shape[0]
    return (basis_rows[:, :, None] * basis_cols[:, None, :]).reshape(n, -1)


def sum_to_zero_null_space(constraint):
    """Orthonormal basis Z of {x : constraint @ x = 0} for a single constraint row."""
    constraint = np.atleast_2d(constraint)
    q, _ = qr(constraint.T, mode="full")
    return q[:, constraint.shape[0]:]


@dataclass(frozen=True)
class SplineBasis:
    """Marginal cubic P-spline basis used on both age axes of a contact surface."""
    n_basis: int = 11
    spline_degree: int = 3
    diff_order: int = 2
    lower: float = 0.0
    upper: float = 101.0

    def __post_init__(self):
        if self.n_basis < 4:
            raise DomainError("a marginal basis needs at least 4 functions")
        if self.diff_order >= self.n_basis:
            raise DomainError("difference order must be smaller than the basis size")
        if not self.upper > self.lower:
            raise DomainError("spline range must have positive length")

    @property
    def knots(self) -> np.ndarray:
        return spline_knots(self.lower, self.upper, self.n_basis, self.spline_degree)

    @property
    def penalty(self) -> np.ndarray:
        return difference_penalty(self.n_basis, self.diff_order)

    def evaluate(self, x) -> np.ndarray:
        return spline_basis(x, self.knots, self.spline_degree)

    def tensor_penalty(self, lambda_rows: float, lambda_cols: float) -> np.ndarray:
        eye = np.eye(self.n_basis)
        return lambda_rows * np.kron(self.penalty, eye) + lambda_cols * np.kron(eye, self.penalty)

    def to_dict(self) -> dict:
        return {"n_basis": self.n_basis, "spline_degree": self.spline_degree,
                "diff_order": self.diff_order, "lower": self.lower, "upper": self.upper}
