"""Sandwich variance for stacked estimating equations.

An M-estimator ``theta_hat`` solves ``(1/N) sum_i lambda(Z_i, theta) = 0``.
Its asymptotic covariance is ``A^{-1} B A^{-T}`` with

    A = (1/N) sum_i d lambda(Z_i, theta) / d theta,
    B = (1/N) sum_i lambda(Z_i, theta) lambda(Z_i, theta)^T.

``A`` is obtained by central finite differences, so any system of estimating
equations can be plugged in without symbolic derivatives.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .exceptions import SingularMatrixError, TransportError

__all__ = [
    "EstimatingSystem",
    "NumericalError",
    "sandwich",
    "jacobian",
    "delta_method",
]

ROOT_TOL = 1e-6
CONDITION_LIMIT = 1e10


class NumericalError(TransportError, ArithmeticError):
    """A quantity that must be non-negative came out clearly negative."""


@dataclass
class EstimatingSystem:
    """Stacked estimating equations evaluated row-wise.

    Parameters
    ----------
    estfun : callable
        ``estfun(theta) -> ndarray of shape (N, k)`` returning the contribution
        ``lambda(Z_i, theta)`` of every row. The data are bound in the closure.
    theta_hat : array_like of shape (k,)
        Root of the empirical equations.
    labels : sequence of str, optional
        Name of every coordinate.
    root_tol : float, default=1e-6
        Tolerance on ``max |(1/N) sum_i lambda(Z_i, theta_hat)|``.
    """

    estfun: Callable
    theta_hat: np.ndarray
    labels: Sequence[str] = field(default_factory=tuple)
    root_tol: float = ROOT_TOL

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        if not self.labels:
            self.labels = tuple(f"theta{j}" for j in range(self.theta_dim))

    @property
    def theta_dim(self):
        return int(self.theta_hat.shape[0])

    def evaluate(self, theta=None):
        theta = self.theta_hat if theta is None else np.asarray(theta, dtype=float)
        vals = np.asarray(self.estfun(theta), dtype=float)
        if vals.ndim != 2 or vals.shape[1] != self.theta_dim:
            raise ValueError(
                f"estimating function returned shape {vals.shape}, expected "
                f"(N, {self.theta_dim})"
            )
        return vals

    def root_residual(self):
        """Max-norm of the mean estimating function at ``theta_hat``."""
        return float(np.max(np.abs(self.evaluate().mean(axis=0))))

    def index(self, label):
        return list(self.labels).index(label)


def jacobian(system, theta=None, rel_step=1e-6):
    """Mean Jacobian of the estimating function by central differences.

    The step for coordinate ``j`` is ``rel_step * (1 + |theta_j|)``.

    Returns
    -------
    ndarray of shape (k, k)
        ``A[i, j] = (1/N) sum d lambda_i / d theta_j``.
    """
    theta = system.theta_hat if theta is None else np.asarray(theta, dtype=float)
    k = theta.shape[0]
    A = np.empty((k, k))
    for j in range(k):
        h = rel_step * (1.0 + abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        A[:, j] = (system.evaluate(up).mean(axis=0) - system.evaluate(dn).mean(axis=0)) / (2 * h)
    return A


def _equilibrated_condition(A):
    row = np.max(np.abs(A), axis=1)
    col = np.max(np.abs(A), axis=0)
    if np.any(row == 0) or np.any(col == 0):
        return np.inf
    scaled = A / row[:, None]
    scaled = scaled / np.max(np.abs(scaled), axis=0)
    return float(np.linalg.cond(scaled))


def _qr_inverse(A):
    Q, R, piv = scipy.linalg.qr(A, pivoting=True)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(A.shape[0]))
    inv = np.empty_like(A)
    inv[piv, :] = Rinv @ Q.T
    return inv


def sandwich(system, check_root=True, rel_step=1e-6):
    """Asymptotic covariance ``A^{-1} B A^{-T}`` of an M-estimator.

    Parameters
    ----------
    system : EstimatingSystem
    check_root : bool, default=True
        Verify that ``theta_hat`` solves the empirical equations.
    rel_step : float, default=1e-6
        Relative finite-difference step.

    Returns
    -------
    ndarray of shape (k, k)
        Symmetrised covariance of ``sqrt(N) (theta_hat - theta)``; divide by
        ``N`` for the covariance of ``theta_hat``.

    Raises
    ------
    ValueError
        If ``check_root`` and the root condition fails.
    SingularMatrixError
        If ``A`` is numerically singular; the error carries the condition number.

    Examples
    --------
    >>> import numpy as np
    >>> z = np.array([1.0, 2.0, 4.0, 7.0])
    >>> sys = EstimatingSystem(lambda t: (z - t[0])[:, None], [z.mean()])
    >>> bool(np.isclose(sandwich(sys)[0, 0], np.var(z), rtol=1e-10))
    True
    """
    if check_root:
        res = system.root_residual()
        if res > system.root_tol:
            raise ValueError(
                f"theta_hat is not a root of the estimating equations "
                f"(residual {res:.3g} > {system.root_tol:g})"
            )
    lam = system.evaluate()
    N = lam.shape[0]
    A = jacobian(system, rel_step=rel_step)
    cond = _equilibrated_condition(A)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularMatrixError(
            f"bread matrix of the sandwich is singular (condition number {cond:.3g}); "
            "check for collinear covariates or lack of overlap",
            condition_number=cond,
        )
    B = lam.T @ lam / N
    Ainv = _qr_inverse(A)
    cov = Ainv @ B @ Ainv.T
    return 0.5 * (cov + cov.T)


def delta_method(cov, grad):
    """Variance ``grad^T cov grad`` of a smooth function of an estimator.

    Parameters
    ----------
    cov : array_like of shape (k, k)
    grad : array_like of shape (k,)

    Returns
    -------
    float

    Raises
    ------
    ValueError
        On dimension mismatch.
    NumericalError
        If the quadratic form is below ``-1e-12``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    grad = np.atleast_1d(np.asarray(grad, dtype=float))
    if cov.shape != (grad.shape[0], grad.shape[0]):
        raise ValueError(f"cov has shape {cov.shape} but grad has length {grad.shape[0]}")
    v = float(grad @ cov @ grad)
    if v < -1e-12:
        raise NumericalError(f"delta-method variance is negative ({v:.3g})")
    return max(v, 0.0)
