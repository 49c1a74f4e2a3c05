"""Dense matrix primitives: stable softmax/log-sum-exp and a ridge solver.

Matrices are plain float64 numpy arrays in row-major order. Everything here
is a pure function; no state is shared between calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and check that every entry is finite."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class RidgeProblem:
    """A regularized least-squares problem min ||A X - (B - O)||^2 + lam ||X||^2.

    Attributes
    ----------
    design : (n, p) array
        The design matrix A.
    targets : (n, d) array
        The target matrix B.
    offset : (n, d) array
        Subtracted from the targets before solving.
    lambda_r : float
        Nonnegative ridge weight applied to ||X||_F^2.
    """

    design: np.ndarray
    targets: np.ndarray
    offset: np.ndarray
    lambda_r: float

    def __post_init__(self):
        a = as_matrix(self.design, "design")
        b = as_matrix(self.targets, "targets")
        o = as_matrix(self.offset, "offset")
        if not (a.shape[0] == b.shape[0] == o.shape[0]):
            raise ValueError("design, targets, offset must share row count")
        if b.shape != o.shape:
            raise ValueError("targets and offset must share shape")
        if self.lambda_r < 0:
            raise ValueError("lambda_r must be nonnegative")
        object.__setattr__(self, "design", a)
        object.__setattr__(self, "targets", b)
        object.__setattr__(self, "offset", o)


def softmax_lse_rows(scores) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax and log-sum-exp with max-subtraction stability.

    Parameters
    ----------
    scores : (n, m) array of finite values.

    Returns
    -------
    probs : (n, m) array
        Each row sums to 1; probs[i, j] == exp(scores[i, j] - lse[i]) exactly.
    lse : (n,) array
        lse[i] = log sum_j exp(scores[i, j]).
    """
    s = as_matrix(scores, "scores")
    if s.shape[1] == 0:
        raise ValueError("empty score row")
    row_max = np.max(s, axis=1, keepdims=True)
    lse = (row_max[:, 0] + np.log(np.sum(np.exp(s - row_max), axis=1)))
    probs = np.exp(s - lse[:, None])
    return probs, lse


def ridge_solve(problem: RidgeProblem) -> np.ndarray:
    """Solve the ridge problem via Cholesky on the normal equations.

    Returns the (p, d) minimizer of ||A X - (B - O)||_F^2 + lambda_r ||X||_F^2.
    With lambda_r == 0 the design must have full column rank; a rank-deficient
    unregularized system raises ValueError("singular system"). If the Cholesky
    factorization fails for a regularized system (severe conditioning), the
    solver falls back to an orthogonal-factorization least-squares path on the
    augmented system.
    """
    a = problem.design
    rhs = problem.targets - problem.offset
    p = a.shape[1]
    gram = a.T @ a
    gram[np.diag_indices(p)] += problem.lambda_r
    atb = a.T @ rhs
    try:
        c, low = scipy.linalg.cho_factor(gram, check_finite=False)
        return scipy.linalg.cho_solve((c, low), atb, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    except scipy.linalg.LinAlgError:
        pass
    if problem.lambda_r == 0.0:
        if np.linalg.matrix_rank(a) < p:
            raise ValueError("singular system")
        x, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        return x
    # Augment rows with sqrt(lambda) I so lstsq solves the regularized problem.
    aug = np.vstack([a, np.sqrt(problem.lambda_r) * np.eye(p)])
    rhs_aug = np.vstack([rhs, np.zeros((p, rhs.shape[1]))])
    x, *_ = np.linalg.lstsq(aug, rhs_aug, rcond=None)
    return x
