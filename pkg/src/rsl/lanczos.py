"""Thick-restart block Lanczos for the algebraically largest eigenpairs.

The operator is given matrix-free as a callable on ``(n, b)`` blocks and must
be symmetric in the Euclidean inner product.  Blocks are orthogonalised
against the whole basis by two passes of classical Gram-Schmidt (full
reorthogonalisation), so Ritz values do not duplicate.

Restart policy
--------------
When the basis reaches ``max_basis`` columns, a Rayleigh-Ritz step is taken
and the basis is replaced by the ``k + block_size`` leading Ritz vectors.
The next block is the orthonormalised residual block of the leading
``block_size`` Ritz vectors, so the new basis spans a block Krylov space
again (thick restart).  Operator products of kept vectors are carried
over, never recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LanczosBreakdown(RuntimeError):
    """The Krylov space became invariant before any Ritz pair converged."""


@dataclass
class LanczosResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    converged: bool
    restarts: int
    matvecs: int


def _orthonormalize(W: np.ndarray, basis: np.ndarray | None, drop_tol: float) -> np.ndarray:
    """Orthogonalise ``W`` against ``basis`` and itself; drop dependent columns."""
    norms0 = np.linalg.norm(W, axis=0)
    for _ in range(2):
        if basis is not None and basis.shape[1]:
            W = W - basis @ (basis.T @ W)
    Q, R = np.linalg.qr(W)
    # columns whose new direction is negligible relative to their input size
    keep = np.abs(np.diag(R)) > drop_tol * np.maximum(norms0, 1e-300)
    Q = Q[:, keep]
    if Q.shape[1] and basis is not None and basis.shape[1]:
        Q = Q - basis @ (basis.T @ Q)
        Q, _ = np.linalg.qr(Q)
    return Q


def block_lanczos(apply, n: int, k: int, block_size: int = 8, tol: float = 1e-8,
                  max_basis: int | None = None, max_restarts: int = 200,
                  seed: int = 0, start: np.ndarray | None = None) -> LanczosResult:
    """Largest ``k`` eigenpairs of a symmetric operator.

    Parameters
    ----------
    apply : callable
        ``apply(X)`` returns the operator applied to each column of ``X``.
    n : int
        Problem size.
    k : int
        Number of eigenpairs wanted.
    block_size : int
        Columns per Krylov block; should be at least the multiplicity of the
        wanted eigenvalues.
    tol : float
        Convergence threshold on the residual norm ``|A y - theta y|`` of unit
        Ritz vectors.
    max_basis : int, optional
        Basis size that triggers a restart (default ``max(30 b, 3 (k + b))``).
    max_restarts : int
        Give up (``converged=False``) after this many restarts.
    seed : int
        Seed of the random start block.
    start : ndarray, optional
        Explicit start block of shape ``(n, b)``.

    Returns
    -------
    LanczosResult
        Ritz values in descending order with unit Ritz vectors and residuals.
    """
    b = int(block_size)
    k = min(int(k), n)
    keep_count = min(k + b, n)
    if max_basis is None:
        max_basis = max(30 * b, 3 * keep_count)
    max_basis = min(max_basis, n)
    if start is None:
        start = np.random.default_rng(seed).standard_normal((n, b))
    V = _orthonormalize(np.asarray(start, dtype=np.float64), None, 1e-12)

    basis = np.empty((n, 0))
    A_basis = np.empty((n, 0))
    matvecs = 0
    restarts = 0
    theta = np.empty(0)
    Y = np.empty((n, 0))
    res = np.empty(0)
    while True:
        # expand the block Krylov space
        while V.shape[1] and basis.shape[1] + V.shape[1] <= max_basis:
            AV = apply(V)
            matvecs += V.shape[1]
            basis = np.hstack([basis, V])
            A_basis = np.hstack([A_basis, AV])
            if basis.shape[1] + b > max_basis:
                break
            V = _orthonormalize(AV, basis, 1e-10)

        H = basis.T @ A_basis
        H = 0.5 * (H + H.T)
        evals, S = np.linalg.eigh(H)
        order = np.argsort(evals)[::-1]
        evals, S = evals[order], S[:, order]
        m = min(keep_count, S.shape[1])
        theta = evals[:m]
        Y = basis @ S[:, :m]
        AY = A_basis @ S[:, :m]
        R = AY - Y * theta
        res = np.linalg.norm(R, axis=0)
        kk = min(k, m)
        invariant = V.shape[1] == 0
        if np.all(res[:kk] <= tol) or invariant and basis.shape[1] == n:
            return LanczosResult(theta[:kk], Y[:, :kk], res[:kk], True, restarts, matvecs)
        if invariant:
            if np.any(res[:kk] <= tol):
                return LanczosResult(theta[:kk], Y[:, :kk], res[:kk], False, restarts, matvecs)
            raise LanczosBreakdown("Krylov space became invariant without converged pairs")
        if restarts >= max_restarts:
            return LanczosResult(theta[:kk], Y[:, :kk], res[:kk], False, restarts, matvecs)
        restarts += 1
        basis, A_basis = Y, AY
        V = _orthonormalize(R[:, :b], basis, 1e-10)
        if V.shape[1] == 0:
            # residuals lie in the kept space: restart from random directions
            V = _orthonormalize(np.random.default_rng(seed + restarts).standard_normal((n, b)),
                                basis, 1e-10)
