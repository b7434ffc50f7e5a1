"""Block-form motion recovery by iteratively reweighted least squares.

Solves ``min sum_{i,k} ||M_k^i D_k - alpha_k^i M0^i||_F^2`` subject to
``||D_k||_F = 1``. With ``d_k = vec(D_k)`` (column stacking) and
``m^i = vec(M0^i)`` every term is ``||N_k^i d_k - alpha_k^i m^i||^2`` where
``N_k^i = blockdiag(M_k^i, M_k^i, M_k^i)``.

The first-view weights ``alpha_k^1`` are held fixed inside each least
squares solve and rescaled by ``1 / ||d_k||`` between solves, which drives
the norms of ``d_k`` to one.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse

from .errors import ConfigError, ConvergenceWarning, DegeneracyWarning
from .model import BlockMotion


@dataclass(frozen=True)
class IrlsConfig:
    tol: float = 1e-8
    max_iter: int = 50
    rcond: float = 1e-12


@dataclass(frozen=True)
class IrlsState:
    iteration: int
    d_norms: list
    alpha1: list
    residual: float
    normalized_residual: float


def _split(M_isa, M0):
    M_isa = np.asarray(M_isa, dtype=float)
    M0 = np.asarray(M0, dtype=float)
    n2I, n = M_isa.shape
    if n % 3 or n2I % 2 or M0.shape != (n2I, 3):
        raise ConfigError(
            f"M_isa {M_isa.shape} and M0 {M0.shape} are not 2I x 3K and 2I x 3"
        )
    I, K = n2I // 2, n // 3
    Mk = M_isa.reshape(I, 2, K, 3).transpose(2, 0, 1, 3)  # (K, I, 2, 3)
    return Mk, M0.reshape(I, 2, 3), I, K


def _n_blocks(Mk):
    """``N_k^i`` for all i of one k as an ``(I, 6, 9)`` array."""
    I = Mk.shape[0]
    N = np.zeros((I, 6, 9))
    for c in range(3):
        N[:, 2 * c:2 * c + 2, 3 * c:3 * c + 3] = Mk
    return N


def vec(X):
    """Column-stacking vectorisation of the trailing two axes."""
    X = np.asarray(X)
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (-1,))


def build_system(M_isa, M0) -> scipy.sparse.csr_matrix:
    """Sparse ``6IK x (9+I)K`` coefficient matrix ``N``.

    Unknown order: ``d_1..d_K`` then ``alpha_1^1..alpha_K^1``,
    ``alpha_1^2..alpha_K^2``, ... Rows of term (i, k) start at ``6(iK + k)``.
    """
    Mk, M0r, I, K = _split(M_isa, M0)
    m = vec(M0r)  # (I, 6)
    rows, cols, vals = [], [], []
    r6 = np.arange(6)
    for k in range(K):
        N = _n_blocks(Mk[k])
        for i in range(I):
            base = 6 * (i * K + k)
            nz = np.nonzero(N[i])
            rows.append(base + nz[0])
            cols.append(9 * k + nz[1])
            vals.append(N[i][nz])
            rows.append(base + r6)
            cols.append(np.full(6, 9 * K + i * K + k))
            vals.append(-m[i])
    shape = (6 * I * K, (9 + I) * K)
    return scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )


def pack_unknowns(D, alpha):
    """Stack ``vec(D_k)`` and ``alpha`` in the column order of ``build_system``."""
    return np.concatenate([vec(np.asarray(D)).ravel(), np.asarray(alpha, float).ravel()])


def block_residual(M_isa, M0, D, alpha) -> float:
    """``sum_{i,k} ||M_k^i D_k - alpha_k^i M0^i||_F^2``."""
    Mk, M0r, I, K = _split(M_isa, M0)
    fit = np.einsum("kiab,kbc->kiac", Mk, np.asarray(D))
    target = np.asarray(alpha).T[:, :, None, None] * M0r[None]
    return float(np.sum((fit - target) ** 2))


def _solve_block(N, m, a, rcond):
    """Reduced least squares for one subspace with ``alpha^1 = a`` fixed.

    The free weights ``alpha^i`` (i >= 2) enter linearly, one per term, so
    they are eliminated exactly by projecting each term onto the complement of
    ``m^i``; the remaining 9-unknown problem is solved by SVD.
    """
    mn = np.linalg.norm(m, axis=1)
    mhat = np.divide(m, mn[:, None], out=np.zeros_like(m), where=mn[:, None] > 0)
    PN = N - mhat[:, :, None] * np.einsum("ir,irc->ic", mhat, N)[:, None, :]
    A = np.concatenate([N[:1], PN[1:]]).reshape(-1, 9)
    b = np.zeros(A.shape[0])
    b[:6] = a * m[0]
    d, _, rank, _ = np.linalg.lstsq(A, b, rcond=rcond)
    alpha = np.divide(np.einsum("ir,irc,c->i", m, N, d), mn ** 2,
                      out=np.zeros(len(mn)), where=mn > 0)
    alpha[0] = a
    return d, alpha, rank


def _constrained_block(N, m):
    """Unit-norm minimiser with every alpha free (smallest singular vector)."""
    mn = np.linalg.norm(m, axis=1)
    mhat = np.divide(m, mn[:, None], out=np.zeros_like(m), where=mn[:, None] > 0)
    PN = N - mhat[:, :, None] * np.einsum("ir,irc->ic", mhat, N)[:, None, :]
    _, _, Vt = np.linalg.svd(PN.reshape(-1, 9), full_matrices=False)
    d = Vt[-1]
    alpha = np.divide(np.einsum("ir,irc,c->i", m, N, d), mn ** 2,
                      out=np.zeros(len(mn)), where=mn > 0)
    return d, alpha


def irls_recover(M_isa, M0, cfg: IrlsConfig = IrlsConfig()) -> BlockMotion:
    """Estimate ``D_k`` (unit Frobenius norm) and ``alpha`` from ``M_isa``.

    Raises
    ------
    ConfigError
        With a single image the reduced system is under-determined.
    """
    Mk, M0r, I, K = _split(M_isa, M0)
    if I < 2:
        raise ConfigError("block recovery needs at least two images")
    if not np.any(M0r):
        raise ConfigError("rigid motion M0 is identically zero")
    m = vec(M0r)
    Ns = [_n_blocks(Mk[k]) for k in range(K)]
    a = np.full(K, 1.0 / K)
    d = np.zeros((K, 9))
    alpha = np.zeros((I, K))
    history = []
    degenerate = set()
    converged = False
    prev = np.inf
    floor = 1e-14 * float(np.sum(np.asarray(M_isa) ** 2))
    for it in range(1, cfg.max_iter + 1):
        for k in range(K):
            d[k], alpha[:, k], rank = _solve_block(Ns[k], m, a[k], cfg.rcond)
            if rank < 9:
                degenerate.add(k)
        norms = np.linalg.norm(d, axis=1)
        D = unvec3_stack(d)
        res = block_residual(M_isa, M0, D, alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            nres = float(sum(
                block_residual(M_isa[:, 3 * k:3 * k + 3], M0, D[k:k + 1], alpha[:, k:k + 1])
                / norms[k] ** 2 for k in range(K)
            ))
        history.append(IrlsState(it, norms.tolist(), a.tolist(), res, nres))
        if nres > prev * (1 + 1e-9) + floor:
            warnings.warn("IRLS normalised residual increased", ConvergenceWarning, stacklevel=2)
        prev = nres
        if np.max(np.abs(norms - 1.0)) < cfg.tol:
            converged = True
            break
        if np.any(norms == 0):
            break
        a = a / norms
    if degenerate:
        warnings.warn(
            f"block system rank deficient for subspaces {sorted(degenerate)}; "
            "minimum-norm solution used",
            DegeneracyWarning,
            stacklevel=2,
        )
    for k in np.flatnonzero(np.linalg.norm(d, axis=1) == 0):
        # alpha^1 anchoring gave the trivial solution; use the constrained minimiser
        d[k], alpha[:, k] = _constrained_block(Ns[k], m)
    if not converged:
        warnings.warn("IRLS reached max_iter before the norms settled",
                      ConvergenceWarning, stacklevel=2)
    D = unvec3_stack(d)
    s = np.linalg.norm(D, axis=(1, 2))
    D = D / s[:, None, None]
    alpha = alpha / s[None, :]
    res = block_residual(M_isa, M0, D, alpha)
    diag = dict(
        iterations=len(history),
        converged=converged,
        residual=res,
        degenerate=sorted(int(k) for k in degenerate),
        history=[asdict(h) for h in history],
    )
    return BlockMotion(D=D, alpha=alpha, diagnostics=diag)


def unvec3_stack(d):
    """Inverse of column-stacking ``vec`` for a ``(K, 9)`` stack."""
    return np.swapaxes(np.asarray(d).reshape(-1, 3, 3), 1, 2)
