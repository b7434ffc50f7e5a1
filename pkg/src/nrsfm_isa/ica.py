"""Symmetric fixed-point FastICA on already-whitened rows."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

WHITENING_TOL = 1e-6


@dataclass(frozen=True)
class IcaConfig:
    contrast: str = "tanh"  # or "cube"
    tol: float = 1e-7
    max_iter: int = 500
    seed: int = 0
    check_orthogonality: bool = False


@dataclass(frozen=True)
class IcaResult:
    """Orthogonal ``A_ica`` with sources ``A_ica.T @ Bp``."""

    A_ica: np.ndarray
    iterations: int
    converged: bool
    seed: int


def sym_decorrelate(W):
    """``(W W^T)^{-1/2} W``."""
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def random_orthogonal(n, rng):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def check_whitened(Bp, tol=WHITENING_TOL):
    """Raise unless the non-zero rows of ``Bp / sqrt(J)`` are orthonormal."""
    Bp = np.asarray(Bp, dtype=float)
    J = Bp.shape[1]
    live = np.linalg.norm(Bp, axis=1) > 0
    G = Bp[live] @ Bp[live].T / J
    err = np.max(np.abs(G - np.eye(G.shape[0]))) if G.size else 0.0
    if err > tol:
        raise PreconditionError(
            f"rows of Bp/sqrt(J) are not orthonormal (max deviation {err:.3g} > {tol:g})"
        )


def _contrast(name):
    if name == "tanh":
        def g(Y):
            T = np.tanh(Y)
            return T, 1.0 - T * T
    elif name == "cube":
        def g(Y):
            return Y ** 3, 3.0 * Y * Y
    else:
        raise ValueError(f"unknown contrast {name!r}; use 'tanh' or 'cube'")
    return g


def fast_ica(Bp, cfg: IcaConfig = IcaConfig()) -> IcaResult:
    """Estimate an orthogonal unmixing of the rows of ``Bp``.

    Parameters
    ----------
    Bp : ndarray, shape (n, J)
        Signals with ``Bp @ Bp.T / J`` equal to the identity. Columns are
        samples.
    cfg : IcaConfig

    Returns
    -------
    IcaResult
        ``converged`` is False when ``cfg.max_iter`` sweeps did not bring the
        largest ``1 - |cos|`` row change under ``cfg.tol``.
    """
    Bp = np.asarray(Bp, dtype=float)
    n, J = Bp.shape
    check_whitened(Bp)
    if J < 10 * n:
        warnings.warn(
            f"only {J} samples for {n} components; ICA estimates may be unreliable",
            stacklevel=2,
        )
    g = _contrast(cfg.contrast)
    rng = np.random.default_rng(cfg.seed)
    W = random_orthogonal(n, rng)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        Y = W @ Bp
        gY, dgY = g(Y)
        W1 = sym_decorrelate(gY @ Bp.T / J - dgY.mean(axis=1)[:, None] * W)
        if cfg.check_orthogonality:
            assert np.allclose(W1 @ W1.T, np.eye(n), atol=1e-10)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W1, W)) - 1.0))
        W = W1
        if change < cfg.tol:
            converged = True
            break
    return IcaResult(A_ica=W.T.copy(), iterations=it, converged=converged, seed=cfg.seed)


def amari_index(P):
    """Amari performance index of a square matrix (0 iff a scaled permutation)."""
    P = np.abs(np.asarray(P, dtype=float))
    n = P.shape[0]
    rows = (P.sum(axis=1) / P.max(axis=1) - 1).sum()
    cols = (P.sum(axis=0) / P.max(axis=0) - 1).sum()
    return (rows + cols) / (2 * n * (n - 1))
