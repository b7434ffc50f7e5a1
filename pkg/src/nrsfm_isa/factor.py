"""Centering, rigid factorisation and rank-3K truncation of the non-rigid part."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, DegeneracyWarning, InputError
from .model import MeasurementSet, RigidFactor

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class TruncatedFactor:
    """Best rank-3K factorisation ``dW ~ Mp @ Bp``.

    ``Mp = U' S' / sqrt(J)`` and ``Bp = sqrt(J) V'^T``. When the data has
    fewer than 3K significant singular values the trailing columns of ``Mp``
    are zero and the trailing rows of ``Bp`` complete an orthonormal set.
    """

    Mp: np.ndarray
    Bp: np.ndarray
    singular_values: np.ndarray
    discarded_energy: float
    effective_rank: int


def sign_fix(U, Vt):
    """Flip singular pairs so each right vector's largest-|entry| is positive."""
    if Vt.shape[0] == 0:
        return U, Vt
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(Vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return U * signs, Vt * signs[:, None]


def svd(X):
    """Thin SVD with the deterministic sign convention."""
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    U, Vt = sign_fix(U, Vt)
    return U, s, Vt


def center(W_raw) -> MeasurementSet:
    """Remove each image's centroid from the tracks."""
    W_raw = np.array(W_raw, dtype=float)
    if W_raw.ndim != 2 or W_raw.shape[0] % 2 or W_raw.shape[1] < 1:
        raise InputError(f"expected a 2I x J matrix with J >= 1, got shape {W_raw.shape}")
    if not np.all(np.isfinite(W_raw)):
        bad = np.argwhere(~np.isfinite(W_raw))[0]
        raise InputError(f"non-finite measurement at row {bad[0]}, column {bad[1]}")
    t = W_raw.mean(axis=1)
    W = W_raw - t[:, None]
    W_raw.setflags(write=False)
    W.setflags(write=False)
    return MeasurementSet(W_raw=W_raw, W=W, translations=t.reshape(-1, 2))


def _significant(s, rank_tol, scale=None):
    ref = s[0] if scale is None else scale
    if s.size == 0 or ref <= 0:
        return 0
    return int(np.count_nonzero(s > rank_tol * ref))


def rigid_factorize(m: MeasurementSet, rank_tol: float = DEFAULT_RANK_TOL):
    """Tomasi-Kanade factorisation of the centred tracks.

    Returns
    -------
    rigid : RigidFactor
        ``M0 = U0 S0 / sqrt(J)``, ``B0 = sqrt(J) V0^T``.
    W0 : ndarray
        The best rank-3 approximation ``M0 @ B0``.
    """
    W = m.W
    n2I, J = W.shape
    if n2I < 3 or J < 3:
        raise ConfigError(f"rigid factorisation needs 2I >= 3 and J >= 3, got {W.shape}")
    U, s, Vt = svd(W)
    r = min(3, _significant(s, rank_tol))
    if r < 3:
        warnings.warn(
            f"centred measurements have only {r} significant singular values; "
            "rigid factor is rank deficient",
            DegeneracyWarning,
            stacklevel=2,
        )
    sq = np.sqrt(J)
    M0 = np.zeros((n2I, 3))
    B0 = np.zeros((3, J))
    M0[:, :r] = U[:, :r] * s[:r] / sq
    B0[:r] = sq * Vt[:r]
    return RigidFactor(M0=M0, B0=B0, rank=r), M0 @ B0


def nonrigid_residual(m: MeasurementSet, W0) -> np.ndarray:
    """``dW = W - W0``."""
    W0 = np.asarray(W0, dtype=float)
    if W0.shape != m.W.shape:
        raise ConfigError(f"W0 shape {W0.shape} does not match W shape {m.W.shape}")
    return m.W - W0


def _orthonormal_completion(kept, candidates, exclude, n_missing):
    """Rows orthonormal to ``kept`` and ``exclude``, preferring ``candidates``."""
    J = kept.shape[1]
    basis = [r for r in (exclude, kept) if r is not None and r.shape[0]]
    Q = scipy.linalg.orth(np.vstack(basis).T) if basis else np.zeros((J, 0))

    def project(X):
        return X - (X @ Q) @ Q.T

    cand = project(candidates)
    U, s, Vt = svd(cand) if cand.shape[0] else (None, np.zeros(0), np.zeros((0, J)))
    good = s > 1e-8 * max(1.0, s[0] if s.size else 1.0)
    rows = Vt[good][:n_missing]
    if rows.shape[0] < n_missing:
        # candidates exhausted: fall back to the full orthogonal complement
        Q2 = scipy.linalg.orth(np.hstack([Q, rows.T]))
        null = scipy.linalg.null_space(Q2.T).T
        _, null = sign_fix(np.eye(null.shape[0]), null)
        rows = np.vstack([rows, null[: n_missing - rows.shape[0]]])
    return rows


def truncate(dW, K: int, rank_tol: float = DEFAULT_RANK_TOL, *, scale=None, exclude=None):
    """Keep the 3K largest singular components of the non-rigid part.

    Parameters
    ----------
    dW : ndarray, shape (2I, J)
    K : int
        Number of 3-dimensional non-rigid subspaces.
    rank_tol : float
        Singular values below ``rank_tol * scale`` count as zero.
    scale : float, optional
        Reference singular value; defaults to the largest singular value of
        ``dW``. The pipeline passes the largest singular value of ``W`` so that
        round-off in an all-rigid scene is recognised as degenerate.
    exclude : ndarray, optional
        Rows (e.g. ``B0``) the completion rows must be orthogonal to when the
        effective rank is below 3K.
    """
    dW = np.asarray(dW, dtype=float)
    n2I, J = dW.shape
    n = 3 * K
    if K < 1 or n > min(n2I, J):
        raise ConfigError(
            f"3K = {n} exceeds min(2I, J) = {min(n2I, J)}; reduce K to at most {min(n2I, J) // 3}"
        )
    U, s, Vt = svd(dW)
    r = min(n, _significant(s, rank_tol, scale))
    sq = np.sqrt(J)
    Mp = np.zeros((n2I, n))
    Mp[:, :r] = U[:, :r] * s[:r] / sq
    Bp = np.empty((n, J))
    Bp[:r] = sq * Vt[:r]
    if r < n:
        warnings.warn(
            f"non-rigid part has effective rank {r} < 3K = {n}; "
            "continuing with zero-padded components",
            DegeneracyWarning,
            stacklevel=2,
        )
        ex = None if exclude is None else np.asarray(exclude, dtype=float)
        Bp[r:] = sq * _orthonormal_completion(Vt[:r], Vt[r:], ex, n - r)
    discarded = float(np.sum(s[r:] ** 2))
    return TruncatedFactor(
        Mp=Mp, Bp=Bp, singular_values=s, discarded_energy=discarded, effective_rank=r
    )
