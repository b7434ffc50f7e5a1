"""Reprojection-error refinement of the subspace affinities and coefficients.

With the rows of ``B_isa / sqrt(J)`` orthonormal and ``T = dW B_isa^T / J``,

    ||dW - M0^alpha E B_isa||^2 = J ||T - M0^alpha E||^2 + ||dW (I - B_isa^T B_isa / J)||^2

where ``E = blockdiag(E_k)``, ``E_k = D_k^{-1}``. The last term does not
depend on ``(E, alpha)``, so only the small bilinear problem is solved, by
alternating exact least squares. ``T`` carries the ``1/J`` scaling so that a
noise-free model gives ``T = M0^alpha D^{-1}`` exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceWarning,
    DegeneracyWarning,
    PreconditionError,
    SingularAffinityError,
)
from .model import SINGULAR_CONDITION, BlockMotion, block_diag_stack, motion_from_alpha

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class RefineConfig:
    tol: float = 1e-10
    max_iter: int = 200


@dataclass(frozen=True)
class RefineTrace:
    objectives: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def target_matrix(dW, B_isa) -> np.ndarray:
    """``T = dW B_isa^T / J``; refuses non-orthonormal ``B_isa``."""
    dW = np.asarray(dW, dtype=float)
    B_isa = np.asarray(B_isa, dtype=float)
    J = B_isa.shape[1]
    if dW.shape[1] != J:
        raise PreconditionError(f"dW {dW.shape} and B_isa {B_isa.shape} disagree on J")
    G = B_isa @ B_isa.T / J
    err = np.max(np.abs(G - np.eye(G.shape[0])))
    if err > ORTHONORMAL_TOL:
        raise PreconditionError(
            "rows of B_isa/sqrt(J) must be orthonormal for the bilinear reduction "
            f"(max deviation {err:.3g})"
        )
    return dW @ B_isa.T / J


def bilinear_objective(T, M0, alpha, E) -> float:
    """``||T - M0^alpha blockdiag(E)||_F^2``."""
    I, K = np.shape(alpha)
    M0r = np.asarray(M0).reshape(I, 2, 3)
    Tr = np.asarray(T).reshape(I, 2, K, 3)
    fit = np.einsum("ik,ira,kab->irkb", alpha, M0r, E)
    return float(np.sum((Tr - fit) ** 2))


def _solve_E(Tk, M0r, a):
    """``argmin_E sum_i ||T_k^i - a_i M0^i E||^2`` (3x3 least squares)."""
    A = (a[:, None, None] * M0r).reshape(-1, 3)
    E, *_ = np.linalg.lstsq(A, Tk.reshape(-1, 3), rcond=None)
    return E


def _solve_alpha(Tk, M0r, E):
    P = np.einsum("ira,ab->irb", M0r, E)
    num = np.einsum("irb,irb->i", Tk, P)
    den = np.einsum("irb,irb->i", P, P)
    zero = den <= 0
    out = np.divide(num, den, out=np.zeros_like(num), where=~zero)
    return out, bool(np.any(zero))


def gauge(E, alpha):
    """Return ``(D, alpha, D_inv, singular)`` with ``||D_k||_F = 1``.

    Singular ``E_k`` (no finite inverse) are kept as inverses normalised to
    unit Frobenius norm instead, with ``D_k`` the pseudo-inverse.
    """
    E = np.array(E, dtype=float)
    alpha = np.array(alpha, dtype=float)
    K = E.shape[0]
    D = np.empty_like(E)
    singular = []
    for k in range(K):
        s = np.linalg.svd(E[k], compute_uv=False)
        if s[-1] > 0 and s[0] / s[-1] < SINGULAR_CONDITION:
            Dk = np.linalg.inv(E[k])
            c = np.linalg.norm(Dk)
            D[k] = Dk / c
            E[k] = E[k] * c
            alpha[:, k] /= c
        else:
            singular.append(k)
            c = np.linalg.norm(E[k])
            if c > 0:
                E[k] /= c
                alpha[:, k] *= c
            D[k] = np.linalg.pinv(E[k])
    return D, alpha, E, singular


def refine_als(T, M0, init: BlockMotion, cfg: RefineConfig = RefineConfig()):
    """Alternating least squares on ``||T - M0^alpha E||^2``.

    Each iteration solves every ``E_k`` with ``alpha`` fixed, then every
    ``alpha_k^i`` in closed form with ``E`` fixed. Iteration stops when the
    relative objective decrease of a full iteration is below ``cfg.tol``.

    Returns
    -------
    blocks : BlockMotion
        ``D_k = E_k^{-1}`` normalised to unit Frobenius norm, the explicit
        inverses stored alongside.
    trace : RefineTrace
    """
    T = np.asarray(T, dtype=float)
    M0 = np.asarray(M0, dtype=float)
    alpha = np.array(init.alpha, dtype=float)
    I, K = alpha.shape
    M0r = M0.reshape(I, 2, 3)
    Tr = T.reshape(I, 2, K, 3)
    try:
        E = np.array(init.inverse(), dtype=float)
    except SingularAffinityError:
        E = np.linalg.pinv(init.D)
    alpha_init = alpha.copy()
    reinit = set()
    zero_notes = set()
    objectives = [bilinear_objective(T, M0, alpha, E)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        start = objectives[-1]
        for k in range(K):
            E[k] = _solve_E(Tr[:, :, k, :], M0r, alpha[:, k])
        objectives.append(bilinear_objective(T, M0, alpha, E))
        for k in range(K):
            alpha[:, k], had_zero = _solve_alpha(Tr[:, :, k, :], M0r, E[k])
            if had_zero:
                zero_notes.add(k)
            col_max = np.max(np.abs(alpha[:, k]))
            if k not in reinit and col_max < 1e-14 * max(np.max(np.abs(alpha)), 1e-300):
                # escape the spurious all-zero fixed point once
                reinit.add(k)
                alpha[:, k] = alpha_init[:, k]
        objectives.append(bilinear_objective(T, M0, alpha, E))
        if start - objectives[-1] <= cfg.tol * start:
            converged = True
            break
    if not converged:
        warnings.warn("ALS refinement reached max_iter", ConvergenceWarning, stacklevel=2)
    if zero_notes:
        warnings.warn(
            f"zero projections in subspaces {sorted(zero_notes)}; their alpha set to 0",
            DegeneracyWarning,
            stacklevel=2,
        )
    D, alpha_g, E_g, singular = gauge(E, alpha)
    if singular:
        warnings.warn(
            f"refined affinities {singular} are singular; explicit inverses kept",
            DegeneracyWarning,
            stacklevel=2,
        )
    diag = dict(
        iterations=it,
        converged=converged,
        objective=objectives[-1],
        singular=singular,
        alpha_reinitialised=sorted(reinit),
    )
    blocks = BlockMotion(D=D, alpha=alpha_g, D_inv=E_g, diagnostics=diag)
    return blocks, RefineTrace(objectives=objectives, iterations=it, converged=converged)


def full_objective(dW, M0, alpha, E, B_isa) -> float:
    """``||dW - M0^alpha blockdiag(E) B_isa||_F^2`` evaluated directly."""
    R = dW - motion_from_alpha(M0, alpha) @ block_diag_stack(E) @ B_isa
    return float(np.sum(R * R))
