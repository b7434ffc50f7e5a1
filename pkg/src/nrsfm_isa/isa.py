"""Independent subspace analysis: FastISA and ICA component pooling."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceWarning
from .ica import IcaResult, check_whitened, random_orthogonal, sym_decorrelate
from .kernels import best_swap, isa_sweep
from .model import SubspaceSeparation

EXHAUSTIVE_LIMIT = 9


@dataclass(frozen=True)
class ModeCovariance:
    C: np.ndarray
    off_block_energy: float


@dataclass(frozen=True)
class Pooling:
    """Component order ``perm``: the pooled matrix is ``C[perm][:, perm]``."""

    perm: np.ndarray
    objective: float


@dataclass(frozen=True)
class IsaConfig:
    restarts: int = 10
    base_seed: int = 0
    tol: float = 1e-7
    max_iter: int = 500
    eps: float = 1e-8


def off_block_energy(C) -> float:
    """Sum of squared entries outside the 3x3 diagonal blocks."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    blk = np.arange(n) // 3
    return float(np.sum(np.where(blk[:, None] != blk[None, :], C * C, 0.0)))


def mode_covariance(B_ica, dW) -> ModeCovariance:
    """Covariance of the projections of ``dW`` onto the component basis.

    ``C = (1/J) P P^T - (1/(4 I^2 J)) (P 1)(P 1)^T`` with ``P = B_ica dW^T``
    and ``1`` the all-ones vector of length 2I.
    """
    B_ica = np.asarray(B_ica, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if B_ica.shape[1] != dW.shape[1]:
        raise ConfigError(f"B_ica {B_ica.shape} and dW {dW.shape} disagree on J")
    n2I, J = dW.shape
    I = n2I / 2
    P = B_ica @ dW.T
    p = P.sum(axis=1)
    C = P @ P.T / J - np.outer(p, p) / (4 * I * I * J)
    C = 0.5 * (C + C.T)
    return ModeCovariance(C=C, off_block_energy=off_block_energy(C))


def _as_matrix(C):
    return C.C if isinstance(C, ModeCovariance) else np.asarray(C, dtype=float)


def greedy_pool(C, K: int, max_swaps: int = 10000) -> Pooling:
    """Reduce off-block energy by repeated best single-index swaps.

    Each step applies the transposition with the largest decrease of the
    off-block energy (ties: lexicographically smallest pair) and stops when
    no swap decreases it.
    """
    C = _as_matrix(C)
    n = C.shape[0]
    if n != 3 * K:
        raise ConfigError(f"C is {n}x{n}, expected {3 * K}x{3 * K}")
    perm = np.arange(n)
    if K == 1:
        return Pooling(perm=perm, objective=0.0)
    C2 = np.ascontiguousarray(C * C)
    floor = 1e-14 * C2.sum()
    for _ in range(max_swaps):
        gain, a, b = best_swap(C2, K)
        if not gain > floor:
            break
        perm[[a, b]] = perm[[b, a]]
        C2[[a, b]] = C2[[b, a]]
        C2[:, [a, b]] = C2[:, [b, a]]
    return Pooling(perm=perm, objective=off_block_energy(C[np.ix_(perm, perm)]))


def _partitions(items):
    """All partitions of ``items`` into unordered groups of three."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for pair in itertools.combinations(rest, 2):
        remaining = [x for x in rest if x not in pair]
        for tail in _partitions(remaining):
            yield [(first,) + pair] + tail


def exhaustive_pool(C, K: int) -> Pooling:
    """Globally optimal pooling by enumeration (3K <= 9).

    The objective only depends on which indices share a block, so the search
    runs over set partitions into triples; every permutation belongs to one.
    """
    C = _as_matrix(C)
    n = C.shape[0]
    if n != 3 * K:
        raise ConfigError(f"C is {n}x{n}, expected {3 * K}x{3 * K}")
    if n > EXHAUSTIVE_LIMIT:
        raise ConfigError(f"exhaustive pooling refused for 3K = {n} > {EXHAUSTIVE_LIMIT}")
    C2 = C * C
    best = None
    for groups in _partitions(list(range(n))):
        inside = sum(C2[np.ix_(g, g)].sum() for g in groups)
        if best is None or inside > best[0]:
            best = (inside, groups)
    perm = np.array([i for g in best[1] for i in g])
    return Pooling(perm=perm, objective=off_block_energy(C[np.ix_(perm, perm)]))


def isa_loglik(W, Z, K, eps=1e-8) -> float:
    """Unnormalised log-likelihood ``sum_j sum_k -sqrt(u_k(j) + eps)``."""
    Y = W @ Z
    U = (Y * Y).reshape(K, 3, -1).sum(axis=1)
    return float(-np.sqrt(U + eps).sum())


def _projectors(W, K):
    Wk = W.reshape(K, 3, -1)
    return np.einsum("kai,kaj->kij", Wk, Wk)


def _isa_restart(Z, K, seed, cfg):
    W = np.ascontiguousarray(random_orthogonal(3 * K, np.random.default_rng(seed)))
    P = _projectors(W, K)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        W_new, _ = isa_sweep(W, Z, K, cfg.eps)
        W = np.ascontiguousarray(sym_decorrelate(W_new))
        P_new = _projectors(W, K)
        change = np.max(np.abs(P_new - P))
        P = P_new
        if change < cfg.tol:
            converged = True
            break
    return W, it, converged


def fast_isa(Bp, K: int, cfg: IsaConfig = IsaConfig(), Mp=None, dW=None) -> SubspaceSeparation:
    """FastISA with multiple random starts; keeps the most likely solution.

    Parameters
    ----------
    Bp : ndarray, shape (3K, J)
        Whitened non-rigid basis (``Bp @ Bp.T / J = I``).
    K : int
    cfg : IsaConfig
    Mp : ndarray, shape (2I, 3K), optional
        Truncated motion; ``M_isa = Mp @ A_isa``. Without it ``M_isa`` is
        ``A_isa`` itself (mixing in whitened coordinates).
    dW : ndarray, shape (2I, J), optional
        Non-rigid measurements for the mode covariance; defaults to
        ``Mp @ Bp``.
    """
    Bp = np.asarray(Bp, dtype=float)
    n, J = Bp.shape
    if n != 3 * K:
        raise ConfigError(f"Bp has {n} rows, expected 3K = {3 * K}")
    if cfg.restarts < 1:
        raise ConfigError("FastISA needs at least one restart")
    check_whitened(Bp)
    Z = np.ascontiguousarray(Bp)
    runs = []
    for r in range(cfg.restarts):
        seed = cfg.base_seed + r
        W, it, conv = _isa_restart(Z, K, seed, cfg)
        runs.append(dict(seed=seed, W=W, iterations=it, converged=conv,
                         loglik=isa_loglik(W, Z, K, cfg.eps)))
    if not any(r["converged"] for r in runs):
        warnings.warn("no FastISA restart converged; returning the most likely one",
                      ConvergenceWarning, stacklevel=2)
    # max likelihood, lowest seed on ties (runs are in seed order)
    best = max(runs, key=lambda r: (r["loglik"], -r["seed"]))
    W = best["W"]
    A_isa = W.T.copy()
    Mp_ = A_isa if Mp is None else np.asarray(Mp, dtype=float) @ A_isa
    B_isa = W @ Bp
    if dW is None:
        dW = Bp if Mp is None else np.asarray(Mp) @ Bp
    diag = dict(
        method="isa1",
        seed=best["seed"],
        iterations=best["iterations"],
        converged=best["converged"],
        loglik=best["loglik"],
        restart_logliks=[r["loglik"] for r in runs],
        restart_converged=[r["converged"] for r in runs],
    )
    return SubspaceSeparation(K=K, A_isa=A_isa, M_isa=Mp_, B_isa=B_isa,
                              C=mode_covariance(B_isa, dW).C, diagnostics=diag)


def pool_to_separation(icares: IcaResult, pooling: Pooling, Mp, Bp, C) -> SubspaceSeparation:
    """Group ICA components into subspaces: ``A_isa^T = P A_ica^T``."""
    perm = np.asarray(pooling.perm)
    A_ica = np.asarray(icares.A_ica, dtype=float)
    n = A_ica.shape[0]
    if sorted(perm.tolist()) != list(range(n)) or n % 3:
        raise ConfigError("pooling permutation does not match the ICA dimension")
    A_isa = A_ica[:, perm]
    B_isa = A_isa.T @ np.asarray(Bp, dtype=float)
    M_isa = np.asarray(Mp, dtype=float) @ A_isa
    Cm = _as_matrix(C)
    diag = dict(
        method="isa2",
        seed=icares.seed,
        iterations=icares.iterations,
        converged=icares.converged,
        perm=perm.tolist(),
        pooling_objective=pooling.objective,
    )
    return SubspaceSeparation(K=n // 3, A_isa=A_isa, M_isa=M_isa, B_isa=B_isa,
                              C=Cm[np.ix_(perm, perm)], diagnostics=diag)
