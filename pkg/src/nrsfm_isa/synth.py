"""Synthetic scenes with known independent basis shapes and affine cameras."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .isa import mode_covariance
from .model import (
    BlockMotion,
    NonRigidModel,
    RigidFactor,
    SubspaceSeparation,
    block_diag_stack,
    motion_from_alpha,
    reproject,
)
from .refine import gauge

FAMILIES = ("laplacian-iid", "spherical-subspace", "mixed")
SAMPLINGS = ("product", "iid")
MIN_FACTOR = 4
AMPLITUDE_DECAY = 0.8


@dataclass(frozen=True)
class SynthScene:
    truth_model: NonRigidModel
    W_raw: np.ndarray
    noise_sigma: float
    seed: int
    source_family: str
    sampling: str = "product"


def _spherical_block(n, rng):
    direction = rng.standard_normal((3, n))
    direction /= np.linalg.norm(direction, axis=0)
    return direction * np.abs(rng.laplace(size=n))


def _family_block(family, k, n, rng):
    if family == "spherical-subspace" or (family == "mixed" and k % 2 == 0):
        return _spherical_block(n, rng)
    return rng.laplace(size=(3, n))


def balanced_factors(J, K, minimum=MIN_FACTOR):
    """Factor ``J`` into K integers >= ``minimum`` with the largest smallest factor.

    Returns None when no such factorisation exists.
    """
    best = None

    def search(rest, parts, lo):
        nonlocal best
        if len(parts) == K - 1:
            if rest >= lo:
                cand = parts + [rest]
                if best is None or min(cand) > min(best):
                    best = cand
            return
        d = lo
        while d ** (K - len(parts)) <= rest:
            if rest % d == 0:
                search(rest // d, parts + [d], d)
            d += 1

    search(J, [], minimum)
    return best


def draw_sources(family, K, J, rng, sampling="product"):
    """Raw ``3K x J`` source rows, independent across 3-row blocks.

    With ``sampling="product"`` the J points form a (shuffled) Cartesian grid
    over one small sample set per subspace, so the empirical distribution is
    exactly a product across subspaces: sample means of any function of one
    block times any function of another factorise. ``"iid"`` draws every
    point independently. Product sampling falls back to iid (with a warning)
    when J has no factorisation into K factors of at least 4.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown source family {family!r}; choose from {FAMILIES}")
    if sampling not in SAMPLINGS:
        raise ConfigError(f"unknown sampling {sampling!r}; choose from {SAMPLINGS}")
    sizes = balanced_factors(J, K) if sampling == "product" else None
    if sampling == "product" and sizes is None:
        warnings.warn(f"J = {J} has no factorisation into {K} sets of >= {MIN_FACTOR}; "
                      "drawing sources i.i.d.", stacklevel=3)
    if sizes is None:
        return np.vstack([_family_block(family, k, J, rng) for k in range(K)])
    grid = np.unravel_index(rng.permutation(J), sizes)
    blocks = []
    for k, n in enumerate(sizes):
        S = _family_block(family, k, n, rng)
        S = S - S.mean(axis=1, keepdims=True)
        blocks.append(S[:, grid[k]])
    return np.vstack(blocks)


def whiten_rows(S):
    """Centre rows and apply symmetric whitening so ``S S^T / J = I``."""
    S = S - S.mean(axis=1, keepdims=True)
    J = S.shape[1]
    w, V = np.linalg.eigh(S @ S.T / J)
    return (V * (1.0 / np.sqrt(w))) @ V.T @ S


def random_affine_camera(rng, low=0.5, high=1.5):
    """2x3 matrix with singular values drawn uniformly from [low, high]."""
    U, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    V, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return U @ np.diag(rng.uniform(low, high, 2)) @ V[:2]


def random_shape_map(rng, rank=3):
    """3x3 map with unit-norm rows; rank < 3 gives a degenerate (planar) basis."""
    U, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    V, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    s = rng.uniform(0.5, 1.5, 3)
    s[rank:] = 0.0
    E = U @ np.diag(s) @ V.T
    return E / np.linalg.norm(E, axis=1, keepdims=True)


def decouple_coefficients(alpha, cams):
    """Project the coefficient columns onto the exact-independence constraints.

    Column k is made orthogonal (over images) to

    * the entries of ``M^iT M^i``: the rigid and non-rigid column spaces of
      the tracks become orthogonal, so the rank-3 fit is exactly the mean
      shape term;
    * the column sums ``1^T M^i``: the mean term of the mode covariance
      vanishes;
    * the entries of ``alpha_l^i M^iT M^i`` for every earlier column l: the
      cross-subspace blocks of the mode covariance vanish.

    Columns whose constraint count reaches the number of images are left as
    they are.
    """
    alpha = np.array(alpha, dtype=float)
    I, K = alpha.shape
    G = np.einsum("iab,iac->ibc", cams, cams)
    iu = np.triu_indices(3)
    gram = G[:, iu[0], iu[1]]  # (I, 6)
    base = np.hstack([gram, cams.sum(axis=1)])  # (I, 9)
    for k in range(K):
        cons = np.hstack([base] + [gram * alpha[:, [l]] for l in range(k)])
        if cons.shape[1] >= I:
            continue
        Q, _ = np.linalg.qr(cons)
        alpha[:, k] -= Q @ (Q.T @ alpha[:, k])
    return alpha


def generate(I, J, K, noise_sigma=0.0, source_family="spherical-subspace", seed=0,
             *, amplitude=0.2, deformation_rank=3, sampling="product",
             exact_statistics=True) -> SynthScene:
    """Forward-evaluate the affine non-rigid model on random ground truth.

    Parameters
    ----------
    I, J, K : int
        Images, points and non-rigid subspaces.
    noise_sigma : float
        Standard deviation of i.i.d. Gaussian noise added to the tracks.
    source_family : {"laplacian-iid", "spherical-subspace", "mixed"}
    seed : int
    amplitude : float
        Coefficient scale of the first subspace; subspace k uses
        ``amplitude * 0.8**k``. Zero gives a rigid scene.
    deformation_rank : int
        Rank of every basis shape (3 is generic; 2 gives planar deformations).
    sampling : {"product", "iid"}
        How points sample the sources, see :func:`draw_sources`.
    exact_statistics : bool
        Project the coefficients with :func:`decouple_coefficients` so the
        rigid/non-rigid split and the mode covariance hold exactly.
    """
    if K < 1 or I < 2:
        raise ConfigError("need K >= 1 and I >= 2")
    if J < 3 * K + 3:
        raise ConfigError(
            f"J = {J} < 3K + 3 = {3 * K + 3}: the rank constraint cannot be met"
        )
    if not 1 <= deformation_rank <= 3:
        raise ConfigError("deformation_rank must be 1, 2 or 3")
    rng = np.random.default_rng(seed)

    B_isa = whiten_rows(draw_sources(source_family, K, J, rng, sampling))

    # mean shape: points near a unit sphere, orthogonal to the non-rigid rows
    B0 = rng.standard_normal((3, J))
    B0 = B0 / np.linalg.norm(B0, axis=0) + 0.1 * rng.standard_normal((3, J))
    B0 -= B0.mean(axis=1, keepdims=True)
    B0 -= (B0 @ B_isa.T / J) @ B_isa

    cams = np.stack([random_affine_camera(rng) for _ in range(I)])
    M0 = cams.reshape(2 * I, 3)
    E = np.stack([random_shape_map(rng, deformation_rank) for _ in range(K)])
    alpha = rng.standard_normal((I, K)) * (amplitude * AMPLITUDE_DECAY ** np.arange(K))
    if exact_statistics:
        alpha = decouple_coefficients(alpha, cams)
    translations = rng.normal(0.0, 10.0, size=(I, 2))

    D, alpha_g, E_g, _ = gauge(E, alpha)
    M_isa = motion_from_alpha(M0, alpha_g) @ block_diag_stack(E_g)
    dW = M_isa @ B_isa
    rigid = RigidFactor(M0=M0, B0=B0)
    sep = SubspaceSeparation(K=K, A_isa=np.eye(3 * K), M_isa=M_isa, B_isa=B_isa,
                             C=mode_covariance(B_isa, dW).C)
    truth = NonRigidModel(rigid=rigid, separation=sep,
                          blocks=BlockMotion(D=D, alpha=alpha_g, D_inv=E_g),
                          translations=translations)
    W_raw = reproject(truth, with_translation=True)
    if noise_sigma > 0:
        W_raw = W_raw + rng.normal(0.0, noise_sigma, size=W_raw.shape)
    if amplitude > 0:
        s_rigid = np.linalg.svd(M0 @ B0, compute_uv=False)[2]
        s_non = np.linalg.svd(dW, compute_uv=False)[0]
        if s_non >= s_rigid:
            warnings.warn("non-rigid energy exceeds the weakest rigid direction; "
                          "the rank-3 fit will mix rigid and non-rigid parts", stacklevel=2)
    return SynthScene(truth_model=truth, W_raw=W_raw, noise_sigma=float(noise_sigma),
                      seed=seed, source_family=source_family, sampling=sampling)
