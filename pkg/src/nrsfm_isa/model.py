"""Domain types and the reprojection algebra of the affine non-rigid model.

Conventions used throughout the package:

* measurement matrices are ``2I x J``; image ``i`` owns rows ``2i`` (x) and
  ``2i + 1`` (y), points are columns;
* the rigid motion ``M0`` is ``2I x 3`` and the mean shape ``B0`` is ``3 x J``;
* subspace affinities are stored blockwise as a ``(K, 3, 3)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, SingularAffinityError

#: condition number above which a 3x3 affinity is treated as singular
SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class MeasurementSet:
    """Raw and translation-corrected 2D tracks.

    Attributes
    ----------
    W_raw : ndarray, shape (2I, J)
        Tracks in pixel units.
    W : ndarray, shape (2I, J)
        Tracks with the per-image centroid removed.
    translations : ndarray, shape (I, 2)
        Per-image centroids.
    """

    W_raw: np.ndarray
    W: np.ndarray
    translations: np.ndarray

    @property
    def image_count(self) -> int:
        return self.W.shape[0] // 2

    @property
    def point_count(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class RigidFactor:
    """Rigid motion ``M0`` (2I x 3) and mean shape ``B0`` (3 x J)."""

    M0: np.ndarray
    B0: np.ndarray
    rank: int = 3


@dataclass(frozen=True)
class SubspaceSeparation:
    """Result of independent subspace analysis.

    ``M_isa @ B_isa`` reproduces the truncated non-rigid part and the rows of
    ``B_isa / sqrt(J)`` are orthonormal. ``A_isa`` is the orthogonal map with
    ``B_isa = A_isa.T @ Bp``.
    """

    K: int
    A_isa: np.ndarray
    M_isa: np.ndarray
    B_isa: np.ndarray
    C: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class BlockMotion:
    """Subspace affinities and mixing coefficients.

    Attributes
    ----------
    D : ndarray, shape (K, 3, 3)
        Affinities from the rigid frame to each independent subspace.
    alpha : ndarray, shape (I, K)
        Per-image coefficients.
    D_inv : ndarray, shape (K, 3, 3), optional
        Explicit inverses. Refinement optimises the inverses directly and
        stores them so that reprojection never has to invert a nearly
        singular ``D_k``.
    """

    D: np.ndarray
    alpha: np.ndarray
    D_inv: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return self.D.shape[0]

    def conditions(self) -> np.ndarray:
        """2-norm condition number of each ``D_k`` (inf when singular)."""
        out = np.empty(self.K)
        for k, Dk in enumerate(self.D):
            if not np.all(np.isfinite(Dk)):
                out[k] = np.inf
                continue
            s = np.linalg.svd(Dk, compute_uv=False)
            out[k] = s[0] / s[-1] if s[-1] > 0 else np.inf
        return out

    def inverse(self) -> np.ndarray:
        """Return ``D_k^{-1}`` for every block as a ``(K, 3, 3)`` array."""
        if self.D_inv is not None:
            return self.D_inv
        cond = self.conditions()
        for k, c in enumerate(cond):
            if not c < SINGULAR_CONDITION:
                raise SingularAffinityError(k, c)
        return np.linalg.inv(self.D)


@dataclass(frozen=True)
class NonRigidModel:
    """Complete affine non-rigid reconstruction."""

    rigid: RigidFactor
    separation: SubspaceSeparation
    blocks: BlockMotion
    translations: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return self.separation.K

    @property
    def image_count(self) -> int:
        return self.rigid.M0.shape[0] // 2

    @property
    def point_count(self) -> int:
        return self.rigid.B0.shape[1]

    def basis_shapes(self) -> np.ndarray:
        """Independent basis shapes in the rigid frame, ``(K, 3, J)``.

        The non-rigid term of image ``i`` is ``M0^i sum_k alpha_k^i B_k``.
        """
        E = self.blocks.inverse()
        Bs = self.separation.B_isa.reshape(self.K, 3, -1)
        return np.einsum("kab,kbj->kaj", E, Bs)


def motion_from_alpha(M0, alpha):
    """Build ``M0^alpha``: block (i, k) is ``alpha[i, k] * M0^i``."""
    M0 = np.asarray(M0, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    I, K = alpha.shape
    if M0.shape != (2 * I, 3):
        raise ConfigError(
            f"M0 has shape {M0.shape}, expected {(2 * I, 3)} for {I} images"
        )
    # (I, 2, 1, 3) * (I, 1, K, 1) -> (I, 2, K, 3)
    blocks = M0.reshape(I, 2, 1, 3) * alpha[:, None, :, None]
    return blocks.reshape(2 * I, 3 * K)


def assemble_motion(rigid: RigidFactor, blocks: BlockMotion) -> np.ndarray:
    """Motion matrix with the rigid projection repeated once per subspace."""
    return motion_from_alpha(rigid.M0, blocks.alpha)


def block_diag_stack(mats) -> np.ndarray:
    """Dense block-diagonal matrix from a ``(K, 3, 3)`` stack."""
    mats = np.asarray(mats)
    K = mats.shape[0]
    out = np.zeros((3 * K, 3 * K))
    for k in range(K):
        out[3 * k:3 * k + 3, 3 * k:3 * k + 3] = mats[k]
    return out


def nonrigid_prediction(M0, alpha, D_inv, B_isa) -> np.ndarray:
    """``M0^alpha D^{-1} B_isa`` evaluated blockwise."""
    I, K = np.shape(alpha)
    Bs = np.asarray(B_isa).reshape(K, 3, -1)
    # per-block shapes E_k B_k, then weight by alpha and project with M0^i
    shapes = np.einsum("kab,kbj->kaj", D_inv, Bs)
    M0 = np.asarray(M0).reshape(I, 2, 3)
    mixed = np.einsum("ik,kaj->iaj", alpha, shapes)
    return np.einsum("ira,iaj->irj", M0, mixed).reshape(2 * I, -1)


def reproject(model: NonRigidModel, with_translation: bool = False) -> np.ndarray:
    """Predicted measurement matrix ``M0 B0 + M0^alpha D^{-1} B_isa``.

    Parameters
    ----------
    model : NonRigidModel
    with_translation : bool
        Add the per-image translations back (raw pixel coordinates).

    Raises
    ------
    SingularAffinityError
        If some ``D_k`` is singular and no explicit inverse is stored.
    """
    rigid = model.rigid
    I = model.image_count
    if model.blocks.alpha.shape != (I, model.K):
        raise ConfigError("alpha shape does not match model dimensions")
    What = rigid.M0 @ rigid.B0
    What = What + nonrigid_prediction(
        rigid.M0, model.blocks.alpha, model.blocks.inverse(), model.separation.B_isa
    )
    if with_translation:
        What = What + np.asarray(model.translations).reshape(2 * I, 1)
    return What
