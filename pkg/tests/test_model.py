import numpy as np
import pytest

from nrsfm_isa.errors import ConfigError, SingularAffinityError
from nrsfm_isa.model import (
    BlockMotion,
    NonRigidModel,
    RigidFactor,
    SubspaceSeparation,
    block_diag_stack,
    motion_from_alpha,
    reproject,
)
from nrsfm_isa.synth import generate


def _model(M0, B0, D, alpha, B_isa, D_inv=None, t=None):
    I, K = alpha.shape
    sep = SubspaceSeparation(K=K, A_isa=np.eye(3 * K), M_isa=np.zeros((2 * I, 3 * K)),
                             B_isa=B_isa, C=np.zeros((3 * K, 3 * K)))
    return NonRigidModel(RigidFactor(M0, B0), sep, BlockMotion(D, alpha, D_inv),
                         np.zeros((I, 2)) if t is None else t)


class TestMotionFromAlpha:
    def test_unit_weights_single_subspace(self, rng):
        M0 = rng.standard_normal((10, 3))
        np.testing.assert_array_equal(motion_from_alpha(M0, np.ones((5, 1))), M0)

    def test_zero_weights(self, rng):
        M0 = rng.standard_normal((10, 3))
        assert not motion_from_alpha(M0, np.zeros((5, 3))).any()

    def test_loop_oracle(self, rng):
        I, K = 2, 2
        M0 = rng.standard_normal((2 * I, 3))
        alpha = rng.standard_normal((I, K))
        out = motion_from_alpha(M0, alpha)
        for i in range(I):
            for k in range(K):
                for r in range(2):
                    for c in range(3):
                        assert out[2 * i + r, 3 * k + c] == alpha[i, k] * M0[2 * i + r, c]

    def test_shape_mismatch(self, rng):
        with pytest.raises(ConfigError):
            motion_from_alpha(np.zeros((6, 3)), np.zeros((2, 1)))


class TestReproject:
    def test_rigid_only(self, rng):
        I, J, K = 4, 7, 2
        M0, B0 = rng.standard_normal((2 * I, 3)), rng.standard_normal((3, J))
        m = _model(M0, B0, np.stack([np.eye(3)] * K), np.zeros((I, K)),
                   rng.standard_normal((3 * K, J)))
        np.testing.assert_allclose(reproject(m), M0 @ B0, rtol=0, atol=1e-13)

    def test_synthetic_truth(self):
        scene = generate(20, 64, 2, seed=3)
        W = reproject(scene.truth_model, with_translation=True)
        assert np.linalg.norm(W - scene.W_raw) <= 1e-8 * np.linalg.norm(scene.W_raw)

    def test_pointwise_single_subspace(self, rng):
        I, J = 3, 5
        M0, B0 = rng.standard_normal((2 * I, 3)), rng.standard_normal((3, J))
        B1 = rng.standard_normal((3, J))
        alpha = rng.standard_normal((I, 1))
        t = rng.standard_normal((I, 2))
        m = _model(M0, B0, np.eye(3)[None], alpha, B1, t=t)
        W = reproject(m, with_translation=True)
        for i in range(I):
            for j in range(J):
                p = M0[2 * i:2 * i + 2] @ (B0[:, j] + alpha[i, 0] * B1[:, j]) + t[i]
                np.testing.assert_allclose(W[2 * i:2 * i + 2, j], p, rtol=1e-13, atol=1e-13)

    def test_singular_without_inverse_raises(self, rng):
        D = np.zeros((1, 3, 3))
        D[0, 0, 0] = 1.0
        m = _model(np.ones((4, 3)), np.ones((3, 5)), D, np.ones((2, 1)), np.ones((3, 5)))
        with pytest.raises(SingularAffinityError):
            reproject(m)

    def test_stored_inverse_avoids_inversion(self, rng):
        E = np.zeros((1, 3, 3))
        E[0, 0, 0] = 1.0
        m = _model(np.ones((4, 3)), np.ones((3, 5)), np.linalg.pinv(E), np.ones((2, 1)),
                   np.ones((3, 5)), D_inv=E)
        assert np.all(np.isfinite(reproject(m)))


def test_block_diag_stack(rng):
    mats = rng.standard_normal((3, 3, 3))
    out = block_diag_stack(mats)
    import scipy.linalg
    np.testing.assert_array_equal(out, scipy.linalg.block_diag(*mats))


def test_conditions_and_inverse(rng):
    D = rng.standard_normal((2, 3, 3))
    bm = BlockMotion(D, np.ones((4, 2)))
    np.testing.assert_allclose(np.einsum("kab,kbc->kac", D, bm.inverse()),
                               np.stack([np.eye(3)] * 2), atol=1e-10)
    assert np.all(bm.conditions() >= 1)
