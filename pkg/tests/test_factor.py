import warnings

import numpy as np
import pytest

from nrsfm_isa import factor
from nrsfm_isa.errors import ConfigError, DegeneracyWarning, InputError
from nrsfm_isa.synth import generate


class TestCenter:
    def test_identical_columns(self, rng):
        col = rng.standard_normal(8)
        m = factor.center(np.tile(col[:, None], (1, 6)))
        np.testing.assert_allclose(m.W, 0, atol=1e-15)
        np.testing.assert_allclose(m.translations, col.reshape(4, 2))

    def test_idempotent_on_zero_mean(self, rng):
        X = rng.standard_normal((6, 9))
        X -= X.mean(axis=1, keepdims=True)
        m = factor.center(X)
        np.testing.assert_allclose(m.W, X, atol=1e-15)
        np.testing.assert_allclose(m.translations, 0, atol=1e-15)

    def test_loop_oracle(self, rng):
        X = rng.standard_normal((4, 5))
        m = factor.center(X)
        for r in range(4):
            mean = sum(X[r]) / 5
            for c in range(5):
                assert abs(m.W[r, c] - (X[r, c] - mean)) < 1e-15

    def test_rejects_non_finite(self):
        X = np.zeros((4, 5))
        X[1, 2] = np.nan
        with pytest.raises(InputError, match="row 1, column 2"):
            factor.center(X)

    def test_rejects_odd_rows(self):
        with pytest.raises(InputError):
            factor.center(np.zeros((3, 5)))

    def test_outputs_read_only(self, rng):
        m = factor.center(rng.standard_normal((4, 5)))
        with pytest.raises(ValueError):
            m.W[0, 0] = 1.0


class TestRigid:
    def test_rank3_is_exact(self, rng):
        W = rng.standard_normal((12, 3)) @ rng.standard_normal((3, 20))
        m = factor.center(W)
        _, W0 = factor.rigid_factorize(m)
        assert np.linalg.norm(m.W - W0) <= 1e-9 * np.linalg.norm(m.W)

    def test_zero(self):
        m = factor.center(np.zeros((6, 8)))
        with pytest.warns(DegeneracyWarning):
            rigid, W0 = factor.rigid_factorize(m)
        assert not rigid.M0.any() and not rigid.B0.any() and not W0.any()
        assert rigid.rank == 0

    def test_full_svd_oracle(self, rng):
        m = factor.center(rng.standard_normal((20, 20)))
        rigid, W0 = factor.rigid_factorize(m)
        s = np.linalg.svd(m.W, compute_uv=False)
        np.testing.assert_allclose(np.sum((m.W - W0) ** 2), np.sum(s[3:] ** 2), rtol=1e-12)
        J = m.W.shape[1]
        np.testing.assert_allclose(rigid.B0 @ rigid.B0.T / J, np.eye(3), atol=1e-12)

    def test_sign_convention(self, rng):
        m = factor.center(rng.standard_normal((10, 12)))
        rigid, _ = factor.rigid_factorize(m)
        idx = np.argmax(np.abs(rigid.B0), axis=1)
        assert np.all(rigid.B0[np.arange(3), idx] > 0)

    def test_too_small(self):
        with pytest.raises(ConfigError):
            factor.rigid_factorize(factor.center(np.ones((2, 5))))


class TestResidual:
    def test_trivial_cases(self, rng):
        m = factor.center(rng.standard_normal((6, 7)))
        assert not factor.nonrigid_residual(m, m.W).any()
        np.testing.assert_array_equal(factor.nonrigid_residual(m, np.zeros_like(m.W)), m.W)

    def test_loop_oracle(self, rng):
        m = factor.center(rng.standard_normal((4, 3)))
        W0 = rng.standard_normal((4, 3))
        dW = factor.nonrigid_residual(m, W0)
        for r in range(4):
            for c in range(3):
                assert dW[r, c] == m.W[r, c] - W0[r, c]

    def test_shape_mismatch(self, rng):
        m = factor.center(rng.standard_normal((4, 3)))
        with pytest.raises(ConfigError):
            factor.nonrigid_residual(m, np.zeros((4, 4)))


class TestTruncate:
    def test_exact_rank(self, rng):
        dW = rng.standard_normal((20, 6)) @ rng.standard_normal((6, 30))
        tf = factor.truncate(dW, 2)
        assert tf.discarded_energy <= 1e-18 * np.sum(dW ** 2)
        np.testing.assert_allclose(tf.Mp @ tf.Bp, dW, atol=1e-10)

    def test_full_svd_oracle(self, rng):
        dW = rng.standard_normal((16, 25))
        tf = factor.truncate(dW, 2)
        s = np.linalg.svd(dW, compute_uv=False)
        err = np.sum((dW - tf.Mp @ tf.Bp) ** 2)
        np.testing.assert_allclose(err, np.sum(s[6:] ** 2), rtol=1e-10)
        np.testing.assert_allclose(tf.discarded_energy, np.sum(s[6:] ** 2), rtol=1e-12)
        np.testing.assert_allclose(tf.Bp @ tf.Bp.T / 25, np.eye(6), atol=1e-12)

    def test_rank_five_scene(self):
        # rigid rank 3 plus planar deformation: centred tracks of rank 5
        scene = generate(30, 60, 1, seed=2, deformation_rank=2)
        m = factor.center(scene.W_raw)
        assert np.linalg.matrix_rank(m.W, tol=1e-9 * np.linalg.norm(m.W, 2)) == 5
        rigid, W0 = factor.rigid_factorize(m)
        dW = factor.nonrigid_residual(m, W0)
        with pytest.warns(DegeneracyWarning):
            tf = factor.truncate(dW, 1, scale=np.linalg.norm(m.W, 2), exclude=rigid.B0)
        assert tf.effective_rank == 2
        G = tf.Bp @ tf.Bp.T / 60
        np.testing.assert_allclose(G, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(tf.Bp @ rigid.B0.T, 0, atol=1e-8)
        np.testing.assert_allclose(tf.Mp @ tf.Bp, dW, atol=1e-10)

    def test_rank_guard(self, rng):
        with pytest.raises(ConfigError, match="3K"):
            factor.truncate(rng.standard_normal((6, 20)), 3)

    def test_zero_input(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            tf = factor.truncate(np.zeros((10, 12)), 1)
        assert tf.effective_rank == 0
        assert not tf.Mp.any()
        np.testing.assert_allclose(tf.Bp @ tf.Bp.T / 12, np.eye(3), atol=1e-12)
