"""End-to-end reconstruction and reprojection metrics."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import factor
from .block import IrlsConfig, irls_recover
from .errors import ConfigError, NrsfmError
from .ica import IcaConfig, fast_ica
from .isa import IsaConfig, fast_isa, greedy_pool, mode_covariance, off_block_energy, pool_to_separation
from .model import MeasurementSet, NonRigidModel, reproject
from .refine import RefineConfig, refine_als, target_matrix

METHODS = ("isa1", "isa2")


@dataclass(frozen=True)
class PipelineConfig:
    K: int
    method: str = "isa2"
    rank_tol: float = factor.DEFAULT_RANK_TOL
    ica: IcaConfig = field(default_factory=IcaConfig)
    isa: IsaConfig = field(default_factory=IsaConfig)
    irls: IrlsConfig = field(default_factory=IrlsConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class EvalReport:
    """Reprojection quality of a model against centred tracks.

    ``inverse_snr_percent`` is ``100 ||W - W_hat||_F / ||W||_F``.
    ``per_frame_rmse`` is the root mean squared point distance per image.
    """

    inverse_snr_percent: float
    per_frame_rmse: list
    off_block_energy_ratio: float
    timings: dict = field(default_factory=dict, compare=False)

    def as_dict(self, timings=True):
        out = dict(
            inverse_snr_percent=self.inverse_snr_percent,
            per_frame_rmse=list(self.per_frame_rmse),
            off_block_energy_ratio=self.off_block_energy_ratio,
        )
        if timings:
            out["timings"] = dict(self.timings)
        return out


class StageError(NrsfmError):
    """A pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage, err):
        self.stage = stage
        self.original = err
        self.exit_code = getattr(err, "exit_code", 4)
        super().__init__(f"[{stage}] {err}")


def inverse_snr(W, What) -> float:
    """Relative reprojection error in percent."""
    W = np.asarray(W, dtype=float)
    What = np.asarray(What, dtype=float)
    if W.shape != What.shape:
        raise ConfigError(f"shape mismatch {W.shape} vs {What.shape}")
    ref = np.linalg.norm(W)
    if ref == 0:
        raise ConfigError("inverse SNR undefined for an all-zero measurement matrix")
    return float(100.0 * np.linalg.norm(W - What) / ref)


def per_frame_rmse(W, What) -> list:
    R = (np.asarray(W) - np.asarray(What)).reshape(-1, 2, np.shape(W)[1])
    return np.sqrt(np.mean(np.sum(R * R, axis=1), axis=1)).tolist()


def off_block_ratio(C) -> float:
    total = float(np.sum(np.asarray(C) ** 2))
    return off_block_energy(C) / total if total > 0 else 0.0


def evaluate(m: MeasurementSet, model: NonRigidModel, raw=False, timings=None) -> EvalReport:
    """Score ``model`` against the tracks (centred unless ``raw``)."""
    if model.image_count != m.image_count or model.point_count != m.point_count:
        raise ConfigError(
            f"model is {model.image_count} images x {model.point_count} points, "
            f"tracks are {m.image_count} x {m.point_count}"
        )
    What = reproject(model, with_translation=raw)
    W = m.W_raw if raw else m.W
    return EvalReport(
        inverse_snr_percent=inverse_snr(W, What),
        per_frame_rmse=per_frame_rmse(W, What),
        off_block_energy_ratio=off_block_ratio(model.separation.C),
        timings=dict(timings or {}),
    )


class _Stages:
    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except NrsfmError as err:
            raise StageError(name, err) from err
        except np.linalg.LinAlgError as err:
            raise StageError(name, err) from err
        finally:
            self.timings[name] = time.perf_counter() - t0


def reconstruct(m: MeasurementSet, cfg: PipelineConfig, return_stages=False):
    """Rigid factorisation, ISA, block recovery and refinement.

    Parameters
    ----------
    m : MeasurementSet
    cfg : PipelineConfig
    return_stages : bool
        Also return a dict with the intermediate results (truncated factor,
        the IRLS-initialised model, refinement trace, timings).
    """
    K = cfg.K
    n2I, J = m.W.shape
    if 3 * K + 3 > min(n2I, J):
        raise ConfigError(
            f"K = {K} needs 3K + 3 = {3 * K + 3} <= min(2I, J) = {min(n2I, J)}; "
            f"use K <= {min(n2I, J) // 3 - 1}"
        )
    st = _Stages()
    rigid, W0 = st.run("rigid", factor.rigid_factorize, m, cfg.rank_tol)
    dW = st.run("residual", factor.nonrigid_residual, m, W0)
    sigma1 = float(np.linalg.norm(m.W, 2)) if m.W.any() else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tf = st.run("truncate", factor.truncate, dW, K, cfg.rank_tol,
                    scale=sigma1, exclude=rigid.B0)
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)

    if cfg.method == "isa1":
        isa_cfg = IsaConfig(restarts=cfg.isa.restarts, base_seed=cfg.seed, tol=cfg.isa.tol,
                            max_iter=cfg.isa.max_iter, eps=cfg.isa.eps)
        sep = st.run("isa", fast_isa, tf.Bp, K, isa_cfg, tf.Mp, dW)
    else:
        ica_cfg = IcaConfig(contrast=cfg.ica.contrast, tol=cfg.ica.tol,
                            max_iter=cfg.ica.max_iter, seed=cfg.seed)
        icares = st.run("ica", fast_ica, tf.Bp, ica_cfg)
        B_ica = icares.A_ica.T @ tf.Bp
        cov = st.run("mode_covariance", mode_covariance, B_ica, dW)
        pooling = st.run("pooling", greedy_pool, cov, K)
        sep = st.run("isa", pool_to_separation, icares, pooling, tf.Mp, tf.Bp, cov)

    init = st.run("block", irls_recover, sep.M_isa, rigid.M0, cfg.irls)
    T = st.run("target", target_matrix, dW, sep.B_isa)
    blocks, trace = st.run("refine", refine_als, T, rigid.M0, init, cfg.refine)

    diag = dict(
        effective_rank=tf.effective_rank,
        discarded_energy=tf.discarded_energy,
        rigid_rank=rigid.rank,
        separation=sep.diagnostics,
        irls=init.diagnostics,
        refine=blocks.diagnostics,
    )
    model = NonRigidModel(rigid=rigid, separation=sep, blocks=blocks,
                          translations=m.translations, diagnostics=diag)
    if not return_stages:
        return model
    init_model = NonRigidModel(rigid=rigid, separation=sep, blocks=init,
                               translations=m.translations)
    return model, dict(truncated=tf, init_model=init_model, trace=trace,
                       timings=dict(st.timings))
