"""Command-line entry point: ``nrsfm reconstruct | synth | eval``.

Exit codes: 0 success, 1 a requested check failed, 2 unreadable or malformed
input or command line, 3 dimension or configuration error, 4 numerical
failure. Errors are
reported on stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings

import numpy as np

from . import factor
from .block import IrlsConfig
from .errors import ConfigError, InputError, NrsfmError
from .evaluation import EvalReport, PipelineConfig, evaluate, reconstruct
from .formats import (
    _jsonable,
    atomic_write,
    format_basis_shapes,
    format_tracks,
    load_model,
    read_tracks,
    save_model,
    write_matrix_csv,
    write_tracks,
)
from .ica import IcaConfig
from .isa import IsaConfig
from .model import reproject
from .refine import RefineConfig
from .synth import FAMILIES, SAMPLINGS, generate

RANK_CHECK_TOL = 1e-8


class UsageError(InputError):
    """Bad command line; exits 2 like other parse failures."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("NRSFM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as err:
        raise ConfigError(f"NRSFM_SEED must be an integer, got {env!r}") from err


def _emit_report(report: EvalReport, args, extra=None):
    doc = report.as_dict()
    if extra:
        doc.update(extra)
    if getattr(args, "report_json", None):
        atomic_write(args.report_json, json.dumps(doc, default=_jsonable, indent=1) + "\n")
    if args.json:
        print(json.dumps(doc, default=_jsonable))
        return
    rmse = np.asarray(report.per_frame_rmse)
    rows = [
        ("inverse SNR (%)", f"{report.inverse_snr_percent:.6g}"),
        ("per-frame RMSE mean", f"{rmse.mean():.6g}"),
        ("per-frame RMSE max", f"{rmse.max():.6g}"),
        ("off-block energy ratio", f"{report.off_block_energy_ratio:.6g}"),
    ]
    for key, val in (extra or {}).items():
        rows.append((key, str(val)))
    for name, secs in report.timings.items():
        rows.append((f"time {name} (s)", f"{secs:.3f}"))
    width = max(len(r[0]) for r in rows)
    for name, val in rows:
        print(f"{name:<{width}}  {val}")


def _pipeline_config(args) -> PipelineConfig:
    ica = IcaConfig(contrast=args.contrast, tol=args.ica_tol, max_iter=args.ica_max_iter)
    isa = IsaConfig(restarts=args.restarts, tol=args.isa_tol, max_iter=args.isa_max_iter)
    irls = IrlsConfig(tol=args.irls_tol, max_iter=args.irls_max_iter)
    ref = RefineConfig(tol=args.refine_tol, max_iter=args.refine_max_iter)
    return PipelineConfig(K=args.k, method=args.method, rank_tol=args.rank_tol, ica=ica,
                          isa=isa, irls=irls, refine=ref, seed=_seed(args.seed))


def cmd_reconstruct(args):
    W_raw, _ = read_tracks(args.tracks)
    m = factor.center(W_raw)
    cfg = _pipeline_config(args)
    model, stages = reconstruct(m, cfg, return_stages=True)
    if args.out:
        save_model(args.out, model, dataclasses.asdict(cfg))
    _emit_report(evaluate(m, model, timings=stages["timings"]), args)
    return 0


def cmd_synth(args):
    scene = generate(args.i, args.j, args.k, noise_sigma=args.noise, source_family=args.family,
                     seed=_seed(args.seed), amplitude=args.amplitude,
                     deformation_rank=args.deformation_rank, sampling=args.sampling)
    if args.out_tracks:
        write_tracks(args.out_tracks, scene.W_raw)
    else:
        sys.stdout.write(format_tracks(scene.W_raw))
    if args.out_truth:
        meta = dict(I=args.i, J=args.j, K=args.k, noise=args.noise, family=args.family,
                    seed=scene.seed, amplitude=args.amplitude,
                    deformation_rank=args.deformation_rank, sampling=args.sampling)
        save_model(args.out_truth, scene.truth_model, {"synth": meta})
    return 0


def rank_check(W, K, tol=RANK_CHECK_TOL):
    """``sigma_{3K+4} / sigma_1`` of the centred tracks and whether it is below ``tol``."""
    s = np.linalg.svd(W, compute_uv=False)
    r = 3 * K + 3
    ratio = float(s[r] / s[0]) if len(s) > r and s[0] > 0 else 0.0
    return ratio, ratio < tol


def cmd_eval(args):
    W_raw, _ = read_tracks(args.tracks)
    m = factor.center(W_raw)
    if args.model is None:
        if not args.check_rank:
            raise ConfigError("eval needs --model or --check-rank")
        if args.k is None:
            raise ConfigError("--check-rank without --model needs --k")
        ratio, ok = rank_check(m.W, args.k)
        doc = dict(K=args.k, sigma_ratio=ratio, tol=RANK_CHECK_TOL, passed=ok)
        print(json.dumps(doc) if args.json else
              f"rank <= {3 * args.k + 3}: {'PASS' if ok else 'FAIL'} "
              f"(sigma_{3 * args.k + 4}/sigma_1 = {ratio:.3g})")
        return 0 if ok else 1
    model, _ = load_model(args.model)
    if args.k is not None and args.k != model.K:
        raise ConfigError(f"--k {args.k} disagrees with the model's K = {model.K}")
    report = evaluate(m, model, raw=args.raw)
    extra = {}
    ok = True
    if args.check_rank:
        ratio, ok = rank_check(m.W, model.K)
        extra = dict(rank_sigma_ratio=ratio, rank_check_passed=ok)
    if args.export_cov:
        C = model.separation.C
        write_matrix_csv(args.export_cov, C, f"mode covariance {C.shape[0]}x{C.shape[1]}")
    if args.export_reproj:
        write_tracks(args.export_reproj, reproject(model, with_translation=True))
    if args.export_basis:
        atomic_write(args.export_basis, format_basis_shapes(model))
    _emit_report(report, args, extra)
    return 0 if ok else 1


def build_parser():
    p = _Parser(prog="nrsfm", description="Non-rigid structure from motion by independent "
                "subspace analysis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("reconstruct", help="reconstruct a model from a track file")
    r.add_argument("tracks")
    r.add_argument("--k", type=int, required=True, help="number of non-rigid subspaces")
    r.add_argument("--method", choices=("isa1", "isa2"), default="isa2")
    r.add_argument("--seed", type=int, default=None, help="defaults to $NRSFM_SEED or 0")
    r.add_argument("--out", help="model file to write")
    r.add_argument("--report-json", help="also write the report as JSON here")
    r.add_argument("--json", action="store_true", help="print the report as JSON")
    r.add_argument("--rank-tol", type=float, default=factor.DEFAULT_RANK_TOL)
    r.add_argument("--contrast", choices=("tanh", "cube"), default=IcaConfig.contrast)
    r.add_argument("--ica-tol", type=float, default=IcaConfig.tol)
    r.add_argument("--ica-max-iter", type=int, default=IcaConfig.max_iter)
    r.add_argument("--restarts", type=int, default=IsaConfig.restarts)
    r.add_argument("--isa-tol", type=float, default=IsaConfig.tol)
    r.add_argument("--isa-max-iter", type=int, default=IsaConfig.max_iter)
    r.add_argument("--irls-tol", type=float, default=IrlsConfig.tol)
    r.add_argument("--irls-max-iter", type=int, default=IrlsConfig.max_iter)
    r.add_argument("--refine-tol", type=float, default=RefineConfig.tol)
    r.add_argument("--refine-max-iter", type=int, default=RefineConfig.max_iter)
    r.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("synth", help="generate a synthetic scene")
    s.add_argument("--i", type=int, required=True, help="images")
    s.add_argument("--j", type=int, required=True, help="points")
    s.add_argument("--k", type=int, required=True, help="non-rigid subspaces")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    s.add_argument("--family", choices=FAMILIES, default="spherical-subspace")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--amplitude", type=float, default=0.2)
    s.add_argument("--deformation-rank", type=int, default=3)
    s.add_argument("--sampling", choices=SAMPLINGS, default="product")
    s.add_argument("--out-tracks", help="track file (stdout if omitted)")
    s.add_argument("--out-truth", help="ground-truth model file")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score a model against tracks")
    e.add_argument("tracks")
    e.add_argument("--model")
    e.add_argument("--k", type=int)
    e.add_argument("--check-rank", action="store_true",
                   help=f"require sigma_(3K+4)/sigma_1 < {RANK_CHECK_TOL:g}")
    e.add_argument("--raw", action="store_true", help="score uncentred tracks")
    e.add_argument("--report-json")
    e.add_argument("--json", action="store_true")
    e.add_argument("--export-cov", help="CSV of the mode covariance")
    e.add_argument("--export-reproj", help="track file of the reprojections")
    e.add_argument("--export-basis", help="CSV of B0 and B0 +/- a_k B_k")
    e.set_defaults(func=cmd_eval)
    return p


def _fail(err, code):
    doc = {"error": type(err).__name__, "exit_code": code, "message": str(err)}
    stage = getattr(err, "stage", None)
    if stage:
        doc["stage"] = stage
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        return _fail(err, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        try:
            return args.func(args)
        except NrsfmError as err:
            return _fail(err, getattr(err, "exit_code", 4))
        except (np.linalg.LinAlgError, FloatingPointError) as err:
            return _fail(err, 4)
        except OSError as err:
            return _fail(InputError(str(err)), 2)


if __name__ == "__main__":
    sys.exit(main())
