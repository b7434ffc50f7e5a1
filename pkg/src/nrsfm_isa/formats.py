"""Track CSV and model JSON files.

Track files start with a header line ``# I=<n> J=<m>`` (optionally followed
by ``frames=<id>,<id>,...``) and hold 2I comma-separated rows of J numbers:
the x row then the y row of every image. Numbers are written with 17
significant digits so they read back bit-identically.
"""

from __future__ import annotations

import json
import os
import re
import tempfile

import numpy as np

from .errors import InputError
from .model import BlockMotion, NonRigidModel, RigidFactor, SubspaceSeparation

MODEL_FORMAT = "nrsfm-isa-model"
MODEL_VERSION = 1
_HEADER = re.compile(r"^#\s*I=(\d+)\s+J=(\d+)(?:\s+frames=(\S+))?\s*$")


def atomic_write(path, text):
    """Write ``text`` to a temporary file next to ``path`` and rename it."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_rows(X):
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in np.asarray(X))


def format_tracks(W_raw, frame_ids=None) -> str:
    W_raw = np.asarray(W_raw, dtype=float)
    I, J = W_raw.shape[0] // 2, W_raw.shape[1]
    header = f"# I={I} J={J}"
    if frame_ids is not None:
        header += " frames=" + ",".join(str(f) for f in frame_ids)
    return header + "\n" + _fmt_rows(W_raw)


def write_tracks(path, W_raw, frame_ids=None):
    atomic_write(path, format_tracks(W_raw, frame_ids))


def read_tracks(path):
    """Parse a track file.

    Returns
    -------
    W_raw : ndarray, shape (2I, J)
    frame_ids : list of str or None

    Raises
    ------
    InputError
        Bad header, wrong row count, ragged or non-numeric rows. Messages
        give 1-based line numbers.
    """
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}") from err
    if not lines:
        raise InputError(f"{path}: empty file")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise InputError(f"{path}: line 1: expected header '# I=<n> J=<m>', got {lines[0]!r}")
    I, J = int(m.group(1)), int(m.group(2))
    frames = m.group(3).split(",") if m.group(3) else None
    if frames is not None and len(frames) != I:
        raise InputError(f"{path}: header lists {len(frames)} frame ids for I={I}")
    body = [(n, ln) for n, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != 2 * I:
        raise InputError(f"{path}: expected {2 * I} data rows for I={I}, found {len(body)}")
    W = np.empty((2 * I, J))
    for r, (lineno, ln) in enumerate(body):
        cells = ln.split(",")
        if len(cells) != J:
            raise InputError(
                f"{path}: line {lineno} (data row {r + 1}) has {len(cells)} values, expected {J}"
            )
        try:
            W[r] = [float(c) for c in cells]
        except ValueError as err:
            raise InputError(f"{path}: line {lineno} (data row {r + 1}): {err}") from err
        if not np.all(np.isfinite(W[r])):
            raise InputError(f"{path}: line {lineno} (data row {r + 1}) has non-finite values")
    return W, frames


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def model_to_dict(model: NonRigidModel, config=None) -> dict:
    sep, blocks, rigid = model.separation, model.blocks, model.rigid
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "I": model.image_count,
        "J": model.point_count,
        "K": model.K,
        "M0": rigid.M0,
        "B0": rigid.B0,
        "B_isa": sep.B_isa,
        "M_isa": sep.M_isa,
        "A_isa": sep.A_isa,
        "C": sep.C,
        "D": blocks.D,
        "D_inv": blocks.inverse(),
        "alpha": blocks.alpha,
        "translations": np.asarray(model.translations).reshape(-1, 2),
        "config": config or {},
        "diagnostics": model.diagnostics,
    }


def dumps_model(model: NonRigidModel, config=None) -> str:
    return json.dumps(model_to_dict(model, config), default=_jsonable, indent=1) + "\n"


def save_model(path, model: NonRigidModel, config=None):
    atomic_write(path, dumps_model(model, config))


def model_from_dict(doc: dict) -> NonRigidModel:
    if doc.get("format") != MODEL_FORMAT:
        raise InputError(f"not a {MODEL_FORMAT} document")

    def arr(key, shape):
        try:
            a = np.asarray(doc[key], dtype=float)
        except (KeyError, ValueError, TypeError) as err:
            raise InputError(f"model field {key!r} missing or malformed") from err
        if a.shape != shape:
            raise InputError(f"model field {key!r} has shape {a.shape}, expected {shape}")
        return a

    I, J, K = int(doc["I"]), int(doc["J"]), int(doc["K"])
    rigid = RigidFactor(M0=arr("M0", (2 * I, 3)), B0=arr("B0", (3, J)))
    sep = SubspaceSeparation(
        K=K,
        A_isa=arr("A_isa", (3 * K, 3 * K)),
        M_isa=arr("M_isa", (2 * I, 3 * K)),
        B_isa=arr("B_isa", (3 * K, J)),
        C=arr("C", (3 * K, 3 * K)),
    )
    blocks = BlockMotion(D=arr("D", (K, 3, 3)), alpha=arr("alpha", (I, K)),
                         D_inv=arr("D_inv", (K, 3, 3)))
    return NonRigidModel(rigid=rigid, separation=sep, blocks=blocks,
                         translations=arr("translations", (I, 2)),
                         diagnostics=doc.get("diagnostics", {}))


def load_model(path):
    """Read a model file; returns ``(model, config_dict)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read model {path}: {err}") from err
    return model_from_dict(doc), doc.get("config", {})


def write_matrix_csv(path, X, header=None):
    text = (f"# {header}\n" if header else "") + _fmt_rows(np.atleast_2d(X))
    atomic_write(path, text)


def read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def format_basis_shapes(model: NonRigidModel) -> str:
    """Mean shape and ``B0 +/- a_k B_k`` per subspace as CSV rows.

    ``a_k`` is the standard deviation of ``alpha_k`` over the images. Columns:
    ``k,sign,coord`` then one value per point; ``k = 0`` is the mean shape.
    """
    B0 = model.rigid.B0
    shapes = model.basis_shapes()
    amp = np.std(model.blocks.alpha, axis=0)
    lines = [f"# basis shapes K={model.K} J={model.point_count}: k,sign,coord,values\n"]

    def emit(k, sign, S):
        for c, name in enumerate("xyz"):
            lines.append(f"{k},{sign},{name}," + ",".join(f"{v:.17g}" for v in S[c]) + "\n")

    emit(0, "0", B0)
    for k in range(model.K):
        emit(k + 1, "+", B0 + amp[k] * shapes[k])
        emit(k + 1, "-", B0 - amp[k] * shapes[k])
    return "".join(lines)
