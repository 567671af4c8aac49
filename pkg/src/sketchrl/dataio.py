"""File formats and run configuration.

Datasets are JSON Lines (header, then photo records, then episode
records); models and configs are single JSON documents; metrics go to CSV.
All writers are byte-deterministic: keys are emitted in a fixed order,
floats with 17 significant digits (which round-trips float64 exactly),
lines end with LF, and files land via write-temp-then-rename.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .embedding import LinearHead
from .errors import DataFormatError, InputError, NumericError
from .policy import SIGMA_MIN, GaussianPolicy
from .pretrain import PretrainConfig
from .rewards import RewardConfig
from .simulate import SimConfig, SketchEpisode, StrokePoint, StrokeSketch, SynthDataset
from .trainer import TrainConfig

FORMAT_VERSION = "1"


def format_float(x: float) -> str:
    """Canonical decimal form: 17 significant digits, always with a marker
    that the value is real (trailing .0 when it would look integral)."""
    x = float(x)
    if not np.isfinite(x):
        raise NumericError(f"cannot serialize non-finite value {x}")
    s = f"{x:.17g}"
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def canonical_json(obj) -> str:
    """Serialize with insertion-order keys and canonical float formatting."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, np.ndarray):
        return canonical_json(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        parts = []
        for k, v in obj.items():
            if not isinstance(k, str):
                raise DataFormatError(f"JSON object keys must be strings, got {type(k).__name__}")
            parts.append(f"{json.dumps(k, ensure_ascii=True)}:{canonical_json(v)}")
        return "{" + ",".join(parts) + "}"
    raise DataFormatError(f"cannot serialize object of type {type(obj).__name__}")


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# dataset files (JSON Lines)

def _require_keys(record: dict, required, optional=(), *, where: str) -> None:
    keys = set(record)
    missing = set(required) - keys
    if missing:
        raise DataFormatError(f"{where}: missing keys {sorted(missing)}")
    unknown = keys - set(required) - set(optional)
    if unknown:
        raise DataFormatError(f"{where}: unknown keys {sorted(unknown)}")


def _strokes_payload(sketch: StrokeSketch) -> list:
    return [[pt.x, pt.y, 1 if pt.pen_lift else 0] for pt in sketch.points]


def save_dataset(path, ds: SynthDataset) -> None:
    lines = []
    header = {
        "format_version": FORMAT_VERSION,
        "feature_dim": int(ds.feature_dim),
        "T": int(ds.steps),
        "roles": {
            "train": [ep.episode_id for ep in ds.train],
            "test": [ep.episode_id for ep in ds.test],
        },
    }
    lines.append(canonical_json(header))
    feats = np.asarray(ds.photo_features, dtype=np.float64)
    for pid, row in zip(ds.photo_ids, feats):
        lines.append(canonical_json({"kind": "photo", "id": pid, "features": row}))
    for ep in list(ds.train) + list(ds.test):
        record = {
            "kind": "episode",
            "id": ep.episode_id,
            "paired_photo_id": ep.paired_photo_id,
            "states": np.asarray(ep.states),
        }
        if ep.strokes is not None:
            record["strokes"] = _strokes_payload(ep.strokes)
        lines.append(canonical_json(record))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_strokes(raw, where: str) -> StrokeSketch:
    points = []
    for row in raw:
        if not isinstance(row, list) or len(row) != 3 or row[2] not in (0, 1):
            raise DataFormatError(f"{where}: stroke points must be [x, y, 0|1] triples")
        points.append(StrokePoint(float(row[0]), float(row[1]), bool(row[2])))
    return StrokeSketch(tuple(points))


def load_dataset(path) -> SynthDataset:
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except ValueError as exc:
            raise DataFormatError(f"{path} line {lineno}: {exc}") from exc
    if not records:
        raise DataFormatError(f"{path}: empty dataset file")
    lineno, header = records[0]
    _require_keys(header, ("format_version", "feature_dim", "T", "roles"), where=f"line {lineno}")
    if header["format_version"] != FORMAT_VERSION:
        raise DataFormatError(f"line {lineno}: unsupported format_version {header['format_version']!r}")
    _require_keys(header["roles"], ("train", "test"), where=f"line {lineno} roles")
    feature_dim = int(header["feature_dim"])
    steps = int(header["T"])
    photo_ids, photo_rows = [], []
    episodes = {}
    for lineno, rec in records[1:]:
        where = f"line {lineno}"
        kind = rec.get("kind")
        if kind == "photo":
            _require_keys(rec, ("kind", "id", "features"), where=where)
            feats = np.asarray(rec["features"], dtype=np.float64)
            if feats.shape != (feature_dim,):
                raise DataFormatError(f"{where}: photo features must have length {feature_dim}")
            if rec["id"] in photo_ids:
                raise DataFormatError(f"{where}: duplicate photo id {rec['id']!r}")
            photo_ids.append(rec["id"])
            photo_rows.append(feats)
        elif kind == "episode":
            _require_keys(rec, ("kind", "id", "paired_photo_id", "states"), ("strokes",), where=where)
            states = np.asarray(rec["states"], dtype=np.float64)
            if states.shape != (steps, feature_dim):
                raise DataFormatError(f"{where}: states must be {steps} rows of length {feature_dim}")
            strokes = _parse_strokes(rec["strokes"], where) if "strokes" in rec else None
            if rec["id"] in episodes:
                raise DataFormatError(f"{where}: duplicate episode id {rec['id']!r}")
            try:
                episodes[rec["id"]] = SketchEpisode(rec["id"], rec["paired_photo_id"], states, strokes)
            except InputError as exc:
                raise DataFormatError(f"{where}: {exc}") from exc
        else:
            raise DataFormatError(f"{where}: unknown record kind {kind!r}")
    if not photo_ids:
        raise DataFormatError(f"{path}: dataset has no photo records")
    known_photos = set(photo_ids)
    splits = {"train": [], "test": []}
    claimed = set()
    for split_name in ("train", "test"):
        for eid in header["roles"][split_name]:
            if eid not in episodes:
                raise DataFormatError(f"roles.{split_name} names unknown episode {eid!r}")
            if eid in claimed:
                raise DataFormatError(f"episode {eid!r} appears in more than one role")
            claimed.add(eid)
            ep = episodes[eid]
            if ep.paired_photo_id not in known_photos:
                raise DataFormatError(f"episode {eid!r} pairs unknown photo {ep.paired_photo_id!r}")
            splits[split_name].append(ep)
    unclaimed = set(episodes) - claimed
    if unclaimed:
        raise DataFormatError(f"episodes missing from roles: {sorted(unclaimed)}")
    return SynthDataset(
        photo_ids=photo_ids,
        photo_features=np.stack(photo_rows),
        train=splits["train"],
        test=splits["test"],
        feature_dim=feature_dim,
        steps=steps,
    )


# ---------------------------------------------------------------------------
# model files (JSON)

def save_model(path, model, training_meta: dict | None = None) -> None:
    meta = dict(training_meta or {})
    if isinstance(model, GaussianPolicy):
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "policy",
            "in_dim": model.in_dim,
            "out_dim": model.out_dim,
            "weight": model.weight,
            "bias": model.bias,
            "sigma": model.sigma,
            "training_meta": meta,
        }
    elif isinstance(model, LinearHead):
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "head",
            "in_dim": model.in_dim,
            "out_dim": model.out_dim,
            "weight": model.weight,
            "bias": model.bias,
            "training_meta": meta,
        }
    else:
        raise InputError(f"cannot save object of type {type(model).__name__}")
    atomic_write_text(path, canonical_json(doc) + "\n")


def load_model(path):
    """Returns (model, training_meta); model is a LinearHead or GaussianPolicy."""
    with open(path, encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: model file must hold a JSON object")
    kind = doc.get("kind")
    if kind == "head":
        _require_keys(
            doc,
            ("format_version", "kind", "in_dim", "out_dim", "weight", "bias"),
            ("training_meta",),
            where=path,
        )
    elif kind == "policy":
        _require_keys(
            doc,
            ("format_version", "kind", "in_dim", "out_dim", "weight", "bias", "sigma"),
            ("training_meta",),
            where=path,
        )
    else:
        raise DataFormatError(f"{path}: unknown model kind {kind!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format_version {doc['format_version']!r}")
    weight = np.asarray(doc["weight"], dtype=np.float64)
    bias = np.asarray(doc["bias"], dtype=np.float64)
    in_dim, out_dim = int(doc["in_dim"]), int(doc["out_dim"])
    if weight.shape != (out_dim, in_dim) or bias.shape != (out_dim,):
        raise DataFormatError(f"{path}: parameter shapes do not match declared dims")
    meta = doc.get("training_meta", {})
    if not isinstance(meta, dict):
        raise DataFormatError(f"{path}: training_meta must be an object")
    try:
        if kind == "head":
            return LinearHead(weight, bias), meta
        sigma = np.asarray(doc["sigma"], dtype=np.float64)
        if sigma.shape != (out_dim,):
            raise DataFormatError(f"{path}: sigma must have length {out_dim}")
        if sigma.min(initial=np.inf) < SIGMA_MIN:
            raise DataFormatError(f"{path}: sigma entries must be >= {SIGMA_MIN}")
        return GaussianPolicy(weight, bias, sigma), meta
    except InputError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV

def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        raise DataFormatError("bool cells are ambiguous; write 0/1 explicitly")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    text = str(value)
    if any(c in text for c in ",\"\n\r"):
        raise DataFormatError(f"cell {text!r} needs quoting, which this writer avoids")
    return text


def write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    width = len(columns)
    for row in rows:
        cells = list(row)
        if len(cells) != width:
            raise DataFormatError(f"CSV row has {len(cells)} cells, expected {width}")
        lines.append(",".join(_format_cell(c) for c in cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path) -> tuple:
    """Minimal reader for this package's own CSV output: (columns, rows of str)."""
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty CSV")
    columns = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    for i, row in enumerate(rows, start=2):
        if len(row) != len(columns):
            raise DataFormatError(f"{path} line {i}: ragged row")
    return columns, rows


# ---------------------------------------------------------------------------
# run configuration

EVAL_SPLITS = ("test", "train")


@dataclass(frozen=True)
class EvalConfig:
    metric: str = "euclidean"
    split: str = "test"

    def __post_init__(self):
        if self.metric not in ("euclidean", "cosine"):
            raise InputError(f"unknown eval metric {self.metric!r}")
        if self.split not in EVAL_SPLITS:
            raise InputError(f"unknown eval split {self.split!r}; expected one of {EVAL_SPLITS}")


@dataclass(frozen=True)
class RunSettings:
    sim: SimConfig
    pretrain: PretrainConfig
    reward: RewardConfig
    train: TrainConfig
    eval: EvalConfig


_SECTIONS = {
    "sim": SimConfig,
    "pretrain": PretrainConfig,
    "reward": RewardConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def config_from_dict(doc: dict) -> RunSettings:
    """Build settings from a parsed config document; unknown keys abort."""
    if not isinstance(doc, dict):
        raise DataFormatError("config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise DataFormatError(f"unknown config section {sorted(unknown)[0]!r}")
    built = {}
    for section, cls in _SECTIONS.items():
        payload = doc.get(section, {})
        if not isinstance(payload, dict):
            raise DataFormatError(f"config section {section!r} must be an object")
        allowed = {f.name for f in dataclasses.fields(cls)}
        for key in payload:
            if key not in allowed:
                raise DataFormatError(f"unknown config key {section}.{key}")
        built[section] = cls(**payload)
    return RunSettings(**built)


def load_config(path) -> RunSettings:
    with open(path, encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


def override_seed(settings: RunSettings, seed: int) -> RunSettings:
    """Apply one --seed value to every stage that owns a seed."""
    return RunSettings(
        sim=dataclasses.replace(settings.sim, seed=seed),
        pretrain=dataclasses.replace(settings.pretrain, seed=seed),
        reward=settings.reward,
        train=dataclasses.replace(settings.train, seed=seed),
        eval=settings.eval,
    )
