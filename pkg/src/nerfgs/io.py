"""Camera files, PNG/PFM images, run configs, traces and output hashing."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, FileNotFound, FormatError
from .geometry import Camera

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFound(f"{p} does not exist")
    return p


# -- cameras ----------------------------------------------------------------

def camera_to_frame(cam: Camera, file_path: str, split: str) -> dict:
    return {"file_path": file_path, "split": split,
            "transform_matrix": cam.pose.tolist(),
            "fl_x": cam.fx, "fl_y": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "w": cam.width, "h": cam.height}


def save_cameras(path, cams, file_paths, splits) -> None:
    if not (len(cams) == len(file_paths) == len(splits)):
        raise ValueError("cams, file_paths and splits must have equal length")
    if len(set(file_paths)) != len(file_paths):
        raise FormatError("file_paths must be unique")
    frames = [camera_to_frame(c, p, s) for c, p, s in zip(cams, file_paths, splits)]
    Path(path).write_text(json.dumps({"frames": frames}, indent=1))


def load_cameras(path, split: str | None = None):
    """Returns ``(cameras, file_paths, splits)``, optionally filtered by split."""
    p = _require(path)
    try:
        doc = json.loads(p.read_text())
        frames = doc["frames"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{p}: not a camera file ({e})") from e
    cams, paths, splits = [], [], []
    for fr in frames:
        try:
            cam = Camera(fr["fl_x"], fr["fl_y"], fr["cx"], fr["cy"], fr["w"], fr["h"],
                         np.asarray(fr["transform_matrix"], dtype=np.float64))
            tag = fr.get("split", "train")
            fp = fr["file_path"]
        except KeyError as e:
            raise FormatError(f"{p}: frame missing {e}") from e
        if tag not in ("train", "val"):
            raise FormatError(f"{p}: unknown split {tag!r}")
        if split is None or tag == split:
            cams.append(cam)
            paths.append(fp)
            splits.append(tag)
    if len(set(paths)) != len(paths):
        raise FormatError(f"{p}: duplicate file_path entries")
    return cams, paths, splits


# -- images -----------------------------------------------------------------

def srgb_encode(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_decode(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y <= 0.04045, y / 12.92, np.power((y + 0.055) / 1.055, 2.4))


def save_png(path, linear) -> None:
    """Linear [0, 1] RGB (or gray) to 8-bit sRGB PNG."""
    v = np.round(srgb_encode(linear) * 255.0).astype(np.uint8)
    Image.fromarray(v).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """8-bit sRGB PNG to linear float64 RGB in [0, 1]."""
    p = _require(path)
    with Image.open(p) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_decode(a)


def save_pfm(path, img) -> None:
    """Single-channel (H, W) or RGB float image as little-endian PFM."""
    a = np.asarray(img, dtype="<f4")
    if a.ndim == 2:
        head = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        head = b"PF"
    else:
        raise ValueError("PFM holds (H, W) or (H, W, 3) images")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(head + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())  # PFM rows run bottom to top


def load_pfm(path) -> np.ndarray:
    p = _require(path)
    with open(p, "rb") as fh:
        head = fh.readline().strip()
        if head not in (b"PF", b"Pf"):
            raise FormatError(f"{p}: not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if head == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * ch:
        raise FormatError(f"{p}: truncated PFM")
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


# -- configs ----------------------------------------------------------------

def read_document(path) -> dict:
    """Parse a TOML or JSON file (chosen by extension) into a dict."""
    p = _require(path)
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(p.read_text())
        return json.loads(p.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{p}: {e}") from e


def from_dict(cls, data, where: str = ""):
    """Build dataclass ``cls`` from nested dicts, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected a table, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        sub = _dataclass_type(fields[k])
        kwargs[k] = from_dict(sub, v, f"{where}.{k}" if where else k) if sub else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or cls.__name__}: {e}") from e


def _dataclass_type(f):
    if f.default_factory is not dataclasses.MISSING:
        probe = f.default_factory()
        if dataclasses.is_dataclass(probe):
            return type(probe)
    return None


def to_dict(obj) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(obj), default=_json_default))


def schema(cls, indent: int = 0) -> str:
    """Human-readable listing of a config dataclass: key, default."""
    pad = "  " * indent
    lines = []
    for f in dataclasses.fields(cls):
        sub = _dataclass_type(f)
        if sub is not None:
            lines.append(f"{pad}[{f.name}]")
            lines.append(schema(sub, indent + 1))
        else:
            default = f.default if f.default is not dataclasses.MISSING else None
            lines.append(f"{pad}{f.name} = {default!r}")
    return "\n".join(lines)


# -- reports, traces, hashes ------------------------------------------------

def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite(o):
    if isinstance(o, float) and not np.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    return o


def write_json(path, obj) -> None:
    obj = json.loads(json.dumps(obj, default=_json_default))
    Path(path).write_text(json.dumps(_finite(obj), indent=2, allow_nan=False) + "\n")


def write_trace_csv(path, columns: dict) -> None:
    names = list(columns)
    n = max((len(v) for v in columns.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + names)
        for i in range(n):
            w.writerow([i + 1] + [repr(float(columns[k][i])) if i < len(columns[k]) else ""
                                  for k in names])


def _strip_timing(o):
    if isinstance(o, dict):
        return {k: _strip_timing(v) for k, v in o.items() if k != "timing"}
    if isinstance(o, list):
        return [_strip_timing(v) for v in o]
    return o


def file_digest(path) -> str:
    """SHA-256 of a file; JSON files are hashed with any ``timing`` entries removed."""
    p = Path(path)
    if p.suffix == ".json":
        doc = _strip_timing(json.loads(p.read_text()))
        data = json.dumps(doc, sort_keys=True).encode()
    else:
        data = p.read_bytes()
    return hashlib.sha256(data).hexdigest()


def hash_tree(root, exclude=("hashes.json",)) -> dict:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in exclude and p.suffix != ".log":
            out[p.relative_to(root).as_posix()] = file_digest(p)
    return out

