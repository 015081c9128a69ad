"""Shared IO helpers: hashing, canonical JSON, PNG round-trips, run locks."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image


def canonical_json(obj) -> str:
    """Serialize with sorted keys and fixed separators so hashes are stable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[0,1] float image to uint8 with round-to-nearest."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, rgb: np.ndarray, alpha: np.ndarray | None = None) -> None:
    """Write an RGB(A) PNG from float [0,1] arrays."""
    rgb8 = to_uint8(rgb)
    if alpha is not None:
        a8 = to_uint8(alpha)
        arr = np.concatenate([rgb8, a8[..., None]], axis=-1)
        Image.fromarray(arr, mode="RGBA").save(path)
    else:
        Image.fromarray(rgb8, mode="RGB").save(path)


def load_png(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a PNG as float32 [0,1]; returns (rgb, alpha-or-None)."""
    img = Image.open(path)
    if img.mode == "RGBA":
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return arr[..., :3], arr[..., 3]
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr, None


class JsonlLogger:
    """Append-only JSON-lines writer, flushed per record."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a")

    def log(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RunLockError(RuntimeError):
    pass


class RunLock:
    """One command owns a run directory at a time (lock file protocol)."""

    def __init__(self, run_dir):
        self.path = Path(run_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockError(f"run directory is locked by another command: {self.path}")
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def hash_tree(root, patterns=("**/*",)) -> str:
    """Content hash over a directory: sorted relpath:sha256 lines, lock files excluded."""
    root = Path(root)
    lines = []
    for pattern in patterns:
        for p in sorted(root.glob(pattern)):
            if p.is_file() and p.name != ".lock":
                lines.append(f"{p.relative_to(root).as_posix()}:{sha256_file(p)}")
    return sha256_bytes("\n".join(sorted(lines)).encode())


def write_manifest(run_dir, command: str, config_hash: str, input_hashes: dict, outputs: dict) -> Path:
    path = Path(run_dir) / "manifest.json"
    save_json(path, {
        "command": command,
        "config_hash": config_hash,
        "inputs": input_hashes,
        "outputs": outputs,
    })
    return path
