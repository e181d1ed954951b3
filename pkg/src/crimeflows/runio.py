"""Run plumbing: atomic writes, content digests, config, and the run manifest.

Every stage writes outputs through a temp-file-plus-rename so partial
files are never visible, and records its inputs, outputs, and settings
in run_manifest.json under the output directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from pathlib import Path

import yaml

from .errors import ConfigError

log = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"
ENV_PREFIX = "CRIMEFLOWS_"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True,
                                       allow_nan=False) + "\n")


def atomic_write_df(path, df) -> None:
    atomic_write_text(path, df.to_csv(index=False, lineterminator="\n"))


def json_safe(obj):
    """Replace NaN/inf with None recursively so reports stay valid JSON."""
    import math

    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    with open(p) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {p} must hold a mapping")
    return doc


def env_overrides() -> dict:
    """CRIMEFLOWS_* environment variables as a flat settings dict."""
    out = {}
    for key, cast in (("SEED", int), ("THREADS", int), ("TZ", str), ("OUT_DIR", str)):
        raw = os.environ.get(ENV_PREFIX + key)
        if raw is not None:
            out[key.lower()] = cast(raw)
    return out


class Manifest:
    """Per-stage record of inputs, outputs, settings, and timings."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / MANIFEST_NAME
        if self.path.exists():
            with open(self.path) as fh:
                self.doc = json.load(fh)
        else:
            from . import __version__

            self.doc = {"version": __version__, "stages": {}}

    def record_stage(self, stage: str, inputs: dict, outputs: list, settings: dict,
                     elapsed_s: float, extra: dict | None = None) -> None:
        entry = {
            "inputs": {str(p): sha256_file(p) for p in inputs.values() if p is not None},
            "outputs": {str(p): sha256_file(p) for p in outputs},
            "settings": json_safe(settings),
            "elapsed_s": round(elapsed_s, 3),
        }
        if extra:
            entry.update(json_safe(extra))
        self.doc["stages"][stage] = entry
        atomic_write_json(self.path, self.doc)
