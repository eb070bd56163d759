"""CSV emission and run manifests.

Data files begin with a ``#`` header carrying a digest of the resolved
parameters. Timestamps live only in the manifest, so re-running with the
same parameters reproduces every data file byte for byte.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field


def fmt(x) -> str:
    if x is None:
        return ""
    if hasattr(x, "dtype") and hasattr(x, "item"):
        x = x.item()
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(float(x))
    return str(x)


def params_digest(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def render_csv(header: list[str], rows, preamble: list[str]) -> str:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int
    version: str
    units: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)  # [{"file": name, "sha256": hex}]

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def write_outputs(outdir: str, files: dict[str, str], manifest: RunManifest) -> list[str]:
    """Write every file through a temporary name and rename, manifest last."""
    os.makedirs(outdir, exist_ok=True)
    manifest.outputs = [{"file": name, "sha256": sha256_text(text)} for name, text in files.items()]
    manifest.finished = now()
    written = []
    for name, text in [*files.items(), ("manifest.json", manifest.to_json())]:
        fd, tmp = tempfile.mkstemp(dir=outdir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, os.path.join(outdir, name))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        written.append(name)
    return written
