"""Checkpoint directories: ``params.bin`` (little-endian float64), ``spec.json`` and ``manifest.txt``.

The manifest has one ``name shape offset`` line per array, with shape written
as ``AxBxC`` (``scalar`` for 0-d) and offset counted in float64 elements.
Batch-norm running statistics are stored next to the parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, ParseError
from .models import Model, ModelSpec, build

PARAMS, SPEC, MANIFEST, RUN = "params.bin", "spec.json", "manifest.txt", "run.json"


def state_arrays(model: Model):
    """Named arrays (parameters then buffers) in a fixed order."""
    out = [(name, p.data) for name, p in model.named_parameters()]
    for name, b in model.named_buffers():
        out.append((f"{name}.running_mean", b.running_mean))
        out.append((f"{name}.running_var", b.running_var))
        out.append((f"{name}.steps", np.array(float(b.steps))))
    return out


def _shape_text(shape):
    return "x".join(str(s) for s in shape) if shape else "scalar"


def save_checkpoint(model: Model, path, run_info: dict | None = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    offset = 0
    lines = []
    chunks = []
    for name, arr in state_arrays(model):
        arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shapes, unlike ascontiguousarray
        lines.append(f"{name} {_shape_text(arr.shape)} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.size
    (path / PARAMS).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text("\n".join(lines) + "\n")
    (path / SPEC).write_text(json.dumps(model.spec.to_dict(), indent=1, sort_keys=True))
    if run_info is not None:
        (path / RUN).write_text(json.dumps(run_info, indent=1, sort_keys=True))


def read_manifest(path):
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("manifest lines need 'name shape offset'", line=lineno)
        name, shape_txt, off = parts
        try:
            shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
            entries.append((name, shape, int(off)))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return entries


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns (model, run_info)."""
    path = Path(path)
    for fname in (PARAMS, SPEC, MANIFEST):
        if not (path / fname).exists():
            raise CompatibilityError(f"{path} is not a checkpoint: missing {fname}")
    try:
        spec = ModelSpec.from_dict(json.loads((path / SPEC).read_text()))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CompatibilityError(f"unreadable model spec in {path / SPEC}: {exc}") from exc
    model = build(spec, 0)
    flat = np.frombuffer((path / PARAMS).read_bytes(), dtype="<f8")
    entries = read_manifest(path / MANIFEST)
    expected = {name: arr.shape for name, arr in state_arrays(model)}
    stored = {name: shape for name, shape, _ in entries}
    if stored != expected:
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        wrong = sorted(k for k in set(stored) & set(expected) if stored[k] != expected[k])
        raise CompatibilityError(
            f"checkpoint does not match its spec: missing={missing[:3]} extra={extra[:3]} shape={wrong[:3]}")
    values = {}
    for name, shape, off in entries:
        size = int(np.prod(shape, dtype=np.int64))
        if off < 0 or off + size > flat.size:
            raise CompatibilityError(f"array {name} lies outside {PARAMS}")
        values[name] = flat[off:off + size].reshape(shape).astype(float)
    for name, p in model.named_parameters():
        p.data[...] = values[name]
    for name, b in model.named_buffers():
        b.running_mean = values[f"{name}.running_mean"].copy()
        b.running_var = values[f"{name}.running_var"].copy()
        b.steps = int(values[f"{name}.steps"])
    run = json.loads((path / RUN).read_text()) if (path / RUN).exists() else {}
    return model, run
