"""Model files.

Layout (UTF-8 text)::

    beltwear-model v1 <kind> dim=<d> classes=<C>
    {"class_names": [...], "params": {...}}
    @array <name> <dtype> <comma-separated shape>
    <base64 of the little-endian array bytes, wrapped over several lines>
    @end
    ... more arrays ...

Arrays are stored bit-exactly, so a loaded model predicts identically.
"""

from __future__ import annotations

import base64
import json
import re

import numpy as np

from beltwear._util import atomic_path
from beltwear.models.base import TrainedModel
from beltwear.models.baseline import RandomGuess
from beltwear.models.knn import KNearestNeighbors
from beltwear.models.mlp import MLPClassifier
from beltwear.models.tree import DecisionTree, RandomForest

FORMAT_VERSION = 1
_HEADER = re.compile(r"^beltwear-model v(\d+) (\w+) dim=(\d+) classes=(\d+)$")
_LINE_BYTES = 3 * 2**16
_CLASSES = {c.kind: c for c in (DecisionTree, RandomForest, KNearestNeighbors, MLPClassifier, RandomGuess)}


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


def save_model(model: TrainedModel, path) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"beltwear-model v{FORMAT_VERSION} {model.kind} dim={model.feature_dim} classes={model.n_classes}\n")
            fh.write(json.dumps({"class_names": model.class_names, "params": model.params}, sort_keys=True) + "\n")
            for name, arr in sorted(model.state_arrays().items()):
                arr = np.ascontiguousarray(arr)
                dtype = arr.dtype.newbyteorder("<")
                fh.write(f"@array {name} {dtype.str} {','.join(map(str, arr.shape))}\n")
                raw = memoryview(arr.astype(dtype, copy=False)).cast("B")
                for i in range(0, len(raw), _LINE_BYTES):
                    fh.write(base64.b64encode(raw[i : i + _LINE_BYTES]).decode("ascii") + "\n")
                fh.write("@end\n")


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        match = _HEADER.match(header)
        if not match:
            raise ModelFormatError(f"{path}: not a beltwear model file (header {header[:60]!r})")
        version, kind, dim, n_classes = int(match[1]), match[2], int(match[3]), int(match[4])
        if version != FORMAT_VERSION:
            raise ModelVersionError(f"{path}: model format v{version} is not supported (expected v{FORMAT_VERSION})")
        if kind not in _CLASSES:
            raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
        try:
            meta = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: corrupt metadata line ({exc})") from None
        arrays = {}
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if parts[0] != "@array" or len(parts) != 4:
                raise ModelFormatError(f"{path}: expected '@array', got {line[:40]!r}")
            name, dtype = parts[1], np.dtype(parts[2])
            shape = tuple(int(s) for s in parts[3].split(",") if s)
            buf = bytearray()
            for chunk in fh:
                chunk = chunk.rstrip("\n")
                if chunk == "@end":
                    break
                try:
                    buf += base64.b64decode(chunk, validate=True)
                except ValueError:
                    raise ModelFormatError(f"{path}: corrupt data in array {name}") from None
            else:
                raise ModelFormatError(f"{path}: array {name} is truncated")
            expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if len(buf) != expected:
                raise ModelFormatError(f"{path}: array {name} has {len(buf)} bytes, expected {expected}")
            arrays[name] = np.frombuffer(bytes(buf), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if len(meta.get("class_names", [])) != n_classes:
        raise ModelFormatError(f"{path}: header says {n_classes} classes, metadata lists {len(meta.get('class_names', []))}")
    try:
        return _CLASSES[kind].from_state(dim, meta["class_names"], meta.get("params", {}), arrays)
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing array {exc}") from None
