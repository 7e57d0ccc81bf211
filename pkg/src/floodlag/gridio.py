"""Text codec for north-up grids with named band sections.

Layout (see ``docs/formats.md``)::

    {"format": "floodlag-grid", "version": 1, "crs": ..., "origin_x": ..., ...}
    # band <name> [<label>]
    <n_rows lines of n_cols whitespace-separated values>
    # band ...

Files ending in ``.gz`` are transparently (de)compressed.
"""
import gzip
import io
import json

import numpy as np

from .errors import StructuralError, ValidationError

FORMAT_TAG = "floodlag-grid"


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        if mode == "w":
            # fixed mtime and no embedded name keep the bytes reproducible
            raw = gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)
            return _OwningWrapper(raw)
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


class _OwningWrapper(io.TextIOWrapper):
    def __init__(self, raw):
        super().__init__(raw, encoding="utf-8")
        self._file = raw.fileobj

    def close(self):
        super().close()
        self._file.close()


def write_grid(path, header, sections):
    """Write ``sections`` (a sequence of ``(name, label, array, fmt)``)."""
    header = dict(header, format=FORMAT_TAG, version=1)
    with _open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for name, label, arr, fmt in sections:
            arr = np.asarray(arr)
            if arr.shape != (header["n_rows"], header["n_cols"]):
                raise StructuralError(f"band {name} has shape {arr.shape}")
            fh.write(f"# band {name}" + (f" {label}" if label else "") + "\n")
            np.savetxt(fh, arr, fmt=fmt)


def read_grid(path):
    """Return ``(header, [(name, label, float array), ...])``."""
    with _open(path, "r") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: first line is not a JSON header") from exc
        if header.get("format") != FORMAT_TAG:
            raise ValidationError(f"{path}: not a {FORMAT_TAG} file")
        text = fh.read()
    n_rows, n_cols = int(header["n_rows"]), int(header["n_cols"])
    sections = []
    chunks = text.split("# band ")
    if chunks and chunks[0].strip():
        raise ValidationError(f"{path}: data before first band marker")
    for chunk in chunks[1:]:
        title, _, body = chunk.partition("\n")
        name, _, label = title.strip().partition(" ")
        values = np.array(body.split(), dtype=np.float64)
        if values.size != n_rows * n_cols:
            raise StructuralError(
                f"{path}: band {name} {label} has {values.size} values, expected {n_rows * n_cols}")
        sections.append((name, label or None, values.reshape(n_rows, n_cols)))
    return header, sections
