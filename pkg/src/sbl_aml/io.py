"""Matrix/vector exchange formats, trace CSV and run summaries.

Binary matrices: 8-byte header holding ``rows, cols`` as little-endian
uint32, followed by ``rows * cols`` little-endian float64 values in
column-major order.  CSV matrices: one line per row, comma separated.
Files ending in ``.bin`` use the binary layout; everything else is CSV.
"""
import csv
import io
import json
import math
import os
import struct

import numpy as np

from .algorithms import ConvergenceTrace, Status
from .exceptions import SBLInputError

__all__ = [
    "read_matrix",
    "write_matrix",
    "read_vector",
    "write_vector",
    "TRACE_HEADER",
    "write_trace_csv",
    "read_trace_csv",
    "run_summary",
    "write_summary",
    "read_summary",
    "format_float",
    "summary_gamma",
]

_HEADER = struct.Struct("<II")
TRACE_HEADER = ("iter", "objective", "gamma_rel_change", "active_count", "elapsed_ms")


def format_float(v):
    """Shortest round-tripping text for a float (``repr``)."""
    return repr(float(v))


def _is_binary(path):
    return os.fspath(path).lower().endswith(".bin")


def write_matrix(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2:
        raise SBLInputError(f"expected a 2-D array, got shape {A.shape}")
    if _is_binary(path):
        rows, cols = A.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(rows, cols))
            fh.write(np.asfortranarray(A).astype("<f8").tobytes(order="F"))
    else:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in A:
                w.writerow([format_float(v) for v in row])


def read_matrix(path):
    """Read a matrix; raises :class:`SBLInputError` naming ``path`` on any problem."""
    try:
        if _is_binary(path):
            with open(path, "rb") as fh:
                raw = fh.read()
            if len(raw) < _HEADER.size:
                raise SBLInputError(f"{path}: truncated header")
            rows, cols = _HEADER.unpack_from(raw)
            expected = _HEADER.size + 8 * rows * cols
            if len(raw) != expected:
                raise SBLInputError(
                    f"{path}: header says {rows}x{cols} ({expected} bytes) but file has {len(raw)} bytes")
            data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
            return data.reshape((rows, cols), order="F").astype(float)
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        if not rows:
            raise SBLInputError(f"{path}: empty matrix file")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise SBLInputError(f"{path}: ragged rows (widths {sorted(widths)})")
        return np.array([[float(c) for c in r] for r in rows])
    except OSError as exc:
        raise SBLInputError(f"{path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        if isinstance(exc, SBLInputError):
            raise
        raise SBLInputError(f"{path}: could not parse numbers ({exc})") from exc


def read_vector(path):
    A = read_matrix(path)
    if 1 not in A.shape:
        raise SBLInputError(f"{path}: expected a vector, got a {A.shape[0]}x{A.shape[1]} matrix")
    return A.ravel()


def write_vector(path, v):
    write_matrix(path, np.asarray(v, dtype=float).reshape(-1, 1))


def _fmt_cell(v):
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return format_float(v)


def write_trace_csv(trace, dest, timing=True):
    """Write ``iter,objective,gamma_rel_change,active_count,elapsed_ms``.

    With ``timing=False`` the ``elapsed_ms`` column is left empty so the
    file is byte-identical across reruns.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for it, obj, rel, act, ms in zip(trace.iters, trace.objective, trace.gamma_rel_change,
                                     trace.active_count, trace.elapsed_ms):
        w.writerow([it, _fmt_cell(obj), _fmt_cell(rel), act, f"{ms:.3f}" if timing else ""])
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text


def read_trace_csv(path, status=Status.MAX_ITERS):
    trace = ConvergenceTrace(status=Status(status))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TRACE_HEADER:
            raise SBLInputError(f"{path}: unexpected trace header {header}")
        for row in reader:
            ms = float(row[4]) if row[4] else float("nan")
            trace.append(int(row[0]), float(row[1]), float(row[2]), int(row[3]), ms)
    return trace


def run_summary(gamma, trace, config, **extra):
    """JSON-compatible summary of a run; floats are stored exactly."""
    gamma = np.asarray(gamma, dtype=float)
    nz = np.flatnonzero(gamma)
    summary = {
        "status": Status(trace.status).value,
        "iterations": trace.n_iter,
        "objective": trace.objective[-1] if trace.objective else None,
        "n": int(gamma.shape[0]),
        "active_count": int(nz.size),
        "gamma": {str(int(i)): float(gamma[i]) for i in nz},
        "config": config.as_dict(),
    }
    summary.update(extra)
    return summary


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_summary(path):
    with open(path) as fh:
        return json.load(fh)


def summary_gamma(summary):
    """Dense gamma vector from a summary's sparse ``index: value`` pairs."""
    g = np.zeros(int(summary["n"]))
    for k, v in summary["gamma"].items():
        g[int(k)] = v
    return g
