"""On-disk formats: PSFT / PSIT / PSTG binaries, CSV exports, histogram CSV + JSON sidecar.

Binary layout (little-endian):
    PSFT  magic(4s) version(u32) dt(f64) flux(f64) n(u64)  then n x (re f64, im f64)
    PSIT  magic(4s) version(u32) dt(f64) flux(f64) n(u64)  then n x f64
    PSTG  magic(4s) version(u32) duration(f64) n(u64) channel(u32)  then n x f64 ascending
"""

import io
import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .correlator import CorrelationHistogram
from .detector import TagStream
from .errors import ParameterValidationError, PhotostatIOError
from .fieldsim import FieldTrace
from .interferometer import IntensityTrace

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_TRACE_HEADER = struct.Struct("<4sIddQ")
_TAG_HEADER = struct.Struct("<4sIdQI")

HISTOGRAM_COLUMNS = "tau_s,g2,sigma,counts"


def _atomic_write(path, payload: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise PhotostatIOError(f"Cannot write {path}: {e}", {"path": str(path)})
    return path


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise PhotostatIOError(f"Cannot read {path}: {e}", {"path": str(path)})


def _check_header(path, magic, expected_magic, version):
    if magic != expected_magic:
        raise PhotostatIOError(
            f"{path}: bad magic {magic!r}, expected {expected_magic!r}",
            {"path": str(path), "magic": magic.decode("latin-1")},
        )
    if version != FORMAT_VERSION:
        raise PhotostatIOError(f"{path}: unsupported version {version}", {"path": str(path), "version": version})


def _payload(path, data: bytes, offset: int, count: int, dtype) -> np.ndarray:
    expected = count * np.dtype(dtype).itemsize
    if len(data) - offset != expected:
        raise PhotostatIOError(
            f"{path}: payload is {len(data) - offset} bytes, header promises {expected}",
            {"path": str(path)},
        )
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy()


# -- traces -------------------------------------------------------------------

def write_field_trace(path, trace: FieldTrace) -> Path:
    header = _TRACE_HEADER.pack(b"PSFT", FORMAT_VERSION, trace.dt, trace.flux, trace.n)
    body = np.ascontiguousarray(trace.samples, dtype="<c16").tobytes()
    return _atomic_write(path, header + body)


def read_field_trace(path) -> FieldTrace:
    data = _read_bytes(path)
    if len(data) < _TRACE_HEADER.size:
        raise PhotostatIOError(f"{path}: truncated header")
    magic, version, dt, flux, n = _TRACE_HEADER.unpack_from(data)
    _check_header(path, magic, b"PSFT", version)
    samples = _payload(path, data, _TRACE_HEADER.size, n, "<c16")
    return FieldTrace(samples=samples, dt=dt, flux=flux)


def write_intensity_trace(path, trace: IntensityTrace) -> Path:
    header = _TRACE_HEADER.pack(b"PSIT", FORMAT_VERSION, trace.dt, trace.flux, trace.n)
    return _atomic_write(path, header + np.ascontiguousarray(trace.samples, dtype="<f8").tobytes())


def read_intensity_trace(path) -> IntensityTrace:
    data = _read_bytes(path)
    if len(data) < _TRACE_HEADER.size:
        raise PhotostatIOError(f"{path}: truncated header")
    magic, version, dt, flux, n = _TRACE_HEADER.unpack_from(data)
    _check_header(path, magic, b"PSIT", version)
    return IntensityTrace(samples=_payload(path, data, _TRACE_HEADER.size, n, "<f8"), dt=dt, flux=flux)


# -- tags ---------------------------------------------------------------------

def write_tags(path, stream: TagStream) -> Path:
    header = _TAG_HEADER.pack(b"PSTG", FORMAT_VERSION, stream.duration, stream.tags.size, stream.channel_id)
    return _atomic_write(path, header + np.ascontiguousarray(stream.tags, dtype="<f8").tobytes())


def read_tags(path) -> TagStream:
    data = _read_bytes(path)
    if len(data) < _TAG_HEADER.size:
        raise PhotostatIOError(f"{path}: truncated header")
    magic, version, duration, n, channel = _TAG_HEADER.unpack_from(data)
    _check_header(path, magic, b"PSTG", version)
    tags = _payload(path, data, _TAG_HEADER.size, n, "<f8")
    if tags.size > 1 and np.any(np.diff(tags) < 0):
        raise PhotostatIOError(f"{path}: timestamps are not ascending")
    try:
        return TagStream(tags=tags, duration=duration, channel_id=channel)
    except ParameterValidationError as e:
        raise PhotostatIOError(f"{path}: {e.message}")


# -- CSV exports --------------------------------------------------------------

def _write_csv(path, header: str, columns) -> Path:
    buffer = io.BytesIO()
    np.savetxt(buffer, np.column_stack(columns), delimiter=",", header=header, comments="", fmt="%.12g")
    return _atomic_write(path, buffer.getvalue())


def write_curve(path, tau, values, header: str = "tau_s,g2x") -> Path:
    """Two-column CSV of a model curve on the given tau grid."""
    return _write_csv(path, header, (np.asarray(tau, dtype=float), np.asarray(values, dtype=float)))


def export_csv(path, obj) -> Path:
    """Debug CSV of a FieldTrace (t, re, im), IntensityTrace (t, intensity) or TagStream (t)."""
    if isinstance(obj, FieldTrace):
        t = np.arange(obj.n) * obj.dt
        return _write_csv(path, "t,re,im", (t, obj.samples.real, obj.samples.imag))
    if isinstance(obj, IntensityTrace):
        return _write_csv(path, "t,intensity", (np.arange(obj.n) * obj.dt, obj.samples))
    if isinstance(obj, TagStream):
        return _write_csv(path, "t", (obj.tags,))
    raise ParameterValidationError(f"cannot export {type(obj).__name__} as CSV")


# -- histograms ---------------------------------------------------------------

def _sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


def write_histogram(path, h: CorrelationHistogram, config_hash: Optional[str] = None) -> Path:
    """Plot-ready CSV (tau_s, g2, sigma, counts) plus a JSON sidecar with the normalization."""
    path = Path(path)
    sigma = np.where(np.isfinite(h.sigma), h.sigma, np.nan)
    _write_csv(path, HISTOGRAM_COLUMNS, (h.tau, h.g2, sigma, h.counts))
    rate_a, rate_b = h.rates
    sidecar = {
        "bin_width": h.bin_width,
        "window": h.window,
        "n_bins": h.n_bins,
        "mode": h.mode,
        "delta": h.delta,
        "n_a": h.n_a,
        "n_b": h.n_b,
        "rate_a": rate_a,
        "rate_b": rate_b,
        "record_time": h.record_time,
        "total_time": h.total_time,
        "config_hash": config_hash or h.meta.get("config_hash"),
    }
    write_json(_sidecar_path(path), sidecar)
    return path


def read_histogram(path) -> CorrelationHistogram:
    path = Path(path)
    meta = read_json(_sidecar_path(path))
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise PhotostatIOError(f"Cannot read histogram {path}: {e}", {"path": str(path)})
    if table.shape[1] != 4 or table.shape[0] != meta.get("n_bins", table.shape[0]):
        raise PhotostatIOError(f"{path}: histogram table does not match its sidecar")
    try:
        return CorrelationHistogram(
            bin_width=meta["bin_width"],
            window=meta["window"],
            counts=np.rint(table[:, 3]).astype(np.int64),
            n_a=int(meta["n_a"]),
            n_b=int(meta["n_b"]),
            record_time=float(meta["record_time"]),
            total_time=float(meta["total_time"]),
            mode=meta.get("mode", "cross"),
            delta=meta.get("delta"),
            meta={"config_hash": meta.get("config_hash")},
        )
    except KeyError as e:
        raise PhotostatIOError(f"{path}: sidecar is missing {e}")


# -- JSON ---------------------------------------------------------------------

def write_json(path, payload) -> Path:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True, default=float)
    return _atomic_write(path, text.encode("utf-8"))


def read_json(path) -> dict:
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PhotostatIOError(f"{path}: invalid JSON: {e}", {"path": str(path)})
