"""Binary file formats (RT3D dense, RT3S sparse, RT3F factors) and key=value sidecars."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensors import FactorModel, SparseTensor3, SymTensor3

__all__ = [
    "FormatError",
    "write_dense",
    "read_dense",
    "write_sparse",
    "read_sparse",
    "write_factors",
    "read_factors",
    "write_meta",
    "read_meta",
]

_DENSE_MAGIC = b"RT3D"
_SPARSE_MAGIC = b"RT3S"
_FACTOR_MAGIC = b"RT3F"
_VERSION = 1

_SPARSE_RECORD = np.dtype([("i", "<u4"), ("j", "<u4"), ("k", "<u4"), ("v", "<f8")])


class FormatError(ValueError):
    """Raised when a tensor file is malformed or truncated."""


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def write_dense(path, tensor) -> None:
    """Write a dense tensor (SymTensor3 or ndarray) as RT3D.

    Layout: magic "RT3D", u32 version=1, u32 n1, n2, n3, then n1*n2*n3
    little-endian float64 values in C order (flat position of (i, j, k)
    is i*n2*n3 + j*n3 + k).
    """
    arr = tensor.data if isinstance(tensor, SymTensor3) else np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("RT3D stores third-order tensors")
    with open(path, "wb") as fh:
        fh.write(_DENSE_MAGIC)
        fh.write(struct.pack("<IIII", _VERSION, *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_dense(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _DENSE_MAGIC:
            raise FormatError(f"{path}: not an RT3D file")
        version, n1, n2, n3 = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported RT3D version {version}")
        count = n1 * n2 * n3
        buf = _read_exact(fh, 8 * count, "payload")
        return np.frombuffer(buf, dtype="<f8").reshape(n1, n2, n3).astype(np.float64)


def write_sparse(path, sparse: SparseTensor3) -> None:
    """Write RT3S: magic, u32 version, u32 n, u64 count, then (u32 i, u32 j,
    u32 k, f64 v) records sorted lexicographically."""
    rec = np.empty(sparse.nnz, dtype=_SPARSE_RECORD)
    rec["i"] = sparse.indices[:, 0]
    rec["j"] = sparse.indices[:, 1]
    rec["k"] = sparse.indices[:, 2]
    rec["v"] = sparse.values
    with open(path, "wb") as fh:
        fh.write(_SPARSE_MAGIC)
        fh.write(struct.pack("<IIQ", _VERSION, sparse.n, sparse.nnz))
        fh.write(rec.tobytes())


def read_sparse(path, symmetric: bool = False) -> SparseTensor3:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _SPARSE_MAGIC:
            raise FormatError(f"{path}: not an RT3S file")
        version, n, count = struct.unpack("<IIQ", _read_exact(fh, 16, "header"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported RT3S version {version}")
        rec = np.frombuffer(_read_exact(fh, _SPARSE_RECORD.itemsize * count, "records"),
                            dtype=_SPARSE_RECORD)
        indices = np.stack([rec["i"], rec["j"], rec["k"]], axis=1).astype(np.int64)
        try:
            return SparseTensor3(n, indices, rec["v"].astype(np.float64), symmetric=symmetric)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def write_factors(path, model: FactorModel) -> None:
    """Write RT3F: magic, u32 version, u32 n, u32 r, then r records of
    (f64 lambda, n x f64 vector)."""
    with open(path, "wb") as fh:
        fh.write(_FACTOR_MAGIC)
        fh.write(struct.pack("<III", _VERSION, model.n, model.rank))
        for lam, vec in model.pairs:
            fh.write(struct.pack("<d", lam))
            fh.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())


def read_factors(path) -> FactorModel:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _FACTOR_MAGIC:
            raise FormatError(f"{path}: not an RT3F file")
        version, n, r = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported RT3F version {version}")
        lambdas = np.empty(r)
        vectors = np.empty((n, r))
        for i in range(r):
            (lambdas[i],) = struct.unpack("<d", _read_exact(fh, 8, "lambda"))
            buf = _read_exact(fh, 8 * n, "vector")
            vectors[:, i] = np.frombuffer(buf, dtype="<f8")
        try:
            return FactorModel(n, lambdas, vectors)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def write_meta(path, items: dict) -> None:
    """Write a line-oriented key=value sidecar; values are stringified as-is."""
    lines = [f"{key}={items[key]}" for key in items]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed metadata line {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
