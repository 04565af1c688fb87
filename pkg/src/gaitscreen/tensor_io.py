"""Binary ``.ten`` tensor files and CSV export.

Layout (little-endian): ``u32 ndim``, ``u32[ndim] shape``, ``f64[n] data``
in row-major order.
"""

import struct

import numpy as np

from .errors import DataFormatError


def save_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated tensor file")
    ndim = struct.unpack_from("<I", raw, 0)[0]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated shape header")
    shape = struct.unpack_from(f"<{ndim}I", raw, 4)
    n = int(np.prod(shape)) if ndim else 1
    expected = header + 8 * n
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: payload size {len(raw) - header} bytes, expected {8 * n} for shape {shape}")
    data = np.frombuffer(raw, dtype="<f8", offset=header, count=n)
    return data.reshape(shape).copy()


def export_csv(path, array) -> None:
    """Row-major CSV with a `# shape:` header; rows follow the last axis."""
    arr = np.asarray(array, dtype=np.float64)
    cols = arr.shape[-1] if arr.ndim else 1
    rows = arr.reshape(-1, cols)
    with open(path, "w") as fh:
        fh.write("# shape: " + ",".join(str(d) for d in arr.shape) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
