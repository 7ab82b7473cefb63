"""Binary dataset and checkpoint files, CSV reports, atomic writes.

Dataset files ("HMB1") hold a channel corpus: a fixed header followed by
count samples, each an N_t x K complex matrix stored row-major (element
index major) as float64 re/im pairs, everything little-endian.  Checkpoint
files ("HMC1") hold every network tensor in the canonical order defined by
GnnParams.tensors(), same scalar encoding, with a trailing 64-bit checksum
(first 8 bytes of the SHA-256 of the body).  Writers go through a temp file
plus os.replace so a crash never leaves a half-written artifact behind.
"""

import csv
import hashlib
import io
import os
import struct
import tempfile
import numpy as np
from dataclasses import dataclass

from .gnn import params_from_tensors
from .surface import ChannelSample, noise_variance

DATASET_MAGIC = b"HMB1"
CHECKPOINT_MAGIC = b"HMC1"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
_DS_HEADER = struct.Struct("<4s5IdI")
_CK_HEADER = struct.Struct("<4sII")


class DataFormatError(ValueError):
    """A file failed structural validation."""


class ChecksumError(DataFormatError):
    """Stored and recomputed checkpoint checksums disagree."""


def _atomic_write(path, payload):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-holobeam-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Dataset:
    """In-memory channel corpus plus the header metadata."""

    channels: np.ndarray
    n_feeds: int
    snr_db: float
    flags: int = 0

    @property
    def n_samples(self):
        return self.channels.shape[0]

    @property
    def n_t(self):
        return self.channels.shape[1]

    @property
    def n_users(self):
        return self.channels.shape[2]

    @property
    def noise_var(self):
        return noise_variance(self.snr_db)

    @property
    def p_max(self):
        return 1.0

    def sample(self, i):
        return ChannelSample(channel=self.channels[i], noise_var=self.noise_var,
                             p_max=self.p_max)

    def samples(self):
        return [self.sample(i) for i in range(self.n_samples)]


def write_dataset(path, channels, n_feeds, snr_db, flags=0):
    """Serialize a channel corpus; channels is (count, N_t, K) complex."""
    h = np.asarray(channels, dtype="<c16")
    if h.ndim != 3:
        raise ValueError("channels must be (count, N_t, K)")
    if not np.all(np.isfinite(h)):
        raise ValueError("refusing to write non-finite channel entries")
    count, n_t, k = h.shape
    header = _DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n_t, k,
                             int(n_feeds), count, float(snr_db), int(flags))
    _atomic_write(path, header + np.ascontiguousarray(h).tobytes())


def read_dataset(path):
    """Parse a dataset file; structural problems raise with byte offsets."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DS_HEADER.size:
        raise DataFormatError(f"{path}: truncated header, {len(blob)} bytes "
                              f"< {_DS_HEADER.size}")
    magic, version, n_t, k, n_feeds, count, snr_db, flags = \
        _DS_HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported dataset version {version}")
    if n_t < 1 or k < 1 or n_feeds < 1:
        raise DataFormatError(f"{path}: nonpositive dimensions in header")
    expected = count * n_t * k * 16
    body = len(blob) - _DS_HEADER.size
    if body != expected:
        raise DataFormatError(
            f"{path}: body holds {body} bytes from offset {_DS_HEADER.size} "
            f"but the header promises {expected} ({count} samples)")
    h = np.frombuffer(blob, dtype="<c16", offset=_DS_HEADER.size).reshape(count, n_t, k)
    if not np.all(np.isfinite(h)):
        flat = np.flatnonzero(~np.isfinite(h.reshape(count, -1)).all(axis=1))
        first = int(flat[0])
        offset = _DS_HEADER.size + first * n_t * k * 16
        raise DataFormatError(f"{path}: non-finite entries in sample {first} "
                              f"near offset {offset}")
    return Dataset(channels=h.copy(), n_feeds=n_feeds, snr_db=snr_db, flags=flags)


def _checkpoint_body(params):
    parts = []
    for _, tensor in params.tensors():
        parts.append(np.ascontiguousarray(tensor, dtype="<c16").tobytes())
    return b"".join(parts)


def _checksum(body):
    return struct.unpack("<Q", hashlib.sha256(body).digest()[:8])[0]


def write_checkpoint(path, params):
    dims = params.layer_dims
    header = _CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    body = _checkpoint_body(params)
    tail = struct.pack("<Q", _checksum(body))
    _atomic_write(path, header + body + tail)


def _tensor_shapes(dims):
    shapes = [(dims[0],), (dims[0],)]
    for l in range(len(dims) - 1):
        shapes.extend([(dims[l + 1], dims[l])] * 5)
    shapes.extend([(dims[-1],), (dims[-1],)])
    return shapes


def read_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CK_HEADER.size:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    magic, version, n_dims = _CK_HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    if n_dims < 2:
        raise DataFormatError(f"{path}: need at least two layer widths")
    off = _CK_HEADER.size
    if len(blob) < off + 4 * n_dims + 8:
        raise DataFormatError(f"{path}: truncated before dims array")
    dims = struct.unpack_from(f"<{n_dims}I", blob, off)
    if any(d < 1 for d in dims):
        raise DataFormatError(f"{path}: nonpositive layer width in header")
    off += 4 * n_dims
    shapes = _tensor_shapes(dims)
    body_len = sum(int(np.prod(s)) for s in shapes) * 16
    if len(blob) != off + body_len + 8:
        raise DataFormatError(
            f"{path}: file holds {len(blob) - off - 8} body bytes from offset "
            f"{off} but the dims imply {body_len}")
    body = blob[off:off + body_len]
    stored, = struct.unpack_from("<Q", blob, off + body_len)
    if stored != _checksum(body):
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupt")
    arrays = []
    pos = 0
    for shape in shapes:
        n = int(np.prod(shape)) * 16
        arrays.append(np.frombuffer(body, dtype="<c16", count=int(np.prod(shape)),
                                    offset=pos).reshape(shape).copy())
        pos += n
    if np.max(np.abs(arrays[-1].imag)) > 1e-12:
        raise DataFormatError(f"{path}: vertex readout carries an imaginary part")
    arrays[-1] = arrays[-1].real.copy()
    return params_from_tensors(dims, arrays)


def write_csv(path, header, rows):
    """RFC-4180-style CSV with one header row, written atomically."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue().encode("utf-8"))
