"""Training-set pipeline: channel realizations -> (planes, label) samples.

Each sample is the real/imaginary split of one channel matrix (two planes,
n_users x n_tx each) labeled with the class of the exhaustive-search
optimal subset.  Labels are computed on the float32-quantized planes that
actually get stored, so every stored label is exactly reproducible from
the file contents alone.

Binary layout (little-endian), followed by a plain-text manifest at
``<path>.manifest``:

    magic           4 bytes  b"MMWS"
    format_version  u32
    n_samples       u32
    n_users         u32
    n_tx            u32
    n_select        u32
    noise_power     f64      sigma^2 used for labeling
    rng_algorithm   16 bytes NUL-padded ASCII
    base_seed       u64
    planes          n_samples * 2 * n_users * n_tx  f32
    labels          n_samples  u32
"""

import struct
from dataclasses import dataclass
from math import comb

import numpy as np

from .channel import (RNG_ALGORITHM, TAG_SAMPLE, TAG_VERIFY, ChannelConfig,
                      generate_channel_matrix, substream)
from .selection import combo_rank, exhaustive_search

MAGIC = b"MMWS"
FORMAT_VERSION = 1
_HEADER_FMT = "<4sIIIIId16sQ"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)
TRAIN_FRACTION = 0.9


class DatasetFormatError(Exception):
    """Base class for dataset file problems."""


class BadMagic(DatasetFormatError):
    pass


class VersionMismatch(DatasetFormatError):
    pass


class TruncatedPayload(DatasetFormatError):
    pass


class LabelMismatch(DatasetFormatError):
    """A stored label disagrees with relabeling its stored planes."""


@dataclass
class DatasetHeader:
    n_samples: int
    n_users: int
    n_tx: int
    n_select: int
    noise_power: float
    rng_algorithm: str = RNG_ALGORITHM
    base_seed: int = 0

    @property
    def n_classes(self) -> int:
        return comb(self.n_users, self.n_select)

    def pack(self) -> bytes:
        return struct.pack(
            _HEADER_FMT, MAGIC, FORMAT_VERSION, self.n_samples, self.n_users,
            self.n_tx, self.n_select, self.noise_power,
            self.rng_algorithm.encode("ascii")[:16], self.base_seed,
        )

    @classmethod
    def unpack(cls, blob: bytes) -> "DatasetHeader":
        if len(blob) < _HEADER_SIZE:
            raise TruncatedPayload("file shorter than the fixed header")
        fields = struct.unpack(_HEADER_FMT, blob[:_HEADER_SIZE])
        if fields[0] != MAGIC:
            raise BadMagic(f"expected magic {MAGIC!r}, found {fields[0]!r}")
        if fields[1] != FORMAT_VERSION:
            raise VersionMismatch(f"format version {fields[1]}, reader supports {FORMAT_VERSION}")
        return cls(n_samples=fields[2], n_users=fields[3], n_tx=fields[4],
                   n_select=fields[5], noise_power=fields[6],
                   rng_algorithm=fields[7].rstrip(b"\x00").decode("ascii"),
                   base_seed=fields[8])


def normalize_sample(h: np.ndarray) -> np.ndarray:
    """Split a complex channel matrix into (2, n_users, n_tx) real planes."""
    return np.stack([h.real, h.imag])


def restore_channel(planes: np.ndarray) -> np.ndarray:
    """Inverse of normalize_sample (exact for float64 planes)."""
    return planes[0].astype(np.float64) + 1j * planes[1].astype(np.float64)


def label_sample(h: np.ndarray, n_select: int, noise_power: float) -> int:
    """Class label of the exhaustive-search optimal subset for this channel."""
    subset, _ = exhaustive_search(h, n_select, noise_power)
    return combo_rank(subset, h.shape[0], n_select)


def split_counts(n_samples: int):
    """(n_train, n_test) under the first-90%-train index split."""
    n_train = int(n_samples * TRAIN_FRACTION)
    return n_train, n_samples - n_train


def build_dataset(config: ChannelConfig, n_samples: int, n_select: int,
                  noise_power: float, seed: int, path) -> dict:
    """Generate, label and serialize a dataset; returns the manifest dict.

    Sample i is drawn from the Philox substream keyed by seed XOR i, so
    the byte stream is a pure function of (config, n_samples, n_select,
    noise_power, seed).
    """
    if n_samples < 1 or n_samples > 2**32 - 1:
        raise ValueError("n_samples must fit in an unsigned 32-bit count")
    if n_select > config.n_users:
        raise ValueError("cannot select more users than available")
    header = DatasetHeader(n_samples=n_samples, n_users=config.n_users,
                           n_tx=config.n_tx, n_select=n_select,
                           noise_power=float(noise_power), base_seed=int(seed))
    labels = np.empty(n_samples, dtype=np.uint32)
    with open(path, "wb") as fh:
        fh.write(header.pack())
        for i in range(n_samples):
            rng = substream(seed, index=i, tag=TAG_SAMPLE)
            h = generate_channel_matrix(config, rng)
            planes = normalize_sample(h).astype("<f4")
            labels[i] = label_sample(restore_channel(planes), n_select, noise_power)
            fh.write(planes.tobytes())
        fh.write(labels.astype("<u4").tobytes())

    n_train, n_test = split_counts(n_samples)
    manifest = {
        "magic": MAGIC.decode("ascii"),
        "format_version": FORMAT_VERSION,
        "n_samples": n_samples,
        "n_users": config.n_users,
        "n_tx": config.n_tx,
        "n_select": n_select,
        "noise_power": float(noise_power),
        "rng_algorithm": header.rng_algorithm,
        "base_seed": int(seed),
        "n_classes": header.n_classes,
        "rows_m": config.geometry.rows_m,
        "cols_n": config.geometry.cols_n,
        "spacing": config.geometry.spacing,
        "n_paths": config.n_paths,
        "path_loss": config.path_loss,
        "split_rule": "first-90-percent-train",
        "n_train": n_train,
        "n_test": n_test,
    }
    with open(f"{path}.manifest", "w") as fh:
        for key, value in manifest.items():
            fh.write(f"{key} = {value}\n")
    return manifest


def load_dataset(path, verify_fraction: float = 0.0):
    """Read a dataset file; returns (planes, labels, header).

    planes has shape (n_samples, 2, n_users, n_tx) float32.  A nonzero
    verify_fraction relabels that share of samples (chosen by a substream
    of the stored base seed) and raises LabelMismatch on any disagreement.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    header = DatasetHeader.unpack(blob)
    plane_count = header.n_samples * 2 * header.n_users * header.n_tx
    expected = _HEADER_SIZE + 4 * plane_count + 4 * header.n_samples
    if len(blob) != expected:
        raise TruncatedPayload(f"expected {expected} bytes, file has {len(blob)}")
    planes = np.frombuffer(blob, dtype="<f4", count=plane_count, offset=_HEADER_SIZE)
    planes = planes.reshape(header.n_samples, 2, header.n_users, header.n_tx).copy()
    labels = np.frombuffer(blob, dtype="<u4", count=header.n_samples,
                           offset=_HEADER_SIZE + 4 * plane_count).copy()

    if verify_fraction > 0.0:
        n_check = max(1, int(round(verify_fraction * header.n_samples)))
        rng = substream(header.base_seed, tag=TAG_VERIFY)
        picks = rng.choice(header.n_samples, size=min(n_check, header.n_samples),
                           replace=False)
        for i in picks:
            recomputed = label_sample(restore_channel(planes[i]),
                                      header.n_select, header.noise_power)
            if recomputed != int(labels[i]):
                raise LabelMismatch(
                    f"sample {i}: stored label {labels[i]}, recomputed {recomputed}")
    return planes, labels, header


def load_split(path, verify_fraction: float = 0.0):
    """Load and apply the manifest's index split.

    Returns (x_train, y_train, x_test, y_test, header).
    """
    planes, labels, header = load_dataset(path, verify_fraction=verify_fraction)
    n_train, _ = split_counts(header.n_samples)
    return (planes[:n_train], labels[:n_train].astype(np.int64),
            planes[n_train:], labels[n_train:].astype(np.int64), header)
