"""Data sources and file formats.

* synthetic images from a known sparse deconvolution model
* CIFAR-10 binary batches (1 label byte + 3072 channel-major pixel bytes per record)
* Gaussian corruption
* CSCT raw tensor files and binary PPM image grids
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .networks import ArchitectureSpec, Network, get_architecture

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)

TENSOR_MAGIC = b"CSCT"
TENSOR_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<u1"), 4: np.dtype("<i8")}
_CODE_OF = {v: k for k, v in _DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] in [-1, 1]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"images must be a nonempty [N, C, H, W] array, got {self.images.shape}")
        if self.images.min() < -1.0 or self.images.max() > 1.0:
            raise ValueError("image values must lie in [-1, 1]")

    def __len__(self):
        return self.images.shape[0]


# -- synthetic generative model -----------------------------------------------


@dataclass
class SyntheticModel:
    """Ground-truth dictionaries wired as an architecture's decoder.

    Codes at the latent layer are Bernoulli(``density``) with random sign and
    magnitude uniform in ``[mag_low, mag_high]``; images are the decoder output plus
    N(0, ``noise_std``^2), clipped to [-1, 1].
    """

    network: Network
    density: float = 0.02
    mag_low: float = 1.0
    mag_high: float = 2.0
    noise_std: float = 0.01

    @classmethod
    def random(cls, arch: str | ArchitectureSpec = "toy", seed=0, **kw) -> "SyntheticModel":
        spec = get_architecture(arch) if isinstance(arch, str) else arch
        return cls(Network(spec, rng=np.random.default_rng(seed)), **kw)

    def __post_init__(self):
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density must be in [0, 1], got {self.density}")


def sample_synthetic(model: SyntheticModel, n: int, seed) -> tuple[Dataset, np.ndarray]:
    """``n`` images and the [n, d] latent codes that generated them."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = model.network.spec.latent_dim
    support = rng.random((n, d)) < model.density
    signs = np.where(rng.random((n, d)) < 0.5, -1.0, 1.0)
    mags = rng.uniform(model.mag_low, model.mag_high, size=(n, d))
    codes = T.asarray(support * signs * mags)
    clean = model.network.decode(codes, mode="eval")
    noise = rng.normal(0.0, model.noise_std, size=clean.shape) if model.noise_std > 0 else 0.0
    images = np.clip(clean + noise, -1.0, 1.0)
    return Dataset(T.asarray(images)), codes


# -- CIFAR-10 -----------------------------------------------------------------


def load_cifar10(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    pixels = rec[:, 1:].reshape((-1,) + CIFAR_SHAPE)
    return Dataset(T.asarray(pixels) / 127.5 - 1.0, labels)


def write_cifar10(path, pixels: np.ndarray, labels) -> None:
    """Write uint8 pixels [N, 3, 32, 32] and labels in the CIFAR-10 binary layout."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if pixels.shape[1:] != CIFAR_SHAPE or labels.shape != (pixels.shape[0],):
        raise FormatError(f"bad CIFAR batch shapes {pixels.shape}, {labels.shape}")
    rec = np.concatenate([labels[:, None], pixels.reshape(len(labels), -1)], axis=1)
    Path(path).write_bytes(rec.tobytes())


def downscale2x(images: np.ndarray) -> np.ndarray:
    """2x2 average pooling (32x32 CIFAR -> 16x16 toy inputs)."""
    n, c, h, w = images.shape
    return images.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


# -- corruption ---------------------------------------------------------------


def add_gaussian_noise(ds: Dataset | np.ndarray, sigma: float, seed, clip: bool = True):
    """Add N(0, sigma^2) per pixel; clipped back to [-1, 1] unless ``clip`` is False."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    images = ds.images if isinstance(ds, Dataset) else np.asarray(ds)
    if sigma == 0:
        out = images.copy()
    else:
        out = images + np.random.default_rng(seed).normal(0.0, sigma, size=images.shape)
        if clip:
            out = np.clip(out, -1.0, 1.0)
    if isinstance(ds, Dataset) and clip:
        return Dataset(out, ds.labels)
    return out


# -- CSCT tensor files --------------------------------------------------------


def save_tensor(path, arr) -> None:
    """magic "CSCT", u32 version, u32 dtype code, u32 rank, u64 dims, raw LE payload."""
    arr = np.asarray(arr)
    if arr.ndim == 0 or 0 in arr.shape:
        raise FormatError(f"refusing to save empty or rank-0 tensor {arr.shape}")
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODE_OF:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    header = TENSOR_MAGIC + struct.pack("<III", TENSOR_VERSION, _CODE_OF[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    version, code, rank = struct.unpack_from("<III", raw, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rank == 0 or len(raw) < 16 + 8 * rank:
        raise FormatError(f"{path}: bad rank {rank}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 16)
    dt = _DTYPE_CODES[code]
    count = 1
    for d in dims:
        if d == 0:
            raise FormatError(f"{path}: zero-length dimension")
        count *= d
        if count * dt.itemsize > len(raw):
            raise FormatError(f"{path}: dims {dims} exceed file size")
    start = 16 + 8 * rank
    if len(raw) - start != count * dt.itemsize:
        raise FormatError(f"{path}: payload is {len(raw) - start} bytes, expected {count * dt.itemsize}")
    return np.frombuffer(raw, dtype=dt, offset=start).reshape(dims).astype(dt.newbyteorder("="), copy=True)


# -- PPM grids ----------------------------------------------------------------

SEPARATOR = 2


def to_uint8(images: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 255] by round((x + 1) * 127.5)."""
    images = np.asarray(images, dtype=np.float64)
    if images.min() < -1.0 or images.max() > 1.0:
        raise ValueError("image values must lie in [-1, 1]")
    return np.round((images + 1.0) * 127.5).astype(np.uint8)


def image_grid(images, rows: int = 1) -> np.ndarray:
    """Tile [n, C, H, W] images into one [H', W', 3] uint8 canvas with 2px black gaps."""
    images = images.images if isinstance(images, Dataset) else np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    n, c, h, w = images.shape
    if c == 1:
        images = np.repeat(images, 3, axis=1)
    elif c != 3:
        raise ValueError(f"need 1 or 3 channels, got {c}")
    cols = -(-n // rows)
    tiles = to_uint8(images)
    canvas = np.zeros((rows * h + SEPARATOR * (rows - 1), cols * w + SEPARATOR * (cols - 1), 3), np.uint8)
    for i in range(n):
        r, q = divmod(i, cols)
        y, x = r * (h + SEPARATOR), q * (w + SEPARATOR)
        canvas[y: y + h, x: x + w] = tiles[i].transpose(1, 2, 0)
    return canvas


def write_image_grid(images, path, rows: int = 1) -> np.ndarray:
    canvas = image_grid(images, rows)
    h, w, _ = canvas.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(canvas.tobytes())
    return canvas


def read_ppm(path) -> np.ndarray:
    """Minimal binary PPM (P6, maxval 255) reader returning [H, W, 3] uint8."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise FormatError(f"{path}: only P6 with maxval 255 is supported")
    w, h = int(fields[1]), int(fields[2])
    data = raw[pos + 1:]
    if len(data) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()
