"""Dataset generation, splitting, and bit-exact binary persistence.

Three little-endian binary formats, each with a 4-byte magic and a u32
version: "PTDS" datasets, "PTCK" network checkpoints, "PTOP" projection
operators. Readings and images are stored as float32, PCA statistics as
float64. Image exports (PGM16/PNG) are min-max scaled with the scale
factors written to a text sidecar so exports are invertible.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from PIL import Image

from .geometry import CameraSet, Grid, ProjectionOperator, assemble_projection
from .model import Network, NetworkConfig
from .pca import PCAModel, choose_rank, fit
from .phantom import MODE_ANALYTIC, MODE_DISCRETE, PhantomSpec, make_example, sample_phantom

MAGIC_DATASET = b"PTDS"
MAGIC_CHECKPOINT = b"PTCK"
MAGIC_OPERATOR = b"PTOP"
FORMAT_VERSION = 1

_MODE_CODES = {MODE_ANALYTIC: 0, MODE_DISCRETE: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


class DatastoreError(ValueError):
    pass


def sha256_file(path) -> bytes:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.digest()


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    shuffle_seed: int = 0

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise DatastoreError("split fractions must sum to 1")
        if any(f <= 0 for f in self.fractions):
            raise DatastoreError("split fractions must be positive")


@dataclass
class Dataset:
    readings: np.ndarray   # (N, 52) float32
    images: np.ndarray     # (N, pad_h, pad_w) float32
    seeds: np.ndarray      # (N,) uint64, per-phantom RNG seeds
    grid: Grid
    pca: PCAModel
    pca_rank: int
    spec_hash: bytes
    peak: float
    mode: str
    noise_std: float
    dataset_seed: int
    split: SplitSpec

    @property
    def n_examples(self) -> int:
        return self.readings.shape[0]


def split(ds_or_n, spec: SplitSpec):
    """Disjoint, exhaustive train/val/test index lists.

    Sizes are floor(f_train*n), floor(f_val*n), and the remainder; the
    permutation is a seeded PCG64 shuffle.
    """
    n = ds_or_n if isinstance(ds_or_n, int) else ds_or_n.n_examples
    if n < 10:
        raise DatastoreError("need at least 10 examples to split")
    rng = np.random.Generator(np.random.PCG64(spec.shuffle_seed))
    perm = rng.permutation(n)
    n_train = int(np.floor(spec.fractions[0] * n))
    n_val = int(np.floor(spec.fractions[1] * n))
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:n_train + n_val])
    test = np.sort(perm[n_train + n_val:])
    return train, val, test


def generate_dataset(n: int, spec: PhantomSpec, grid: Grid, cams: CameraSet,
                     mode: str = MODE_ANALYTIC, noise_std: float = 0.0,
                     seed: int = 0) -> Dataset:
    """n phantom (readings, image) pairs with PCA fitted on the train split.

    Seed fan-out: SeedSequence(seed).spawn(n + 2); children 0..n-1 seed the
    phantoms, child n the measurement-noise stream, child n+1 the split
    shuffle. PCA statistics are computed from the stored float32 readings
    of the training indices only.
    """
    if n < 1:
        raise DatastoreError("need at least one example")
    if mode not in _MODE_CODES:
        raise DatastoreError(f"unknown projection mode {mode!r}")
    children = np.random.SeedSequence(seed).spawn(n + 2)
    seeds = np.array([c.generate_state(1, np.uint64)[0] for c in children[:n]],
                     dtype=np.uint64)
    noise_rng = np.random.Generator(np.random.PCG64(children[n]))
    split_seed = int(children[n + 1].generate_state(1, np.uint64)[0])
    op = assemble_projection(grid, cams)
    readings = np.empty((n, cams.n_channels), dtype=np.float32)
    images = np.empty((n, grid.pad_height_px, grid.pad_width_px), dtype=np.float32)
    for i in range(n):
        ph = sample_phantom(spec, int(seeds[i]), grid)
        r, img = make_example(ph, op, mode, noise_std, noise_rng)
        readings[i] = r.astype(np.float32)
        images[i] = img.astype(np.float32)
    split_spec = SplitSpec(shuffle_seed=split_seed)
    if n >= 10:
        train_idx, _, _ = split(n, split_spec)
    else:
        train_idx = np.arange(n)  # too small to split; PCA sees everything
    pca_model = fit(readings[train_idx].astype(np.float64))
    rank = choose_rank(pca_model, 1.0 - 1e-12)
    return Dataset(readings, images, seeds, grid, pca_model, rank,
                   spec.canonical_hash(), float(images.max()), mode,
                   float(noise_std), seed, split_spec)


def _pack_grid(grid: Grid) -> bytes:
    return struct.pack("<4I4d", grid.width_px, grid.height_px,
                       grid.pad_width_px, grid.pad_height_px,
                       grid.domain_w, grid.domain_h,
                       grid.origin[0], grid.origin[1])


def _unpack_grid(buf: bytes) -> Grid:
    w, h, pw, ph, dw, dh, ox, oy = struct.unpack("<4I4d", buf)
    return Grid(w, h, pw, ph, dw, dh, (ox, oy))


_GRID_BYTES = struct.calcsize("<4I4d")


def _pack_pca(model: PCAModel, rank: int) -> bytes:
    d = model.n_features
    parts = [struct.pack("<IIB", d, rank, int(model.whiten)),
             model.mean.astype("<f8").tobytes(),
             model.components.astype("<f8").tobytes(),
             model.eigenvalues.astype("<f8").tobytes()]
    return b"".join(parts)


def _unpack_pca(f) -> tuple[PCAModel, int]:
    d, rank, whiten = struct.unpack("<IIB", f.read(9))
    mean = np.frombuffer(f.read(8 * d), "<f8").copy()
    comps = np.frombuffer(f.read(8 * d * d), "<f8").reshape(d, d).copy()
    evals = np.frombuffer(f.read(8 * d), "<f8").copy()
    return PCAModel(mean, comps, evals, bool(whiten)), rank


def save_dataset(ds: Dataset, path):
    n = ds.n_examples
    width = ds.readings.shape[1]
    with open(path, "wb") as f:
        f.write(MAGIC_DATASET)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<QI", n, width))
        f.write(_pack_grid(ds.grid))
        f.write(ds.spec_hash)
        f.write(struct.pack("<dBd", ds.peak, _MODE_CODES[ds.mode], ds.noise_std))
        f.write(struct.pack("<QQ3d", ds.dataset_seed, ds.split.shuffle_seed,
                            *ds.split.fractions))
        f.write(_pack_pca(ds.pca, ds.pca_rank))
        f.write(ds.seeds.astype("<u8").tobytes())
        f.write(ds.readings.astype("<f4").tobytes())
        f.write(ds.images.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC_DATASET:
            raise DatastoreError(f"{path}: not a dataset file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise DatastoreError(f"unsupported dataset version {version}")
        n, width = struct.unpack("<QI", f.read(12))
        grid = _unpack_grid(f.read(_GRID_BYTES))
        spec_hash = f.read(32)
        peak, mode_code, noise_std = struct.unpack("<dBd", f.read(17))
        dataset_seed, split_seed, f0, f1, f2 = struct.unpack("<QQ3d", f.read(40))
        pca_model, rank = _unpack_pca(f)
        seeds = np.frombuffer(f.read(8 * n), "<u8").copy()
        readings = np.frombuffer(f.read(4 * n * width), "<f4").reshape(n, width).copy()
        ph, pw = grid.pad_height_px, grid.pad_width_px
        images = np.frombuffer(f.read(4 * n * ph * pw), "<f4").reshape(n, ph, pw).copy()
        if f.read(1):
            raise DatastoreError(f"{path}: trailing bytes")
    return Dataset(readings, images, seeds, grid, pca_model, rank, spec_hash,
                   peak, _MODE_NAMES[mode_code], noise_std, dataset_seed,
                   SplitSpec((f0, f1, f2), split_seed))


def save_checkpoint(net: Network, pca_model: PCAModel, pca_rank: int,
                    train_seed: int, best_val_loss: float,
                    dataset_hash: bytes, path):
    cfg = net.cfg
    tensors = net.params()
    with open(path, "wb") as f:
        f.write(MAGIC_CHECKPOINT)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<9I", cfg.input_dim, cfg.fc_width, cfg.seed_maps,
                            cfg.seed_h, cfg.seed_w, cfg.block_maps,
                            cfg.n_upblocks, cfg.out_h, cfg.out_w))
        f.write(struct.pack("<Qd", train_seed, best_val_loss))
        f.write(dataset_hash if len(dataset_hash) == 32 else bytes(32))
        f.write(_pack_pca(pca_model, pca_rank))
        f.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            f.write(struct.pack("<Q", t.size))
            f.write(t.astype("<f4").tobytes())


def load_checkpoint(path):
    """Returns (net, pca_model, pca_rank, train_seed, best_val, dataset_hash)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC_CHECKPOINT:
            raise DatastoreError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise DatastoreError(f"unsupported checkpoint version {version}")
        dims = struct.unpack("<9I", f.read(36))
        cfg = NetworkConfig(*dims)
        train_seed, best_val = struct.unpack("<Qd", f.read(16))
        dataset_hash = f.read(32)
        pca_model, rank = _unpack_pca(f)
        (n_tensors,) = struct.unpack("<I", f.read(4))
        net = Network(cfg)
        params = net.params()
        if n_tensors != len(params):
            raise DatastoreError(
                f"checkpoint has {n_tensors} tensors, network expects {len(params)}")
        for p in params:
            (count,) = struct.unpack("<Q", f.read(8))
            if count != p.size:
                raise DatastoreError("checkpoint tensor size mismatch")
            p[...] = np.frombuffer(f.read(4 * count), "<f4").reshape(p.shape)
        if f.read(1):
            raise DatastoreError(f"{path}: trailing bytes")
    return net, pca_model, rank, train_seed, best_val, dataset_hash


def save_operator(op: ProjectionOperator, path):
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows = coo.row[order].astype("<u4")
    cols = coo.col[order].astype("<u4")
    vals = coo.data[order].astype("<f8")
    with open(path, "wb") as f:
        f.write(MAGIC_OPERATOR)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<IIQ", op.matrix.shape[0], op.matrix.shape[1],
                            len(vals)))
        entry = np.empty(len(vals), dtype=[("ch", "<u4"), ("px", "<u4"), ("len", "<f8")])
        entry["ch"] = rows
        entry["px"] = cols
        entry["len"] = vals
        f.write(entry.tobytes())


def load_operator_matrix(path) -> sp.csr_matrix:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC_OPERATOR:
            raise DatastoreError(f"{path}: not an operator file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise DatastoreError(f"unsupported operator version {version}")
        n_rows, n_cols, n_entries = struct.unpack("<IIQ", f.read(16))
        entry = np.frombuffer(f.read(16 * n_entries),
                              dtype=[("ch", "<u4"), ("px", "<u4"), ("len", "<f8")])
        if f.read(1):
            raise DatastoreError(f"{path}: trailing bytes")
    m = sp.csr_matrix((entry["len"], (entry["ch"], entry["px"])),
                      shape=(n_rows, n_cols))
    m.sum_duplicates()
    m.sort_indices()
    return m


FORMAT_PGM16 = "pgm16"
FORMAT_PNG = "png"


def _scale_u16(image: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi > lo:
        scaled = (image - lo) / (hi - lo) * 65535.0
    else:
        scaled = np.full_like(image, 32768.0)
    return np.round(scaled).astype(np.uint16)


def export_image(image: np.ndarray, path, fmt: str = FORMAT_PGM16):
    """Min-max scaled 16-bit export plus a sidecar with the scale factors."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise DatastoreError("image contains non-finite values")
    lo, hi = float(image.min()), float(image.max())
    data = _scale_u16(image, lo, hi)
    if fmt == FORMAT_PGM16:
        with open(path, "wb") as f:
            f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n65535\n".encode())
            f.write(data.astype(">u2").tobytes())
    elif fmt == FORMAT_PNG:
        Image.fromarray(data.astype(np.uint16)).save(path, format="PNG")
    else:
        raise DatastoreError(f"unknown export format {fmt!r}")
    with open(str(path) + ".scale.txt", "w") as f:
        f.write(f"format = {fmt}\nmin = {lo!r}\nmax = {hi!r}\n")
        if hi <= lo:
            f.write("degenerate_range = true\n")


def import_image(path) -> np.ndarray:
    """Invert export_image using the sidecar scale factors."""
    scale = {}
    with open(str(path) + ".scale.txt") as f:
        for line in f:
            key, _, value = line.partition("=")
            scale[key.strip()] = value.strip()
    lo, hi = float(scale["min"]), float(scale["max"])
    if scale["format"] == FORMAT_PGM16:
        with open(path, "rb") as f:
            if f.readline().strip() != b"P5":
                raise DatastoreError(f"{path}: not a binary PGM")
            dims = f.readline().split()
            width, height = int(dims[0]), int(dims[1])
            if f.readline().strip() != b"65535":
                raise DatastoreError(f"{path}: expected 16-bit PGM")
            data = np.frombuffer(f.read(2 * width * height), ">u2")
            data = data.reshape(height, width).astype(np.float64)
    else:
        data = np.asarray(Image.open(path), dtype=np.float64)
    if hi > lo:
        return data / 65535.0 * (hi - lo) + lo
    return np.full(data.shape, lo)


def export_composite(target: np.ndarray, output: np.ndarray, path,
                     fmt: str = FORMAT_PGM16):
    """Side-by-side target | output image on a shared intensity scale."""
    target = np.asarray(target, dtype=np.float64)
    output = np.asarray(output, dtype=np.float64)
    if target.shape != output.shape:
        raise DatastoreError("composite images must have equal shapes")
    hi = max(target.max(), output.max())
    divider = np.full((target.shape[0], 1), hi)
    export_image(np.hstack([target, divider, output]), path, fmt)
