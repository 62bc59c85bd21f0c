"""Phase-object datasets: synthesis, ingestion, splitting, persistence.

Synthetic objects reproduce the low-frequency-dominated statistics of
natural-image corpora by construction: a complex Gaussian spectrum is shaped
with a radial power law so the resulting PSD falls off as
``nu^(-exponent)``, then each object is affinely rescaled to [0, f_max]
radians. The generator draws from one counter-based stream per item, so the
output is bit-identical regardless of how generation is scheduled.

On-disk container (LSPR, little-endian):
  magic "LSPR" | version u32=1 | dtype u8 | reserved 3x u8=0 |
  ny u32 | nx u32 | dy f64 | dx f64 | row-major payload
dtype codes: 0 = f32 real, 1 = f64 real, 2 = complex as interleaved f32
pairs, 3 = complex128. A dataset is a directory of LSPR files plus a
``manifest.tsv`` with one ``id<TAB>filename<TAB>role`` line per item.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .fieldcore import ComplexField, Grid2D, RealField, frequency_radius_sq, idft2
from .noise import RngStream

MANIFEST_NAME = "manifest.tsv"

_MAGIC = b"LSPR"
_VERSION = 1
_HEADER = struct.Struct("<4sIB3sIIdd")  # 36 bytes

_DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<c8"),
    3: np.dtype("<c16"),
}


@dataclass
class PhaseDataset:
    items: list  # (id, RealField) pairs, shared grid
    grid: Grid2D
    f_max: float
    provenance: dict = dc_field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    def ids(self) -> list[str]:
        return [item_id for item_id, _ in self.items]


@dataclass(frozen=True)
class SplitSpec:
    train: int
    validation: int
    test: int

    def __post_init__(self):
        if min(self.train, self.validation, self.test) < 0:
            raise DimensionError("split counts must be >= 0")

    @property
    def total(self) -> int:
        return self.train + self.validation + self.test


def gen_powerlaw_phase(grid: Grid2D, exponent: float, count: int, seed: int,
                       f_max: float) -> PhaseDataset:
    """Synthesize `count` phase objects whose radial PSD falls off with
    log-log slope ``-exponent`` (exponent 2 matches natural-image
    statistics). Values span exactly [0, f_max] per object."""
    if exponent < 0:
        raise DimensionError("PSD exponent must be >= 0")
    if count < 1:
        raise DimensionError("count must be >= 1")
    r2 = frequency_radius_sq(grid)
    shaping = np.zeros(grid.shape)
    nonzero = r2 > 0
    # PSD ~ amplitude^2, so amplitude carries half the requested slope.
    shaping[nonzero] = r2[nonzero] ** (-exponent / 4.0)
    if exponent == 0:
        shaping[~nonzero] = 0.0  # DC always zeroed; offset comes from rescaling

    items = []
    for index in range(count):
        stream = RngStream(seed, index)
        draw = stream.standard_normal((2,) + grid.shape)
        spectrum = (draw[0] + 1j * draw[1]) * shaping
        raw = idft2(ComplexField(grid, spectrum)).values.real
        lo, hi = raw.min(), raw.max()
        phase = (raw - lo) * (f_max / (hi - lo))
        items.append((f"phase_{index:05d}", RealField(grid, phase)))
    provenance = {"generator": "powerlaw", "exponent": exponent,
                  "count": count, "seed": seed, "f_max": f_max}
    return PhaseDataset(items=items, grid=grid, f_max=f_max, provenance=provenance)


def _bilinear_resample(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resampling, preserving the endpoints."""
    src_h, src_w = values.shape
    out_h, out_w = shape
    ys = np.linspace(0.0, src_h - 1.0, out_h)
    xs = np.linspace(0.0, src_w - 1.0, out_w)
    y0 = np.minimum(ys.astype(int), src_h - 2)
    x0 = np.minimum(xs.astype(int), src_w - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = values[np.ix_(y0, x0)]
    v01 = values[np.ix_(y0, x0 + 1)]
    v10 = values[np.ix_(y0 + 1, x0)]
    v11 = values[np.ix_(y0 + 1, x0 + 1)]
    return (v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx
            + v10 * fy * (1 - fx) + v11 * fy * fx)


def ingest_images(directory, grid: Grid2D, f_max: float) -> PhaseDataset:
    """Build phase objects from a directory of grayscale PGM images: each is
    bilinearly resampled to the grid and mapped linearly so full white
    becomes f_max radians. Unreadable files are skipped with a warning."""
    directory = Path(directory)
    items = []
    failures = []
    for path in sorted(directory.glob("*.pgm")):
        try:
            gray, maxval = read_pgm(path)
            if gray.shape[0] < 2 or gray.shape[1] < 2:
                raise FormatError("image smaller than 2x2")
            phase = _bilinear_resample(gray, grid.shape) * (f_max / maxval)
            items.append((path.stem, RealField(grid, phase)))
        except (FormatError, OSError) as exc:
            failures.append(f"{path.name}: {exc}")
    for msg in failures:
        warnings.warn(f"skipped {msg}", stacklevel=2)
    if not items:
        raise FormatError(f"no usable PGM images in {directory}")
    return PhaseDataset(items=items, grid=grid, f_max=f_max,
                        provenance={"generator": "ingest", "source": str(directory)})


def split(dataset: PhaseDataset, spec: SplitSpec, seed: int):
    """Deterministic shuffle-then-partition into (train, validation, test)."""
    if spec.total > len(dataset):
        raise DimensionError(
            f"split asks for {spec.total} items, dataset has {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    parts = []
    start = 0
    for n in (spec.train, spec.validation, spec.test):
        chosen = [dataset.items[i] for i in order[start:start + n]]
        parts.append(PhaseDataset(items=chosen, grid=dataset.grid,
                                  f_max=dataset.f_max,
                                  provenance=dict(dataset.provenance)))
        start += n
    return tuple(parts)


# ---------------------------------------------------------------------------
# LSPR persistence


def save_field(field, path, precision: str = "f32") -> None:
    """Write a RealField/ComplexField; `precision` is "f32" or "f64"."""
    if precision not in ("f32", "f64"):
        raise FormatError(f"unknown precision {precision!r}")
    if isinstance(field, RealField):
        code = 0 if precision == "f32" else 1
    elif isinstance(field, ComplexField):
        code = 2 if precision == "f32" else 3
    else:
        raise FormatError(f"cannot serialize {type(field).__name__}")
    g = field.grid
    header = _HEADER.pack(_MAGIC, _VERSION, code, b"\0\0\0",
                          g.ny, g.nx, g.dy, g.dx)
    payload = np.ascontiguousarray(field.values.astype(_DTYPE_CODES[code]))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_field(path):
    """Read an LSPR file back into a RealField or ComplexField."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, code, _reserved, ny, nx, dy, dx = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dtype = _DTYPE_CODES[code]
        expected = ny * nx * dtype.itemsize
        payload = fh.read(expected + 1)
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != {expected}")
    values = np.frombuffer(payload, dtype=dtype).reshape(ny, nx)
    try:
        grid = Grid2D(nx=nx, ny=ny, dx=dx, dy=dy)
        if code in (0, 1):
            return RealField(grid, values.astype(np.float64))
        return ComplexField(grid, values.astype(np.complex128))
    except DimensionError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_dataset(dataset: PhaseDataset, directory, roles: dict | None = None,
                 force: bool = False) -> None:
    """Write every item as ``<id>.lspr`` plus the manifest. Refuses to write
    into a non-empty directory unless `force` is set."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if any(directory.iterdir()) and not force:
        raise FormatError(f"{directory} is not empty (use force to overwrite)")
    lines = []
    for item_id, field in dataset.items:
        filename = f"{item_id}.lspr"
        save_field(field, directory / filename)
        role = roles.get(item_id, "item") if roles else "item"
        lines.append(f"{item_id}\t{filename}\t{role}\n")
    (directory / MANIFEST_NAME).write_text("".join(lines))


def read_manifest(directory) -> list[tuple[str, str, str]]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"missing {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        entries.append((parts[0], parts[1], parts[2]))
    return entries


def load_dataset(directory, role: str | None = None,
                 f_max: float | None = None) -> PhaseDataset:
    """Load a dataset directory, optionally keeping only one role. When
    `f_max` is not given it falls back to the maximum stored value."""
    directory = Path(directory)
    items = []
    grid = None
    for item_id, filename, item_role in read_manifest(directory):
        if role is not None and item_role != role:
            continue
        fld = load_field(directory / filename)
        if not isinstance(fld, RealField):
            raise FormatError(f"{filename}: dataset items must be real fields")
        if grid is None:
            grid = fld.grid
        elif fld.grid != grid:
            raise FormatError(f"{filename}: grid differs from the rest of the dataset")
        items.append((item_id, fld))
    if not items:
        raise FormatError(f"no items with role {role!r} in {directory}")
    if f_max is None:
        f_max = max(float(f.values.max()) for _, f in items)
    return PhaseDataset(items=items, grid=grid, f_max=f_max,
                        provenance={"generator": "load", "source": str(directory)})


# ---------------------------------------------------------------------------
# PGM image I/O (binary P5 and ASCII P2, 8- or 16-bit)


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Parse a grayscale PGM; returns (float array, maxval)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated PGM header")
        chunk = data[pos:pos + 1]
        if chunk == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif chunk.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a PGM (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if not (0 < maxval < 65536):
        raise FormatError(f"{path}: maxval {maxval} out of range")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = width * height * dtype.itemsize
        raw = data[pos:pos + need]
        if len(raw) != need:
            raise FormatError(f"{path}: truncated PGM payload")
        values = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    else:
        try:
            flat = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError as exc:
            raise FormatError(f"{path}: bad ASCII PGM payload") from exc
        if flat.size != width * height:
            raise FormatError(f"{path}: expected {width * height} samples, got {flat.size}")
        values = flat.reshape(height, width)
    return values.astype(np.float64), maxval


def write_pgm(values: np.ndarray, path) -> None:
    """Export a raster as 16-bit binary PGM, min-max scaled; the scale is
    recorded in ``<path>.scale.txt`` so values remain recoverable."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    scaled = np.zeros_like(values) if span == 0 else (values - lo) * (65535.0 / span)
    pixels = np.rint(scaled).astype(">u2")
    height, width = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode())
        fh.write(pixels.tobytes())
    Path(f"{path}.scale.txt").write_text(f"min={lo!r}\nmax={hi!r}\n")
