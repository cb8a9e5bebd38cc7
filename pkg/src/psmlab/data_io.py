"""Trajectory archives (NPZ), sample dumps (CSV), provenance sidecars and train/holdout splits.

The NPY reader is self-contained so that malformed archives always surface
as :class:`FormatError` with a byte offset instead of whatever a general
loader happens to raise. Only little-endian, C-ordered ``f4``, ``f8``,
``i4`` and ``i8`` arrays are accepted.
"""
import ast
import csv
import io
import json
import struct
import zipfile
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

MAGIC = b"\x93NUMPY"
SUPPORTED = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4"), "<i8": np.dtype("<i8"), "<i4": np.dtype("<i4")}
FIELDS = {"R": "positions", "F": "forces", "E": "energies", "z": "atomic_numbers"}


@dataclass
class TrajectoryDataset:
    positions: np.ndarray
    forces: np.ndarray = None
    energies: np.ndarray = None
    atomic_numbers: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3:
            raise DataError(f"positions must have shape (frames, particles, dims), got {pos.shape}")
        self.positions = pos
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.shape != pos.shape:
                raise DataError(f"forces shape {self.forces.shape} does not match positions {pos.shape}")
        if self.energies is not None:
            e = np.asarray(self.energies, dtype=np.float64)
            if e.size != len(pos):
                raise DataError(f"{e.size} energies for {len(pos)} frames")
            self.energies = e.reshape(len(pos))
        if self.atomic_numbers is not None:
            z = np.asarray(self.atomic_numbers, dtype=np.int64).reshape(-1)
            if z.size != pos.shape[1]:
                raise DataError(f"{z.size} atomic numbers for {pos.shape[1]} particles")
            self.atomic_numbers = z

    def __len__(self):
        return len(self.positions)

    @property
    def n_particles(self):
        return self.positions.shape[1]

    @property
    def spatial_dim(self):
        return self.positions.shape[2]

    def flat_positions(self):
        return self.positions.reshape(len(self), -1)

    def flat_forces(self):
        return None if self.forces is None else self.forces.reshape(len(self), -1)

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return TrajectoryDataset(
            self.positions[idx],
            None if self.forces is None else self.forces[idx],
            None if self.energies is None else self.energies[idx],
            self.atomic_numbers,
        )

    def equals(self, other):
        """Bit-exact equality of every present field."""
        for name in FIELDS.values():
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or a.tobytes() != b.tobytes()):
                return False
        return True


def npy_bytes(array):
    """Serialise an array as NPY version 1.0 with the header padded to a multiple of 64 bytes."""
    arr = np.ascontiguousarray(array)
    descr = arr.dtype.str
    if descr not in SUPPORTED:
        raise DataError(f"cannot write dtype {descr}")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %r, }" % (descr, tuple(arr.shape))
    prefix = len(MAGIC) + 2 + 2
    pad = (-(prefix + len(header) + 1)) % 64
    header = (header + " " * pad + "\n").encode("latin1")
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header + arr.tobytes()


def parse_npy(buf, name="array"):
    """Parse one NPY payload; every malformation becomes a :class:`FormatError`."""
    if len(buf) < 10 or buf[:6] != MAGIC:
        bad = next((i for i, (a, b) in enumerate(zip(buf[:6], MAGIC)) if a != b), min(len(buf), 6))
        raise FormatError(f"{name}: bad NPY magic", offset=bad)
    major, minor = buf[6], buf[7]
    if (major, minor) == (1, 0):
        (hlen,) = struct.unpack("<H", buf[8:10])
        start = 10
    elif (major, minor) in ((2, 0), (3, 0)):
        if len(buf) < 12:
            raise FormatError(f"{name}: truncated NPY header length", offset=len(buf))
        (hlen,) = struct.unpack("<I", buf[8:12])
        start = 12
    else:
        raise FormatError(f"{name}: unsupported NPY version {major}.{minor}", offset=6)
    end = start + hlen
    if end > len(buf):
        raise FormatError(f"{name}: truncated NPY header", offset=len(buf))
    try:
        text = buf[start:end].decode("utf8" if major == 3 else "latin1")
        header = ast.literal_eval(text)
    except (ValueError, SyntaxError, UnicodeDecodeError, MemoryError, RecursionError) as exc:
        raise FormatError(f"{name}: unreadable NPY header ({type(exc).__name__})", offset=start) from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{name}: NPY header must hold exactly descr, fortran_order and shape", offset=start)
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape):
        raise FormatError(f"{name}: invalid shape {shape!r}", offset=start)
    if fortran is not False:
        if fortran is True:
            raise FormatError(f"{name}: Fortran-ordered arrays are not supported", offset=start)
        raise FormatError(f"{name}: invalid fortran_order {fortran!r}", offset=start)
    if not isinstance(descr, str) or descr not in SUPPORTED:
        raise FormatError(f"{name}: unsupported dtype {descr!r}", offset=start)
    dtype = SUPPORTED[descr]
    count = 1
    for s in shape:
        count *= s
    need = count * dtype.itemsize
    have = len(buf) - end
    if have != need:
        raise FormatError(f"{name}: expected {need} data bytes for shape {shape}, found {have}", offset=end)
    return np.frombuffer(buf, dtype=dtype, count=count, offset=end).reshape(shape).copy()


_CONTAINER_ERRORS = (
    zipfile.BadZipFile,
    zlib.error,
    EOFError,
    NotImplementedError,
    ValueError,
    OverflowError,
    struct.error,
    KeyError,
    UnicodeDecodeError,
    RuntimeError,
    OSError,
)


def read_npz_arrays(source):
    """All entries of an NPZ archive (path or bytes) as ``{name: array}``."""
    if isinstance(source, (bytes, bytearray)):
        fh = io.BytesIO(source)
        label = "<bytes>"
    else:
        label = str(source)
        try:
            fh = open(source, "rb")
        except OSError as exc:
            raise DataError(f"cannot open {label}: {exc}") from exc
    arrays = {}
    with fh:
        try:
            with zipfile.ZipFile(fh) as zf:
                for info in zf.infolist():
                    name = info.filename[:-4] if info.filename.endswith(".npy") else info.filename
                    arrays[name] = parse_npy(zf.read(info), f"{label}:{info.filename}")
        except FormatError:
            raise
        except _CONTAINER_ERRORS as exc:
            raise FormatError(f"{label}: not a readable NPZ archive ({type(exc).__name__}: {exc})") from None
    return arrays


def read_npz(source):
    """Read a trajectory archive; entries R, F, E, z map to positions, forces, energies, atomic numbers."""
    arrays = read_npz_arrays(source)
    label = "<bytes>" if isinstance(source, (bytes, bytearray)) else str(source)
    if "R" not in arrays:
        raise DataError(f"{label}: archive lacks the R (positions) entry")
    fields = {FIELDS[k]: v for k, v in arrays.items() if k in FIELDS}
    try:
        pos = fields["positions"]
        if pos.ndim == 2:
            # (frames, particles) arrays carry one coordinate per particle
            fields["positions"] = pos.reshape(len(pos), -1, 1)
            if "forces" in fields:
                fields["forces"] = fields["forces"].reshape(fields["positions"].shape)
        return TrajectoryDataset(**fields)
    except ValueError as exc:
        raise DataError(f"{label}: inconsistent archive: {exc}") from None


def npz_bytes(dataset):
    out = io.BytesIO()
    with zipfile.ZipFile(out, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, name in FIELDS.items():
            value = getattr(dataset, name)
            if value is None:
                continue
            arr = value.astype("<i8") if name == "atomic_numbers" else value.astype("<f8")
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), npy_bytes(arr))
    return out.getvalue()


def write_npz(dataset, path):
    """Write an uncompressed NPZ archive; absent optional fields are omitted."""
    data = npz_bytes(dataset)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "FirstK"
    k: int = 1000
    fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("FirstK", "RandomFraction"):
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if self.mode == "FirstK" and self.k < 0:
            raise ConfigError("FirstK needs k >= 0")
        if self.mode == "RandomFraction" and not 0.0 < self.fraction <= 1.0:
            raise ConfigError("RandomFraction needs 0 < fraction <= 1")

    def to_dict(self):
        return asdict(self)


def make_split(dataset, spec):
    """Return ``(train, holdout)``; both keep the original frame order."""
    n = len(dataset)
    if spec.mode == "FirstK":
        if spec.k > n:
            raise DataError(f"FirstK split asks for {spec.k} frames but the dataset has {n}")
        idx = np.arange(spec.k)
    else:
        m = int(round(spec.fraction * n))
        idx = np.sort(np.random.default_rng(spec.seed).choice(n, size=m, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return dataset.take(np.flatnonzero(mask)), dataset.take(np.flatnonzero(~mask))


AXES = "xyz"


def sample_header(n_particles, spatial_dim):
    if spatial_dim > 3:
        raise DataError("CSV columns are named for at most three spatial axes")
    return [f"p{i}_{AXES[a]}" for i in range(n_particles) for a in range(spatial_dim)]


def write_samples_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(sample_header(samples.n_particles, samples.spatial_dim))
        for row in samples.configurations:
            w.writerow([repr(float(v)) for v in row])


def read_samples_csv(path):
    from .metrics import SampleSet

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty sample file")
    header = rows[0]
    try:
        n_particles = max(int(h.split("_")[0][1:]) for h in header) + 1
    except (ValueError, IndexError):
        raise DataError(f"{path}: unrecognised header {header[:3]}") from None
    spatial_dim = len(header) // n_particles
    if header != sample_header(n_particles, spatial_dim):
        raise DataError(f"{path}: header does not follow the p<i>_<axis> layout")
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(values) == 0:
        values = np.empty((0, len(header)))
    if values.shape[1] != len(header):
        raise DataError(f"{path}: rows do not match the header width")
    return SampleSet(values, n_particles, spatial_dim)


def write_sidecar(path, info):
    """JSON provenance next to an artifact (``<path>.json``)."""
    from . import __version__

    doc = {"artifact": str(path), "code_version": __version__, **info}
    with open(f"{path}.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
    return doc


def read_sidecar(path):
    try:
        with open(f"{path}.json") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}.json: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)
