"""Synthetic crop-type time series with cloud masks, block splits and CSV storage.

Every sample follows a double-sigmoid phenology curve per spectral band. Raw
series keep cloudy acquisitions (bright flat spectra); the preprocessed series
drops them and resamples the clear steps onto a fixed grid inside the growing
season.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, ParseError

NUM_BANDS = 13
BAND_NAMES = tuple(f"b{i:02d}" for i in range(1, NUM_BANDS + 1))
CSV_COLUMNS = ("sample_id", "class", "block_i", "block_j", "t_index", "doy", "cloud") + BAND_NAMES
PARTITIONS = ("train", "val", "test")
MODES = ("raw", "preprocessed")
PRE_LENGTH = 23
PRE_WINDOW = (60.0, 300.0)

# soil/background reflectance and the response of each band to green biomass
_BASE = np.array([0.12, 0.10, 0.09, 0.08, 0.11, 0.14, 0.16, 0.17, 0.18, 0.09, 0.02, 0.22, 0.16])
_GREEN = np.array([-0.03, -0.03, 0.00, -0.06, -0.01, 0.10, 0.20, 0.24, 0.25, 0.07, 0.00, -0.07, -0.08])


def _quantize(a):
    """Round to 9 significant digits, the precision used on disk."""
    a = np.asarray(a, dtype=float)
    flat = np.char.mod("%.9g", a.ravel())
    return flat.astype(float).reshape(a.shape)


@dataclass(frozen=True)
class ClassPhenology:
    """Per-class ranges for the double-sigmoid parameters (uniform jitter within each)."""

    name: str
    sos: tuple[float, float]
    eos: tuple[float, float]
    k1: tuple[float, float] = (0.06, 0.10)
    k2: tuple[float, float] = (0.06, 0.10)
    amplitude: float = 1.0
    band_tint: tuple[float, ...] = (0.0,) * NUM_BANDS

    def validate(self):
        if not self.sos[1] < self.eos[0]:
            raise ConfigurationError(f"class {self.name}: onset range must end before senescence starts")
        if len(self.band_tint) != NUM_BANDS:
            raise ConfigurationError(f"class {self.name}: band_tint needs {NUM_BANDS} entries")

    def amplitudes(self):
        return self.amplitude * _GREEN + np.asarray(self.band_tint)


def _tint(**bands):
    out = [0.0] * NUM_BANDS
    for name, value in bands.items():
        out[BAND_NAMES.index(name)] = value
    return tuple(out)


DEFAULT_CLASSES = (
    ClassPhenology("winter_cereal", sos=(85, 105), eos=(185, 205), k1=(0.07, 0.11), k2=(0.08, 0.12)),
    ClassPhenology("rapeseed", sos=(80, 100), eos=(165, 185), amplitude=0.9,
                   band_tint=_tint(b03=0.04, b04=0.03, b05=0.03)),
    ClassPhenology("maize", sos=(155, 175), eos=(255, 275), k1=(0.08, 0.12)),
    ClassPhenology("sugar_beet", sos=(135, 155), eos=(275, 295), amplitude=0.85,
                   band_tint=_tint(b12=0.02, b13=0.02)),
    ClassPhenology("grassland", sos=(70, 95), eos=(280, 305), k1=(0.03, 0.06), k2=(0.03, 0.06),
                   amplitude=0.55),
)


def default_classes(n: int) -> tuple[ClassPhenology, ...]:
    """The five named profiles, extended with procedurally spaced seasons for larger C."""
    out = list(DEFAULT_CLASSES[:n])
    for c in range(len(out), n):
        k = c - len(DEFAULT_CLASSES)
        # golden-ratio spacing spreads onset and season length without repeats
        u, v = (0.618034 * (k + 1)) % 1.0, (0.754878 * (k + 1)) % 1.0
        sos = 70.0 + 110.0 * u
        length = 80.0 + 110.0 * v
        tint = [0.0] * NUM_BANDS
        tint[k % NUM_BANDS] = 0.03
        out.append(ClassPhenology(f"crop{c + 1:02d}", sos=(sos - 8, sos + 8),
                                  eos=(sos + length - 8, sos + length + 8),
                                  amplitude=0.6 + 0.4 * ((k * 0.381966) % 1.0), band_tint=tuple(tint)))
    return tuple(out)


@dataclass(frozen=True)
class GeneratorConfig:
    num_classes: int = 5
    samples_per_class: int = 400
    class_weights: Optional[tuple[float, ...]] = None
    t_raw: int = 70
    p_cloud: float = 0.3
    sigma_obs: float = 0.02
    grid: tuple[int, int] = (12, 12)
    block_jitter: float = 6.0
    cloud_texture: float = 0.2
    amplitude_jitter: float = 0.15
    classes: Optional[tuple[ClassPhenology, ...]] = None
    seed: int = 7

    @property
    def profiles(self) -> tuple[ClassPhenology, ...]:
        return self.classes if self.classes is not None else default_classes(self.num_classes)

    def validate(self):
        if not 0.0 <= self.p_cloud < 1.0:
            raise ConfigurationError(f"p_cloud must lie in [0, 1), got {self.p_cloud}")
        if self.num_classes < 1 or self.num_classes > len(self.profiles):
            raise ConfigurationError(
                f"num_classes={self.num_classes} but only {len(self.profiles)} phenology profiles defined")
        if self.samples_per_class < 0 or self.t_raw < 2 or self.sigma_obs < 0 or self.cloud_texture < 0:
            raise ConfigurationError(
                "samples_per_class >= 0, t_raw >= 2, sigma_obs >= 0 and cloud_texture >= 0 required")
        if not 0.0 <= self.amplitude_jitter < 1.0:
            raise ConfigurationError(f"amplitude_jitter must lie in [0, 1), got {self.amplitude_jitter}")
        if self.class_weights is not None and len(self.class_weights) != self.num_classes:
            raise ConfigurationError("class_weights needs one entry per class")
        for c in self.profiles[: self.num_classes]:
            c.validate()

    def class_counts(self):
        if self.class_weights is None:
            return [self.samples_per_class] * self.num_classes
        w = np.asarray(self.class_weights, dtype=float)
        return [int(round(x)) for x in self.samples_per_class * self.num_classes * w / w.sum()]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("classes") is not None:
            d["classes"] = tuple(
                ClassPhenology(**{k: tuple(v) if isinstance(v, list) else v for k, v in c.items()})
                for c in d["classes"])
        for key in ("grid", "class_weights"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SampleRecord:
    sample_id: int
    label: int
    block: tuple[int, int]
    region: str
    raw: np.ndarray
    doy: np.ndarray
    cloud: np.ndarray
    preprocessed: Optional[np.ndarray] = None

    @property
    def usable(self):
        return self.preprocessed is not None

    def series(self, mode):
        if mode == "raw":
            return self.raw
        if mode == "preprocessed":
            if self.preprocessed is None:
                raise DimensionError(f"sample {self.sample_id} has fewer than 2 clear steps")
            return self.preprocessed
        raise ConfigurationError(f"unknown mode {mode!r}")


@dataclass
class BlockGrid:
    shape: tuple[int, int]
    labels: dict  # (i, j) -> partition name

    def label_of(self, block):
        return self.labels[tuple(block)]

    def counts(self):
        return {p: sum(1 for v in self.labels.values() if v == p) for p in PARTITIONS}


def region_of(block_i, grid_rows):
    return f"region{min(3 * block_i // max(grid_rows, 1), 2)}"


def preprocess_series(raw, doy, cloud, times=None):
    """Drop cloudy steps and linearly interpolate the rest onto ``times``.

    Values outside the clear range are clamped to the nearest clear value.
    Returns None when fewer than two clear steps remain.
    """
    times = pre_times() if times is None else np.asarray(times, dtype=float)
    clear = ~np.asarray(cloud, dtype=bool)
    if clear.sum() < 2:
        return None
    t, v = np.asarray(doy, dtype=float)[clear], np.asarray(raw)[clear]
    return np.stack([np.interp(times, t, v[:, b]) for b in range(v.shape[1])], axis=1)


def pre_times():
    return np.linspace(PRE_WINDOW[0], PRE_WINDOW[1], PRE_LENGTH)


def preprocess(sample: SampleRecord):
    return preprocess_series(sample.raw, sample.doy, sample.cloud)


def acquisition_days(t_raw):
    return np.round(np.linspace(1.0, 365.0, t_raw))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def clear_sky(doy, sos, eos, k1, k2, amps):
    """Noise-free reflectance [N, T, B] for per-sample parameters [N] and amplitudes [N, B]."""
    t = np.asarray(doy)[None, :]
    season = _sigmoid(k1[:, None] * (t - sos[:, None])) - _sigmoid(k2[:, None] * (t - eos[:, None]))
    return _BASE[None, None, :] + season[:, :, None] * amps[:, None, :]


def generate(config: GeneratorConfig = GeneratorConfig()) -> "Dataset":
    config.validate()
    pheno_rng, noise_rng, cloud_rng, split_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4))
    counts = config.class_counts()
    labels = pheno_rng.permutation(np.repeat(np.arange(config.num_classes), counts))
    n = labels.size
    rows, cols = config.grid
    block_idx = pheno_rng.integers(rows * cols, size=n)
    # shared per block: shifts onset/senescence of every parcel in the block
    block_shift = pheno_rng.normal(0.0, config.block_jitter, size=(rows * cols, 2))

    profiles = config.profiles[: config.num_classes]

    def draw(attr):
        lo = np.array([getattr(p, attr)[0] for p in profiles])[labels]
        hi = np.array([getattr(p, attr)[1] for p in profiles])[labels]
        return lo + (hi - lo) * pheno_rng.random(n)

    sos = draw("sos") + block_shift[block_idx, 0]
    eos = draw("eos") + block_shift[block_idx, 1]
    k1, k2 = draw("k1"), draw("k2")
    amp_scale = pheno_rng.uniform(1 - config.amplitude_jitter, 1 + config.amplitude_jitter, size=n)
    amps = np.stack([p.amplitudes() for p in profiles])[labels] * amp_scale[:, None]

    doy = acquisition_days(config.t_raw)
    series = clear_sky(doy, sos, eos, k1, k2, amps)
    series = series + noise_rng.normal(0.0, config.sigma_obs, size=series.shape)

    # cloud draws never depend on p_cloud, so clear values stay put when it changes
    u = cloud_rng.random((n, config.t_raw))
    level = cloud_rng.uniform(0.6, 0.9, size=(n, config.t_raw))
    common = cloud_rng.normal(size=(n, config.t_raw, 1))
    own = cloud_rng.normal(size=(n, config.t_raw, NUM_BANDS))
    cloud = u < config.p_cloud
    bright = level[:, :, None] + config.cloud_texture * (0.8 * common + 0.6 * own)
    series = np.where(cloud[:, :, None], bright, series)
    series = _quantize(np.clip(series, 0.0, 1.2))

    samples = []
    for i in range(n):
        b = int(block_idx[i])
        bi, bj = divmod(b, cols)
        samples.append(SampleRecord(
            sample_id=i, label=int(labels[i]), block=(bi, bj), region=region_of(bi, rows),
            raw=series[i], doy=doy.copy(), cloud=cloud[i],
            preprocessed=preprocess_series(series[i], doy, cloud[i])))
    ds = Dataset(samples, tuple(p.name for p in profiles), config=config, grid_shape=config.grid)
    grid, _ = block_split(ds, rng=split_rng)
    ds.grid = grid
    ds.refresh_stats()
    return ds


def block_split(dataset: "Dataset", ratio=(4, 1, 1), rng=None):
    """Assign whole blocks to train/val/test in ``ratio``; samples inherit their block's label."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    rows, cols = dataset.grid_shape
    n_blocks = rows * cols
    if n_blocks < 6:
        raise DimensionError(f"need at least 6 blocks for a 4:1:1 split, got {n_blocks}")
    total = sum(ratio)
    n_train = round(n_blocks * ratio[0] / total)
    n_val = round(n_blocks * ratio[1] / total)
    order = rng.permutation(n_blocks)
    labels = {}
    for rank, b in enumerate(order):
        name = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        labels[divmod(int(b), cols)] = name
    grid = BlockGrid((rows, cols), labels)
    index = {p: [s.sample_id for s in dataset.samples if labels[s.block] == p] for p in PARTITIONS}
    return grid, index


def collate(samples: Sequence[SampleRecord], nominal_t: int, mode: str, num_classes: int,
            stats=None):
    """Stack samples into ``X`` [N, nominal_t, 13] and one-hot ``Y`` [N, C].

    Series are cropped or zero-padded (zero reflectance) to ``nominal_t``;
    ``stats = (mean, std)`` standardises each band.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    x = np.zeros((len(samples), nominal_t, NUM_BANDS))
    y = np.zeros((len(samples), num_classes))
    for k, s in enumerate(samples):
        if not 0 <= s.label < num_classes:
            raise ConfigurationError(f"sample {s.sample_id}: unknown class id {s.label}")
        v = s.series(mode)[:nominal_t]
        x[k, : len(v)] = v
        y[k, s.label] = 1.0
    if stats is not None:
        mean, std = stats
        x = (x - mean) / std
    return x, y


class Dataset:
    """In-memory dataset: samples, class names, block partition and band statistics."""

    def __init__(self, samples, class_names, config=None, grid=None, grid_shape=None, stats=None):
        self.samples = list(samples)
        self.class_names = tuple(class_names)
        self.config = config
        self.grid = grid
        if grid_shape is None:
            grid_shape = grid.shape if grid is not None else _infer_grid(self.samples)
        self.grid_shape = tuple(grid_shape)
        self.stats = stats or {}
        self._cache = {}

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self):
        return len(self.class_names)

    def nominal_length(self, mode):
        if mode == "preprocessed":
            return PRE_LENGTH
        if self.config is not None:
            return self.config.t_raw
        return max((len(s.raw) for s in self.samples), default=0)

    def partition(self, name):
        if name == "all" or self.grid is None:
            return list(self.samples)
        if name not in PARTITIONS:
            raise ConfigurationError(f"unknown partition {name!r}")
        return [s for s in self.samples if self.grid.label_of(s.block) == name]

    def refresh_stats(self):
        """Per-band mean/std over the training partition for both modes."""
        train = self.partition("train")
        self.stats = {}
        for mode in MODES:
            rows = [s.series(mode) for s in train if mode == "raw" or s.usable]
            if not rows:
                continue
            flat = np.concatenate(rows, axis=0)
            std = flat.std(axis=0)
            self.stats[mode] = (flat.mean(axis=0), np.where(std > 0, std, 1.0))
        self._cache = {}

    def tensors(self, mode, partition="all"):
        """Standardised (X, Y, samples) for a partition; unusable samples are skipped in
        preprocessed mode."""
        key = (mode, partition)
        if key not in self._cache:
            samples = [s for s in self.partition(partition) if mode == "raw" or s.usable]
            x, y = collate(samples, self.nominal_length(mode), mode, self.num_classes,
                           self.stats.get(mode))
            self._cache[key] = (x, y, samples)
        return self._cache[key]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.class_names != other.class_names or len(self) != len(other)
                or self.grid_shape != other.grid_shape or self.config != other.config):
            return False
        if (self.grid is None) != (other.grid is None) or (
                self.grid is not None and self.grid.labels != other.grid.labels):
            return False
        if self.stats.keys() != other.stats.keys() or any(
                not _same(a, b) for m in self.stats for a, b in zip(self.stats[m], other.stats[m])):
            return False
        return all(_same_sample(a, b) for a, b in zip(self.samples, other.samples))

    __hash__ = None


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def _same_sample(a, b):
    if (a.sample_id, a.label, tuple(a.block), a.region) != (b.sample_id, b.label, tuple(b.block), b.region):
        return False
    if (a.preprocessed is None) != (b.preprocessed is None):
        return False
    return (_same(a.raw, b.raw) and _same(a.doy, b.doy) and _same(a.cloud, b.cloud)
            and (a.preprocessed is None or _same(a.preprocessed, b.preprocessed)))


def _infer_grid(samples):
    if not samples:
        return (0, 0)
    return (max(s.block[0] for s in samples) + 1, max(s.block[1] for s in samples) + 1)


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def save(dataset: Dataset, path):
    """Write the CSV (one row per sample and time step) plus its JSON sidecar."""
    path = Path(path)
    lines = [",".join(CSV_COLUMNS)]
    for s in dataset.samples:
        bi, bj = s.block
        for t in range(len(s.raw)):
            vals = ",".join("%.9g" % v for v in s.raw[t])
            lines.append(f"{s.sample_id},{s.label},{bi},{bj},{t},{'%.9g' % s.doy[t]},"
                         f"{int(s.cloud[t])},{vals}")
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "format": "attnseries-dataset/1",
        "class_names": list(dataset.class_names),
        "grid_shape": list(dataset.grid_shape),
        "num_rows": len(lines) - 1,
        "num_samples": len(dataset.samples),
        "regions": {str(s.sample_id): s.region for s in dataset.samples},
        "config": None if dataset.config is None else dataset.config.to_dict(),
        "partition": None if dataset.grid is None else [
            [i, j, lab] for (i, j), lab in sorted(dataset.grid.labels.items())],
        "stats": {m: {"mean": list(map(float, a)), "std": list(map(float, b))}
                  for m, (a, b) in dataset.stats.items()},
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=1))


def load(path) -> Dataset:
    """Inverse of :func:`save`. Malformed rows raise ParseError carrying the line number."""
    path = Path(path)
    text = path.read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file, expected a header", line=1)
    header = tuple(lines[0].strip().split(","))
    if header != CSV_COLUMNS:
        raise ParseError(f"unexpected header {lines[0]!r}", line=1)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"sidecar {side.name}: {exc.msg}", line=exc.lineno) from exc

    groups = {}
    order = []
    ncol = len(CSV_COLUMNS)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != ncol:
            raise ParseError(f"expected {ncol} fields, found {len(parts)}", line=lineno)
        try:
            sid, label, bi, bj, t = (int(p) for p in parts[:5])
            doy = float(parts[5])
            cloud = int(parts[6])
            bands = [float(p) for p in parts[7:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        if cloud not in (0, 1):
            raise ParseError(f"cloud flag must be 0 or 1, got {cloud}", line=lineno)
        if not all(math.isfinite(v) and v >= 0 for v in bands):
            raise ParseError("reflectances must be finite and non-negative", line=lineno)
        rec = groups.get(sid)
        if rec is None:
            if t != 0:
                raise ParseError(f"sample {sid} starts at t_index {t}, expected 0", line=lineno)
            rec = groups[sid] = {"label": label, "block": (bi, bj), "rows": [], "doy": [], "cloud": []}
            order.append(sid)
        else:
            if order[-1] != sid:
                raise ParseError(f"rows of sample {sid} are not contiguous", line=lineno)
            if t != len(rec["rows"]) or (label, (bi, bj)) != (rec["label"], rec["block"]):
                raise ParseError(f"sample {sid}: inconsistent row", line=lineno)
        rec["rows"].append(bands)
        rec["doy"].append(doy)
        rec["cloud"].append(bool(cloud))
    n_rows = len(lines) - 1
    if "num_rows" in meta and meta["num_rows"] != n_rows:
        raise ParseError(f"truncated file: sidecar lists {meta['num_rows']} rows, found {n_rows}",
                         line=len(lines) + 1)

    config = GeneratorConfig.from_dict(meta["config"]) if meta.get("config") else None
    grid_shape = tuple(meta["grid_shape"]) if "grid_shape" in meta else None
    rows_n = grid_shape[0] if grid_shape else 0
    regions = meta.get("regions", {})
    samples = []
    for sid in order:
        rec = groups[sid]
        raw = np.array(rec["rows"], dtype=float)
        doy = np.array(rec["doy"], dtype=float)
        cloud = np.array(rec["cloud"], dtype=bool)
        samples.append(SampleRecord(
            sid, rec["label"], rec["block"],
            regions.get(str(sid), region_of(rec["block"][0], rows_n or rec["block"][0] + 1)),
            raw, doy, cloud, preprocess_series(raw, doy, cloud)))
    if "class_names" in meta:
        class_names = meta["class_names"]
    else:
        class_names = [f"class{c}" for c in range(max((s.label for s in samples), default=-1) + 1)]
    grid = None
    if meta.get("partition"):
        grid = BlockGrid(grid_shape, {(i, j): lab for i, j, lab in meta["partition"]})
    stats = {m: (np.array(v["mean"]), np.array(v["std"])) for m, v in meta.get("stats", {}).items()}
    ds = Dataset(samples, class_names, config=config, grid=grid, grid_shape=grid_shape, stats=stats)
    if not stats and samples:
        ds.refresh_stats()
    return ds
