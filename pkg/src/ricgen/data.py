"""CPT profile data model: resampling, scaling, splitting, CSV ingestion and
the deterministic synthetic compaction oracle used as the test substrate.

A soil sample pairs a pre- and post-compaction cone-resistance profile on a
fixed 28-point grid (0.25 m spacing down to 7 m) with the compaction
features (blows, fill thickness, fine content).
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

DEPTH_STEP = 0.25
MAX_DEPTH = 7.0
N_POINTS = 28
DEPTHS = np.round(np.arange(1, N_POINTS + 1) * DEPTH_STEP, 10)

CSV_HEADER = ["sample_id", "depth_m", "qc_ini_mpa", "qc_post_mpa",
              "blows", "fill_thickness_m", "fine_content_pct"]

SIGMA_FLOOR = 1e-12


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class CompactionFeatures:
    blows: float
    fill_thickness: float
    fine_content: float

    def __post_init__(self):
        if self.blows <= 0:
            raise DataError(f"blows must be positive, got {self.blows}")
        if self.fill_thickness < 0:
            raise DataError(f"fill thickness must be non-negative, got {self.fill_thickness}")
        if not 0 <= self.fine_content <= 100:
            raise DataError(f"fine content must lie in [0, 100], got {self.fine_content}")

    def as_array(self) -> np.ndarray:
        return np.array([self.blows, self.fill_thickness, self.fine_content])


@dataclass
class SoilSample:
    sample_id: str
    qc_ini: np.ndarray
    features: CompactionFeatures
    qc_post: np.ndarray | None = None

    def __post_init__(self):
        self.qc_ini = np.asarray(self.qc_ini, dtype=np.float64)
        if self.qc_ini.shape != (N_POINTS,):
            raise DataError(f"sample {self.sample_id}: expected {N_POINTS} "
                            f"depth points, got {self.qc_ini.shape}")
        if np.any(self.qc_ini <= 0):
            raise DataError(f"sample {self.sample_id}: qc_ini must be positive")
        if self.qc_post is not None:
            self.qc_post = np.asarray(self.qc_post, dtype=np.float64)
            if self.qc_post.shape != (N_POINTS,):
                raise DataError(f"sample {self.sample_id}: expected {N_POINTS} "
                                f"post-improvement points, got {self.qc_post.shape}")
            if np.any(self.qc_post <= 0):
                raise DataError(f"sample {self.sample_id}: qc_post must be positive")


@dataclass
class Dataset:
    samples: list[SoilSample]
    splits: list[str] | None = None   # per-sample: train | val | test
    provenance: str = "csv"

    def __post_init__(self):
        if self.splits is not None and len(self.splits) != len(self.samples):
            raise DataError("split assignment length does not match sample count")

    def __len__(self):
        return len(self.samples)

    def subset(self, split: str) -> "Dataset":
        if self.splits is None:
            raise DataError("dataset has no split assignment")
        picked = [s for s, tag in zip(self.samples, self.splits) if tag == split]
        return Dataset(picked, splits=[split] * len(picked), provenance=self.provenance)

    def has_targets(self) -> bool:
        return all(s.qc_post is not None for s in self.samples)


def resample_profile(depths, values, interval: float = DEPTH_STEP,
                     max_depth: float = MAX_DEPTH) -> np.ndarray:
    """Linear interpolation of a raw profile onto the fixed grid. Values past
    the last raw depth are held at the last raw value."""
    depths = np.asarray(depths, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if depths.size == 0:
        raise DataError("cannot resample an empty profile")
    if depths.size != values.size:
        raise DataError("depth and value arrays differ in length")
    if np.any(np.diff(depths) <= 0):
        raise DataError("raw depths must be strictly increasing")
    grid = np.round(np.arange(1, int(round(max_depth / interval)) + 1) * interval, 10)
    return np.interp(grid, depths, values)


@dataclass
class Scaler:
    """Per-channel standardization: x' = (x - mean) / std, population std."""
    stats: dict[str, tuple[float, float]] = field(default_factory=dict)

    CHANNELS = ("qc_ini", "qc_post", "blows", "fill_thickness", "fine_content")

    def fit(self, dataset: Dataset, split: str = "train") -> "Scaler":
        sub = dataset.subset(split) if dataset.splits is not None else dataset
        if len(sub) == 0:
            raise DataError(f"no samples in split {split!r} to fit the scaler")
        cols = {
            "qc_ini": np.concatenate([s.qc_ini for s in sub.samples]),
            "blows": np.array([s.features.blows for s in sub.samples]),
            "fill_thickness": np.array([s.features.fill_thickness for s in sub.samples]),
            "fine_content": np.array([s.features.fine_content for s in sub.samples]),
        }
        posts = [s.qc_post for s in sub.samples if s.qc_post is not None]
        cols["qc_post"] = np.concatenate(posts) if posts else cols["qc_ini"]
        for name, col in cols.items():
            mu = float(np.mean(col))
            sigma = float(np.std(col))   # population
            if sigma < SIGMA_FLOOR:
                warnings.warn(f"channel {name!r} is constant; std floored at {SIGMA_FLOOR}")
                sigma = SIGMA_FLOOR
            self.stats[name] = (mu, sigma)
        return self

    def _check(self, channel: str):
        if channel not in self.stats:
            raise DataError(f"scaler not fitted for channel {channel!r}")

    def transform(self, channel: str, x):
        self._check(channel)
        mu, sigma = self.stats[channel]
        return (np.asarray(x, dtype=np.float64) - mu) / sigma

    def inverse(self, channel: str, x):
        self._check(channel)
        mu, sigma = self.stats[channel]
        return np.asarray(x, dtype=np.float64) * sigma + mu

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.stats.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(stats={k: (float(v[0]), float(v[1])) for k, v in d.items()})


def largest_remainder_sizes(n: int, fractions) -> list[int]:
    fractions = np.asarray(fractions, dtype=np.float64)
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions.sum()}")
    exact = fractions * n
    sizes = np.floor(exact).astype(int)
    remainder = exact - sizes
    for i in np.argsort(-remainder)[: n - sizes.sum()]:
        sizes[i] += 1
    return [int(s) for s in sizes]


def split_dataset(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Seeded shuffle then contiguous cut into train/val/test."""
    n = len(dataset)
    if n < 10:
        raise DataError(f"need at least 10 samples to split, got {n}")
    sizes = largest_remainder_sizes(n, fractions)
    order = np.random.default_rng(seed).permutation(n)
    tags = [""] * n
    cursor = 0
    for tag, size in zip(("train", "val", "test"), sizes):
        for idx in order[cursor:cursor + size]:
            tags[idx] = tag
        cursor += size
    return Dataset(dataset.samples, splits=tags, provenance=dataset.provenance)


def assemble_tensors(dataset: Dataset, kind: str, scaler: Scaler,
                     split: str | None = None, require_targets: bool = True) -> dict:
    """Model-ready scaled arrays for one model family.

    FNN gets per-depth rows; FNN_S a 31-vector per sample; sequential and
    seq2seq kinds a (n, 28, 4) tensor with the features broadcast along depth.
    Seq2seq additionally gets the shifted target [0, y1..y27].
    """
    from .models import FF_KINDS, SEQ2SEQ_KINDS
    if kind not in FF_KINDS + SEQ2SEQ_KINDS:
        raise DataError(f"unknown model kind {kind!r}")
    sub = dataset.subset(split) if split is not None else dataset
    if len(sub) == 0:
        raise DataError(f"no samples in split {split!r}")
    if require_targets and not sub.has_targets():
        raise DataError("targets required: some samples lack qc_post")
    n = len(sub)
    qc_ini = scaler.transform("qc_ini", np.stack([s.qc_ini for s in sub.samples]))
    feats = np.stack([
        [scaler.transform("blows", s.features.blows),
         scaler.transform("fill_thickness", s.features.fill_thickness),
         scaler.transform("fine_content", s.features.fine_content)]
        for s in sub.samples])
    y = None
    if sub.has_targets():
        y = scaler.transform("qc_post", np.stack([s.qc_post for s in sub.samples]))

    if kind == "FNN":
        x = np.concatenate([qc_ini.reshape(n * N_POINTS, 1),
                            np.repeat(feats, N_POINTS, axis=0)], axis=1)
        out = {"x": x, "y": None if y is None else y.reshape(n * N_POINTS, 1)}
    elif kind == "FNN_S":
        out = {"x": np.concatenate([qc_ini, feats], axis=1), "y": y}
    else:
        x = np.concatenate([qc_ini[:, :, None],
                            np.broadcast_to(feats[:, None, :], (n, N_POINTS, 3))], axis=2)
        out = {"x": np.ascontiguousarray(x), "y": y}
        if kind in SEQ2SEQ_KINDS and y is not None:
            out["y_shifted"] = shift_right(y)
    return out


def shift_right(y: np.ndarray) -> np.ndarray:
    """Prepend the zero start token and drop the last element per row."""
    y = np.asarray(y, dtype=np.float64)
    return np.concatenate([np.zeros((y.shape[0], 1)), y[:, :-1]], axis=1)


# ---------------------------------------------------------------------------
# synthetic compaction oracle
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Generator for qc profiles with a documented closed form:

    qc_post(d) = qc_ini(d) * (1 + A * gauss(d; d0(T), w) - P * [d < punch_depth])

    A peaks at 100 blows and falls off on both sides, and decreases with fine
    content. P (punching penalty) is zero up to 100 blows and grows with both
    extra blows and fine content. All qc values are clamped positive.
    """
    n_samples: int = 32
    noise: float = 0.05
    blows_levels: tuple = (50.0, 100.0, 150.0, 200.0)
    fill_levels: tuple = (0.5, 3.0, 5.0)
    fine_levels: tuple = (18.0, 21.0, 33.0)
    amp_max: float = 0.8
    amp_blow_width: float = 60.0
    amp_fine_slope: float = 0.012
    punch_base: float = 0.25
    punch_depth: float = 1.5
    peak_width: float = 1.2

    def validate(self):
        if self.n_samples < 1:
            raise DataError("n_samples must be at least 1")
        if self.noise < 0:
            raise DataError("noise level must be non-negative")
        for b in self.blows_levels:
            if b <= 0:
                raise DataError(f"blows level must be positive, got {b}")

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "noise": self.noise,
                "blows_levels": list(self.blows_levels),
                "fill_levels": list(self.fill_levels),
                "fine_levels": list(self.fine_levels),
                "amp_max": self.amp_max, "amp_blow_width": self.amp_blow_width,
                "amp_fine_slope": self.amp_fine_slope,
                "punch_base": self.punch_base, "punch_depth": self.punch_depth,
                "peak_width": self.peak_width}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kwargs = dict(d)
        for key in ("blows_levels", "fill_levels", "fine_levels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def baseline_qc(depths: np.ndarray) -> np.ndarray:
    """Site-shaped pre-compaction profile: strength increasing with depth.

    Strictly increasing on purpose, so that within one noise-free sample the
    per-depth map (qc_ini, features) -> qc_post is a well-defined function
    (needed by the per-depth model kind, which has no depth input)."""
    return 1.5 + 0.9 * depths + 4.5 * (1.0 - np.exp(-depths / 1.5))


def synth_response(config: SynthConfig, features: CompactionFeatures,
                   depths: np.ndarray) -> np.ndarray:
    """Noise-free multiplicative response factor qc_post / qc_ini."""
    b, t, f = features.blows, features.fill_thickness, features.fine_content
    amp = (config.amp_max
           * np.exp(-((b - 100.0) / config.amp_blow_width) ** 2)
           * max(0.2, 1.0 - config.amp_fine_slope * (f - 18.0)))
    d0 = min(0.6 + 0.45 * t, 3.0)
    gauss = np.exp(-((depths - d0) ** 2) / (2.0 * config.peak_width ** 2))
    punch = (config.punch_base * max(0.0, b - 100.0) / 100.0 * (f / 33.0)
             * (depths < config.punch_depth))
    return 1.0 + amp * gauss - punch


def synth_generate(config: SynthConfig, seed: int = 0) -> Dataset:
    """Deterministic synthetic dataset; with noise=0 each sample is a pure
    function of its features and the config."""
    config.validate()
    rng = np.random.default_rng(seed)
    grid = [CompactionFeatures(b, t, f)
            for f in config.fine_levels
            for t in config.fill_levels
            for b in config.blows_levels]
    samples = []
    for i in range(config.n_samples):
        features = grid[i % len(grid)]
        qc_ini = baseline_qc(DEPTHS)
        if config.noise > 0:
            # smooth seeded perturbation plus white noise
            phase = rng.uniform(0, 2 * np.pi)
            freq = rng.uniform(0.5, 1.5)
            qc_ini = qc_ini * (1.0 + config.noise * np.sin(freq * DEPTHS + phase))
            qc_ini = qc_ini * (1.0 + config.noise * 0.5 * rng.standard_normal(N_POINTS))
        qc_post = qc_ini * synth_response(config, features, DEPTHS)
        if config.noise > 0:
            # post-compaction deviations are depth-correlated in real CPT
            # soundings: a smooth seeded perturbation that is NOT a function
            # of (qc_ini, features), plus a small white component
            phase = rng.uniform(0, 2 * np.pi)
            freq = rng.uniform(0.5, 1.5)
            qc_post = qc_post * (1.0 + config.noise * np.sin(freq * DEPTHS + phase))
            qc_post = qc_post * (1.0 + config.noise * 0.25 * rng.standard_normal(N_POINTS))
        samples.append(SoilSample(
            sample_id=f"synth-{i:03d}",
            qc_ini=np.maximum(qc_ini, 0.05),
            qc_post=np.maximum(qc_post, 0.05),
            features=features))
    return Dataset(samples, provenance="synthetic")


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def save_csv(dataset: Dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in dataset.samples:
            for j, d in enumerate(DEPTHS):
                post = None if s.qc_post is None else s.qc_post[j]
                writer.writerow([s.sample_id, _fmt(d), _fmt(s.qc_ini[j]), _fmt(post),
                                 _fmt(s.features.blows), _fmt(s.features.fill_thickness),
                                 _fmt(s.features.fine_content)])


def load_csv(path) -> Dataset:
    groups: dict[str, list[tuple[int, list[str]]]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != CSV_HEADER:
            raise DataError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{path}: line {lineno}: expected "
                                f"{len(CSV_HEADER)} fields, got {len(row)}")
            sid = row[0]
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            groups[sid].append((lineno, row))

    samples = []
    for sid in order:
        rows = groups[sid]
        if len(rows) != N_POINTS:
            raise DataError(f"{path}: sample {sid!r} has {len(rows)} depth rows "
                            f"(line {rows[0][0]}), expected {N_POINTS}")
        qc_ini = np.empty(N_POINTS)
        qc_post = np.empty(N_POINTS)
        has_post = True
        feats = None
        for j, (lineno, row) in enumerate(rows):
            try:
                depth = float(row[1])
                qc_ini[j] = float(row[2])
                post = float(row[3]) if row[3] != "" else None
                blows = float(row[4])
                thickness = float(row[5])
                fine = float(row[6])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if abs(depth - DEPTHS[j]) > 1e-9:
                raise DataError(f"{path}: line {lineno}: depth {depth} does not "
                                f"match grid value {DEPTHS[j]}")
            if qc_ini[j] <= 0:
                raise DataError(f"{path}: line {lineno}: qc_ini must be positive")
            if post is None:
                has_post = False
            else:
                if post <= 0:
                    raise DataError(f"{path}: line {lineno}: qc_post must be positive")
                qc_post[j] = post
            row_feats = (blows, thickness, fine)
            if feats is None:
                feats = row_feats
            elif feats != row_feats:
                raise DataError(f"{path}: line {lineno}: features differ within sample {sid!r}")
        try:
            features = CompactionFeatures(*feats)
        except DataError as exc:
            raise DataError(f"{path}: sample {sid!r}: {exc}") from None
        samples.append(SoilSample(sample_id=sid, qc_ini=qc_ini,
                                  qc_post=qc_post.copy() if has_post else None,
                                  features=features))
    return Dataset(samples, provenance="csv")


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if len(a) != len(b):
        return False
    for sa, sb in zip(a.samples, b.samples):
        if sa.sample_id != sb.sample_id or sa.features != sb.features:
            return False
        if not np.array_equal(sa.qc_ini, sb.qc_ini):
            return False
        if (sa.qc_post is None) != (sb.qc_post is None):
            return False
        if sa.qc_post is not None and not np.array_equal(sa.qc_post, sb.qc_post):
            return False
    return True
