"""Node tables: CSV ingestion, standardization, synthetic data, perturbations, splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataIOError, PreprocessingError, SchemaError, SplitError
from .losses import DFI_THRESHOLD

NUMERIC_COLUMNS = ("fluoride", "ph", "detection_freq")
CATEGORICAL_COLUMNS = ("soil_type",)
CSV_HEADER = ("id", "lon", "lat", "fluoride", "ph", "detection_freq", "soil_type", "dfi", "region")
SOIL_TYPES = ("clay", "loam", "red_soil", "sandy")


@dataclass(frozen=True)
class Schema:
    numeric: tuple = NUMERIC_COLUMNS
    categorical: tuple = CATEGORICAL_COLUMNS

    @property
    def required(self) -> tuple:
        return ("id", "lon", "lat") + self.numeric + self.categorical + ("dfi", "region")


DEFAULT_SCHEMA = Schema()


@dataclass(frozen=True)
class Standardizer:
    columns: tuple
    mean: tuple
    scale: tuple

    def apply(self, table: "NodeTable") -> "NodeTable":
        """Standardize a raw table. Re-applying the same record is a no-op."""
        if table.standardizer == self:
            return table
        if table.standardizer is not None:
            raise PreprocessingError("table is already standardized with a different record")
        x = table.features.copy()
        for name, m, s in zip(self.columns, self.mean, self.scale):
            j = table.feature_names.index(name)
            x[:, j] = (x[:, j] - m) / s
        return replace(table, features=x, standardizer=self)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mean": list(self.mean), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(tuple(d["columns"]), tuple(d["mean"]), tuple(d["scale"]))


@dataclass(frozen=True, eq=False)
class NodeTable:
    ids: tuple
    coords: np.ndarray
    features: np.ndarray
    feature_names: tuple
    numeric_mask: np.ndarray
    dfi: np.ndarray
    region: np.ndarray
    standardizer: Standardizer | None = None
    threshold: float = DFI_THRESHOLD

    @property
    def n(self) -> int:
        return len(self.dfi)

    @property
    def label(self) -> np.ndarray:
        return (self.dfi > self.threshold).astype(np.int64)

    @property
    def numeric_columns(self) -> tuple:
        return tuple(n for n, m in zip(self.feature_names, self.numeric_mask) if m)

    def same_as(self, other: "NodeTable") -> bool:
        return (
            self.ids == other.ids
            and self.feature_names == other.feature_names
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.numeric_mask, other.numeric_mask)
            and np.array_equal(self.dfi, other.dfi)
            and np.array_equal(self.region, other.region)
        )


def _assemble(ids, coords, numeric: dict, categorical: dict, dfi, region, schema: Schema) -> NodeTable:
    """Build a raw table; categorical columns become sorted one-hot blocks."""
    cols, names, mask = [], [], []
    for name in schema.numeric:
        cols.append(np.asarray(numeric[name], dtype=np.float64))
        names.append(name)
        mask.append(True)
    for name in schema.categorical:
        values = list(categorical[name])
        for cat in sorted(set(values)):
            cols.append(np.array([1.0 if v == cat else 0.0 for v in values]))
            names.append(f"{name}={cat}")
            mask.append(False)
    return NodeTable(
        ids=tuple(str(i) for i in ids),
        coords=np.asarray(coords, dtype=np.float64).reshape(-1, 2),
        features=np.column_stack(cols) if cols else np.zeros((len(dfi), 0)),
        feature_names=tuple(names),
        numeric_mask=np.array(mask, dtype=bool),
        dfi=np.asarray(dfi, dtype=np.float64),
        region=np.asarray(region, dtype=np.int64),
    )


def load_csv(path, schema: Schema = DEFAULT_SCHEMA) -> NodeTable:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in schema.required:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    float_cols = ("lon", "lat") + schema.numeric + ("dfi",)
    parsed = {c: np.empty(len(rows)) for c in float_cols}
    region = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        line = r + 2
        for c in float_cols:
            try:
                v = float(row[c])
            except (TypeError, ValueError):
                raise SchemaError(f"{path}: line {line}: column {c!r} is not a number: {row[c]!r}") from None
            if not math.isfinite(v):
                raise SchemaError(f"{path}: line {line}: column {c!r} is not finite")
            parsed[c][r] = v
        try:
            region[r] = int(row["region"])
        except (TypeError, ValueError):
            raise SchemaError(f"{path}: line {line}: column 'region' is not an integer: {row['region']!r}") from None
    categorical = {c: [row[c].strip() for row in rows] for c in schema.categorical}
    coords = np.column_stack([parsed["lon"], parsed["lat"]])
    numeric = {c: parsed[c] for c in schema.numeric}
    return _assemble([row["id"] for row in rows], coords, numeric, categorical, parsed["dfi"], region, schema)


def write_csv(table: NodeTable, path, schema: Schema = DEFAULT_SCHEMA) -> None:
    """Write a raw table in the dataset CSV format (floats at full repr precision)."""
    if table.standardizer is not None:
        raise ValueError("write_csv expects a raw (unstandardized) table")
    names = list(table.feature_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.required)
        for i in range(table.n):
            row = [table.ids[i], repr(float(table.coords[i, 0])), repr(float(table.coords[i, 1]))]
            row += [repr(float(table.features[i, names.index(c)])) for c in schema.numeric]
            for c in schema.categorical:
                hot = [n for n in names if n.startswith(c + "=") and table.features[i, names.index(n)] == 1.0]
                row.append(hot[0].split("=", 1)[1])
            row += [repr(float(table.dfi[i])), int(table.region[i])]
            w.writerow(row)


# ---------------------------------------------------------------- standardization


def fit_standardizer(table: NodeTable, train_index) -> Standardizer:
    idx = np.asarray(train_index, dtype=np.int64)
    if len(idx) == 0:
        raise PreprocessingError("cannot fit a standardizer on an empty training split")
    means, scales = [], []
    for name in table.numeric_columns:
        col = table.features[idx, table.feature_names.index(name)]
        s = float(col.std())
        if not s > 0:
            raise PreprocessingError(f"column {name!r} has zero variance on the training split")
        means.append(float(col.mean()))
        scales.append(s)
    return Standardizer(table.numeric_columns, tuple(means), tuple(scales))


def fit_and_apply_standardizer(table: NodeTable, train_index) -> tuple[NodeTable, Standardizer]:
    record = fit_standardizer(table, train_index)
    return record.apply(table), record


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Plume-shaped synthetic dataset.

    ``bearing_deg`` is measured counterclockwise from the +lon axis, the same
    convention as edge bearings.
    """

    n_nodes: int = 1000
    bearing_deg: float = 35.0
    len_along: float = 0.4
    len_across: float = 0.05
    noise_sd: float = 0.05
    n_regions: int = 3
    seed: int = 0
    n_plumes: int = 3

    def validate(self) -> "SyntheticSpec":
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 10:
            raise ConfigError(f"n_nodes must be an integer >= 10, got {self.n_nodes}")
        if not (self.len_along > self.len_across > 0):
            raise ConfigError("need len_along > len_across > 0 (the field must be anisotropic)")
        if not self.noise_sd >= 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if int(self.n_regions) != self.n_regions or self.n_regions < 1:
            raise ConfigError(f"n_regions must be >= 1, got {self.n_regions}")
        if int(self.n_plumes) != self.n_plumes or self.n_plumes < 1:
            raise ConfigError(f"n_plumes must be >= 1, got {self.n_plumes}")
        return self


# stream order for SeedSequence.spawn; append only
_STREAMS = ("coords", "plumes", "ph", "detection", "regions", "soil", "noise")
PH_LENGTH_SCALE = 0.25
PH_FEATURES = 64
FLUORIDE_BASE = 0.1


def _streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(_STREAMS, children)}


def plume_parameters(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Plume centers ``(n_plumes, 2)`` and amplitudes ``(n_plumes,)``."""
    rng = _streams(spec.seed)["plumes"]
    centers = rng.uniform(0.15, 0.85, size=(spec.n_plumes, 2))
    amps = rng.uniform(1.0, 2.0, size=spec.n_plumes)
    return centers, amps


def plume_field(coords, spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Latent fluoride field and its derivative along the bearing direction."""
    centers, amps = plume_parameters(spec)
    b = math.radians(spec.bearing_deg)
    along = np.array([math.cos(b), math.sin(b)])
    across = np.array([-math.sin(b), math.cos(b)])
    field_ = np.zeros(len(coords))
    slope = np.zeros(len(coords))
    for c, amp in zip(centers, amps):
        u = (coords - c) @ along / spec.len_along
        v = (coords - c) @ across / spec.len_across
        k = amp * np.exp(-0.5 * (u * u + v * v))
        field_ += k
        slope += -u * k / spec.len_along
    return field_, slope


def generate_synthetic(spec: SyntheticSpec) -> NodeTable:
    """Deterministic raw table with an anisotropic fluoride plume field.

    dfi = 0.8 * fluoride + 0.3 * relu(7 - ph) + 0.4 * slope + noise, clipped to
    [0, 4], where fluoride = 0.1 + plume field (mg/L) and slope is the
    derivative of the plume field along the bearing direction.
    """
    spec.validate()
    rs = _streams(spec.seed)
    n = int(spec.n_nodes)
    coords = rs["coords"].uniform(0.0, 1.0, size=(n, 2))

    field_, slope = plume_field(coords, spec)
    fluoride = FLUORIDE_BASE + field_

    omega = rs["ph"].normal(0.0, 1.0 / PH_LENGTH_SCALE, size=(PH_FEATURES, 2))
    phase = rs["ph"].uniform(0.0, 2 * math.pi, size=PH_FEATURES)
    ph_field = math.sqrt(2.0 / PH_FEATURES) * np.cos(coords @ omega.T + phase).sum(axis=1)
    ph = 6.8 + 0.6 * ph_field

    detection = rs["detection"].uniform(0.0, 1.0, size=n)

    seeds = rs["regions"].uniform(0.0, 1.0, size=(spec.n_regions, 2))
    region = np.argmin(((coords[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2), axis=1)

    dominant = rs["soil"].integers(0, len(SOIL_TYPES), size=spec.n_regions)
    keep = rs["soil"].uniform(size=n) < 0.7
    other = rs["soil"].integers(0, len(SOIL_TYPES), size=n)
    soil_idx = np.where(keep, dominant[region], other)
    soil = [SOIL_TYPES[i] for i in soil_idx]

    noise = rs["noise"].normal(0.0, 1.0, size=n) * spec.noise_sd
    dfi = 0.8 * fluoride + 0.3 * np.maximum(7.0 - ph, 0.0) + 0.4 * slope + noise
    dfi = np.clip(dfi, 0.0, 4.0)

    return _assemble(
        range(n), coords,
        {"fluoride": fluoride, "ph": ph, "detection_freq": detection},
        {"soil_type": soil}, dfi, region, DEFAULT_SCHEMA,
    )


# ---------------------------------------------------------------- perturbations


def perturb_noise(table: NodeTable, sigma_noise: float, seed: int) -> NodeTable:
    """Add N(0, sigma^2) to the numeric feature columns.

    The same seed reuses the same standard-normal draw for every sigma, so a
    sweep over sigma scales one noise pattern.
    """
    if not sigma_noise >= 0:
        raise ConfigError(f"noise sigma must be >= 0, got {sigma_noise}")
    if sigma_noise == 0:
        return table
    cols = np.flatnonzero(table.numeric_mask)
    z = np.random.default_rng(seed).standard_normal((table.n, len(cols)))
    x = table.features.copy()
    x[:, cols] += sigma_noise * z
    return replace(table, features=x)


def perturb_dropout(table: NodeTable, missing_rate: float, seed: int) -> NodeTable:
    """Zero each numeric feature entry with probability ``missing_rate``.

    Masks are nested across rates for a fixed seed: one uniform draw is
    thresholded at the rate.
    """
    if not 0 <= missing_rate <= 1:
        raise ConfigError(f"missing rate must lie in [0, 1], got {missing_rate}")
    if missing_rate == 0:
        return table
    cols = np.flatnonzero(table.numeric_mask)
    u = np.random.default_rng(seed).uniform(size=(table.n, len(cols)))
    x = table.features.copy()
    block = x[:, cols]
    block[u < missing_rate] = 0.0
    x[:, cols] = block
    return replace(table, features=x)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "random"
    fractions: tuple = (0.7, 0.15, 0.15)
    holdout_region: int | None = None
    seed: int = 0
    val_fraction: float = 0.15

    def validate(self) -> "SplitSpec":
        if self.kind not in ("random", "region_holdout"):
            raise ConfigError(f"unknown split kind {self.kind!r}")
        if self.kind == "random":
            f = tuple(float(x) for x in self.fractions)
            if len(f) != 3 or min(f) < 0 or abs(sum(f) - 1.0) > 1e-9:
                raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {f}")
        elif self.holdout_region is None:
            raise ConfigError("region_holdout split needs holdout_region")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        return self

    def to_dict(self) -> dict:
        return {"kind": self.kind, "fractions": list(self.fractions), "holdout_region": self.holdout_region,
                "seed": self.seed, "val_fraction": self.val_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        d = dict(d)
        d["fractions"] = tuple(d["fractions"])
        return cls(**d)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def named(self, name: str) -> np.ndarray:
        if name == "all":
            return np.sort(np.concatenate([self.train, self.val, self.test]))
        try:
            return getattr(self, name)
        except AttributeError:
            raise ConfigError(f"unknown split name {name!r}") from None


def _cut(idx: np.ndarray, fractions) -> list[np.ndarray]:
    n = len(idx)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    parts = [idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]]
    return [np.sort(p) for p in parts]


def make_split(table: NodeTable, spec: SplitSpec) -> Split:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "random":
        parts = _cut(rng.permutation(table.n), spec.fractions)
        for name, frac, p in zip(("train", "val", "test"), spec.fractions, parts):
            if frac > 0 and len(p) == 0:
                raise SplitError(f"{name} split is empty")
        return Split(*parts)
    regions = np.unique(table.region)
    if len(regions) < 2:
        raise SplitError("region holdout needs at least two regions")
    if spec.holdout_region not in regions:
        raise SplitError(f"region {spec.holdout_region} does not occur in the data")
    test = np.flatnonzero(table.region == spec.holdout_region)
    rest = np.flatnonzero(table.region != spec.holdout_region)
    perm = rng.permutation(rest)
    n_val = int(round(spec.val_fraction * len(perm)))
    val, train = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if len(train) == 0:
        raise SplitError("train split is empty")
    if spec.val_fraction > 0 and len(val) == 0:
        raise SplitError("val split is empty")
    return Split(train, val, np.sort(test))
