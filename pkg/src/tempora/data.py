"""Weather series ingestion, cleaning, normalization, windowing, and the
synthetic generator that stands in for the private station dataset.

A SeriesFrame is the cleaned hourly multivariate series; a WindowedDataset
is its supervised framing (history windows -> future temperature vectors).
"""

import csv
import dataclasses
import hashlib
import json
import math

import numpy as np

FEATURES = ("temp", "hum", "airpr", "solrad", "windvel", "winddir")

HOUR = np.timedelta64(1, "h")


class DataError(ValueError):
    """Malformed input data or an operation that cannot apply to it."""


def format_dmyh(ts):
    """Render a timestamp as 'day, month, year, hour' for reports."""
    s = np.datetime_as_string(ts, unit="h")  # YYYY-MM-DDTHH
    date, hour = s.split("T")
    year, month, day = date.split("-")
    return f"{day}, {month}, {year}, {hour}"


class SeriesFrame:
    """Hourly multivariate weather observations.

    timestamps: datetime64 array, strictly increasing at 1-hour spacing.
    columns: feature name -> float64 array, all equal length.
    Raw (non-normalized) frames must satisfy the physical ranges:
    winddir in [0, 360), hum in [0, 100], solrad >= 0, windvel >= 0.
    """

    def __init__(self, timestamps, columns, normalized=False):
        self.timestamps = np.asarray(timestamps, dtype="datetime64[s]")
        self.columns = {k: np.asarray(v, dtype=np.float64) for k, v in columns.items()}
        self.normalized = normalized
        n = len(self.timestamps)
        for name, col in self.columns.items():
            if len(col) != n:
                raise DataError(f"column {name} has {len(col)} values for {n} timestamps")
            if not np.all(np.isfinite(col)):
                raise DataError(f"column {name} contains NaN or Inf")
        if n == 0:
            raise DataError("empty series")
        deltas = np.diff(self.timestamps)
        if len(deltas) and not np.all(deltas == HOUR):
            bad = int(np.flatnonzero(deltas != HOUR)[0])
            raise DataError(
                f"timestamps must be strictly increasing at 1-hour spacing; "
                f"broken after {format_dmyh(self.timestamps[bad])}"
            )
        if not normalized:
            self._check_ranges()

    def _check_ranges(self):
        c = self.columns
        if "winddir" in c and (c["winddir"].min() < 0 or c["winddir"].max() >= 360):
            raise DataError("winddir out of range [0, 360)")
        if "hum" in c and (c["hum"].min() < 0 or c["hum"].max() > 100):
            raise DataError("hum out of range [0, 100]")
        for name in ("solrad", "windvel"):
            if name in c and c[name].min() < 0:
                raise DataError(f"{name} must be non-negative")

    def __len__(self):
        return len(self.timestamps)

    @property
    def features(self):
        return tuple(f for f in FEATURES if f in self.columns)

    def column(self, name):
        if name not in self.columns:
            raise DataError(f"unknown feature {name!r}; have {', '.join(self.features)}")
        return self.columns[name]

    def to_matrix(self, features=None):
        """Stack the named columns into an (L, F) float64 matrix."""
        feats = tuple(features) if features is not None else self.features
        return np.stack([self.column(f) for f in feats], axis=1)

    def slice(self, start, stop):
        return SeriesFrame(
            self.timestamps[start:stop],
            {k: v[start:stop] for k, v in self.columns.items()},
            normalized=self.normalized,
        )


@dataclasses.dataclass
class IngestReport:
    rows_read: int = 0
    empty_rows_removed: int = 0
    na_replaced: int = 0
    gap_hours_filled: int = 0
    gaps: list = dataclasses.field(default_factory=list)  # (timestamp str, length hours)


_NA_VALUES = {"n/a", "na", ""}

# Windowing needs a contiguous hourly grid; short sensor dropouts are
# forward-filled, anything longer aborts the ingest.
MAX_FILL_HOURS = 3


def _parse_value(raw, report):
    v = raw.strip()
    if v.lower() in _NA_VALUES:
        report.na_replaced += 1
        return 0.0
    return float(v)


def ingest_csv(path, header_map=None):
    """Parse a weather CSV into a cleaned SeriesFrame.

    The file needs a header with a `datetime` column (ISO-8601) plus the six
    feature names; `header_map` translates other spellings, e.g.
    {"temperature": "temp"}. Returns (frame, IngestReport).
    """
    header_map = {k.lower(): v for k, v in (header_map or {}).items()}
    report = IngestReport()
    rows = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        names = [header_map.get(h.strip().lower(), h.strip().lower()) for h in header]
        wanted = ("datetime",) + FEATURES
        missing = [w for w in wanted if w not in names]
        if missing:
            raise DataError(f"{path}: header is missing column(s) {', '.join(missing)}")
        idx = {w: names.index(w) for w in wanted}

        for lineno, row in enumerate(reader, start=2):
            report.rows_read += 1
            if not row or all(not cell.strip() for cell in row):
                report.empty_rows_removed += 1
                continue
            try:
                ts = np.datetime64(row[idx["datetime"]].strip())
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad datetime {row[idx['datetime']]!r}") from None
            try:
                values = [_parse_value(row[idx[f]], report) for f in FEATURES]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append((lineno, ts, values))

    if not rows:
        raise DataError(f"{path}: no data rows")

    timestamps = []
    data = [[] for _ in FEATURES]
    prev_ts = None
    for lineno, ts, values in rows:
        if prev_ts is not None:
            if ts <= prev_ts:
                raise DataError(f"{path}:{lineno}: timestamps not increasing at {ts}")
            gap = int((ts - prev_ts) / HOUR) - 1
            if gap > MAX_FILL_HOURS:
                report.gaps.append((format_dmyh(prev_ts), gap))
                raise DataError(
                    f"{path}:{lineno}: {gap}-hour gap after {format_dmyh(prev_ts)} exceeds "
                    f"the {MAX_FILL_HOURS}-hour forward-fill limit"
                )
            if gap:
                report.gaps.append((format_dmyh(prev_ts), gap))
                report.gap_hours_filled += gap
            for g in range(gap):
                timestamps.append(prev_ts + (g + 1) * HOUR)
                for j in range(len(FEATURES)):
                    data[j].append(data[j][-1])
        timestamps.append(ts)
        for j, v in enumerate(values):
            data[j].append(v)
        prev_ts = ts

    frame = SeriesFrame(
        np.array(timestamps, dtype="datetime64[s]"),
        {f: np.array(col) for f, col in zip(FEATURES, data)},
    )
    return frame, report


def write_csv(frame, path):
    """Export a frame to the canonical CSV schema (9 significant digits)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        feats = frame.features
        writer.writerow(("datetime",) + feats)
        stamps = np.datetime_as_string(frame.timestamps, unit="s")
        cols = [frame.columns[f] for f in feats]
        for i in range(len(frame)):
            writer.writerow([stamps[i]] + [f"{c[i]:.9g}" for c in cols])


class NormalizationStats:
    """Per-feature mean/std, fit on the training split only."""

    def __init__(self, stats):
        self.stats = dict(stats)  # feature -> (mean, std)
        for f, (_m, s) in self.stats.items():
            if s <= 0:
                raise DataError(f"feature {f} has non-positive std {s}; cannot normalize")

    @classmethod
    def fit(cls, frame, features=None):
        feats = tuple(features) if features is not None else frame.features
        stats = {}
        for f in feats:
            col = frame.column(f)
            mean = float(col.mean())
            std = float(col.std())
            if std == 0.0:
                raise DataError(f"feature {f} is constant; z-score normalization undefined")
            stats[f] = (mean, std)
        return cls(stats)

    def mean(self, feature):
        return self.stats[feature][0]

    def std(self, feature):
        return self.stats[feature][1]

    def content_hash(self):
        return hashlib.sha256(
            json.dumps(self.stats, sort_keys=True).encode("ascii")
        ).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"stats": self.stats}, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls({f: tuple(v) for f, v in doc["stats"].items()})


def normalize(frame, stats):
    """z-score every column covered by stats: v -> (v - mean) / std."""
    cols = {}
    for f in frame.features:
        if f not in stats.stats:
            raise DataError(f"normalization stats missing feature {f}")
        mean, std = stats.stats[f]
        cols[f] = (frame.column(f) - mean) / std
    return SeriesFrame(frame.timestamps, cols, normalized=True)


def denormalize(frame, stats):
    cols = {}
    for f in frame.features:
        mean, std = stats.stats[f]
        cols[f] = frame.column(f) * std + mean
    return SeriesFrame(frame.timestamps, cols, normalized=False)


class WindowedDataset:
    """Sliding-window supervised pairs.

    x: (samples, H, F) history windows over the chosen features;
    y: (samples, K) future temperature values. Both are strided views into
    the source frame's storage (no per-window copies).
    """

    def __init__(self, x, y, history, horizon, features):
        self.x = x
        self.y = y
        self.history = history
        self.horizon = horizon
        self.features = tuple(features)

    def __len__(self):
        return self.x.shape[0]

    def take(self, indices):
        """Materialize a contiguous batch for the given sample indices."""
        return np.ascontiguousarray(self.x[indices]), np.ascontiguousarray(self.y[indices])


def window_count(length, history, horizon):
    return length - history - horizon + 1


def make_windows(frame, features, history, horizon):
    """Frame length-L series as window_count(L,H,K) supervised samples."""
    if history < 1 or horizon < 1:
        raise DataError("history and horizon must be >= 1")
    for f in features:
        frame.column(f)  # raises on unknown feature
    temp = frame.column("temp")
    n = window_count(len(frame), history, horizon)
    if n < 1:
        raise DataError(
            f"series of length {len(frame)} too short for history {history} + horizon {horizon}"
        )
    mat = frame.to_matrix(features)
    x_all = np.lib.stride_tricks.sliding_window_view(mat, history, axis=0)
    x = x_all[:n].transpose(0, 2, 1)  # (samples, H, F) view
    y_all = np.lib.stride_tricks.sliding_window_view(temp, horizon)
    y = y_all[history:history + n]
    return WindowedDataset(x, y, history, horizon, features)


def chronological_split(frame, train_fraction):
    """Prefix/suffix split at floor(L * fraction); no shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    boundary = int(math.floor(len(frame) * train_fraction))
    if boundary < 1 or boundary >= len(frame):
        raise DataError(f"split at {train_fraction} leaves an empty side for length {len(frame)}")
    return frame.slice(0, boundary), frame.slice(boundary, len(frame))


@dataclasses.dataclass(frozen=True)
class SyntheticWeatherSpec:
    """Parameters of the synthetic hourly weather generator.

    Temperature is a seasonal plus diurnal sinusoid riding on a slow AR(1)
    weather driver shared across features via `coupling`; `noise_std` adds
    independent per-feature measurement noise. Years are 365 days flat.
    """

    seed: int = 2003
    days: int = 365
    start: str = "2003-01-01T00:00"
    base_temp: float = 9.0
    seasonal_amp: float = 8.0
    diurnal_amp: float = 4.0
    seasonal_phase: float = -math.pi / 2  # coldest around the year boundary
    diurnal_phase: float = -math.pi / 2   # coldest shortly before sunrise
    latent_ar: float = 0.98
    latent_std: float = 2.0
    coupling: tuple = (("temp", 1.0), ("hum", -4.0), ("airpr", -2.5), ("windvel", 0.6))
    noise_std: tuple = (
        ("temp", 0.25), ("hum", 2.0), ("airpr", 0.8),
        ("solrad", 12.0), ("windvel", 0.5), ("winddir", 25.0),
    )

    def validate(self, min_hours=1):
        if self.days < 1 or self.days * 24 < min_hours:
            raise DataError(f"synthetic spec too short: {self.days} days")
        if not 0.0 <= self.latent_ar < 1.0:
            raise DataError(f"latent_ar must be in [0, 1), got {self.latent_ar}")
        if any(v < 0 for _f, v in self.noise_std):
            raise DataError("noise std must be non-negative")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["coupling"] = dict(self.coupling)
        d["noise_std"] = dict(self.noise_std)
        return d


def generate_synthetic(spec):
    """Deterministically synthesize a SeriesFrame from a SyntheticWeatherSpec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.days * 24
    t = np.arange(n, dtype=np.float64)
    coupling = dict(spec.coupling)
    noise = dict(spec.noise_std)

    seasonal = spec.seasonal_amp * np.sin(2.0 * np.pi * t / 8760.0 + spec.seasonal_phase)
    diurnal = spec.diurnal_amp * np.sin(2.0 * np.pi * t / 24.0 + spec.diurnal_phase)

    # AR(1) driver with stationary std latent_std, started from stationarity.
    phi = spec.latent_ar
    innov_std = spec.latent_std * math.sqrt(1.0 - phi * phi)
    shocks = rng.normal(0.0, 1.0, size=n)
    latent = np.empty(n)
    latent[0] = spec.latent_std * shocks[0]
    for k in range(1, n):
        latent[k] = phi * latent[k - 1] + innov_std * shocks[k]

    eps = {f: rng.normal(0.0, 1.0, size=n) * noise.get(f, 0.0) for f in FEATURES}

    temp = spec.base_temp + seasonal + diurnal + coupling.get("temp", 0.0) * latent + eps["temp"]

    hum = 70.0 - 1.5 * (temp - spec.base_temp) + coupling.get("hum", 0.0) * latent + eps["hum"]
    hum = np.clip(hum, 0.0, 100.0)

    airpr = 1013.0 + coupling.get("airpr", 0.0) * latent + eps["airpr"]

    # Daylight curve: zero at night, seasonally modulated amplitude.
    hour_of_day = t % 24.0
    elevation = np.maximum(0.0, np.sin(2.0 * np.pi * (hour_of_day - 6.0) / 24.0))
    season_mod = 1.0 + 0.6 * seasonal / max(spec.seasonal_amp, 1e-12)
    solrad = np.maximum(0.0, 420.0 * elevation * season_mod + coupling.get("solrad", 0.0) * latent + eps["solrad"])

    windvel = np.maximum(0.0, 3.5 + coupling.get("windvel", 0.0) * latent + eps["windvel"])

    # Wrapped random walk: highly fluctuating and far from normal.
    dir_steps = rng.normal(0.0, 1.0, size=n) * noise.get("winddir", 0.0)
    winddir = (rng.uniform(0.0, 360.0) + np.cumsum(dir_steps)) % 360.0

    start = np.datetime64(spec.start, "s")
    timestamps = start + np.arange(n) * HOUR
    return SeriesFrame(
        timestamps,
        {"temp": temp, "hum": hum, "airpr": airpr, "solrad": solrad,
         "windvel": windvel, "winddir": winddir},
    )


_NATURAL_RANGE = {"winddir": (0.0, 360.0), "hum": (0.0, 100.0)}


def feature_histogram(frame, feature, bins=36):
    """Fixed-width binned counts over the feature's natural range.

    winddir bins over [0, 360) and hum over [0, 100]; other features bin
    over their observed min..max. Returns (counts, edges); counts sum to
    the frame length.
    """
    col = frame.column(feature)
    lo, hi = _NATURAL_RANGE.get(feature, (float(col.min()), float(col.max())))
    if lo == hi:
        hi = lo + 1.0  # constant column: single occupied bin
    counts, edges = np.histogram(col, bins=bins, range=(lo, hi))
    return counts, edges
