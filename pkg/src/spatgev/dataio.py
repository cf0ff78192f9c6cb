"""Data containers, CSV readers, descriptor transforms, and run configuration.

The on-disk format for block maxima is a long-form delimited file with
columns station, year, amax; catchment descriptors live in a second file
keyed by station with coordinate columns x and y.  Descriptor transforms
follow fixed per-name conventions (log by default) and are standardized with
statistics stored from the training set so they can be replayed exactly for
new stations.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "MaximaDataset",
    "read_maxima_csv",
    "write_maxima_csv",
    "read_descriptors_csv",
    "validate_descriptors",
    "DescriptorTransform",
    "RunConfig",
    "write_json_atomic",
    "write_csv_atomic",
    "config_hash",
]


@dataclass
class MaximaDataset:
    """Block maxima for a set of stations, with coordinates and covariates."""

    station_ids: list
    sites: np.ndarray  # (J, 2)
    records: list  # list of (years ndarray, y ndarray), one per station
    covariates: np.ndarray | None = None  # (J, p) transformed design, no intercept
    covariate_names: list = field(default_factory=list)

    @property
    def n_sites(self) -> int:
        return len(self.station_ids)

    def subset(self, idx) -> "MaximaDataset":
        idx = np.asarray(idx)
        return MaximaDataset(
            station_ids=[self.station_ids[i] for i in idx],
            sites=self.sites[idx],
            records=[self.records[i] for i in idx],
            covariates=None if self.covariates is None else self.covariates[idx],
            covariate_names=list(self.covariate_names),
        )

    def filter_years(self, lo: float | None = None, hi: float | None = None) -> "MaximaDataset":
        """Keep only observations with lo <= year <= hi."""
        recs = []
        for years, y in self.records:
            keep = np.ones(years.shape, dtype=bool)
            if lo is not None:
                keep &= years >= lo
            if hi is not None:
                keep &= years <= hi
            recs.append((years[keep], y[keep]))
        return MaximaDataset(
            station_ids=list(self.station_ids), sites=self.sites.copy(), records=recs,
            covariates=None if self.covariates is None else self.covariates.copy(),
            covariate_names=list(self.covariate_names),
        )

    def design_matrix(self, names: list) -> np.ndarray:
        """Intercept plus the named covariate columns, in the order given."""
        cols = [np.ones(self.n_sites)]
        for nm in names:
            if nm not in self.covariate_names:
                raise ConfigError(f"unknown covariate {nm!r}")
            cols.append(self.covariates[:, self.covariate_names.index(nm)])
        return np.column_stack(cols)


def _open_text(path: str):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _sniff_delimiter(path: str) -> str:
    with _open_text(path) as fh:
        head = fh.readline()
    return "\t" if "\t" in head and "," not in head else ","


def read_maxima_csv(path: str, delimiter: str | None = None) -> list:
    """Read long-form (station, year, amax) rows.

    Returns a list of (station_id, year, value) tuples in file order.
    Duplicate (station, year) pairs raise DataError naming the line numbers.
    """
    if delimiter is None:
        delimiter = _sniff_delimiter(path)
    rows = []
    seen: dict = {}
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        required = ("station", "year", "amax")
        if not all(col in header for col in required):
            raise DataError(
                f"{path}: header must contain station, year, amax; got {header}"
            )
        i_st = header.index("station")
        i_yr = header.index("year")
        i_am = header.index("amax")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                st = row[i_st].strip()
                yr = int(float(row[i_yr]))
                am = float(row[i_am])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row: {exc}") from exc
            key = (st, yr)
            if key in seen:
                raise DataError(
                    f"{path}: duplicate station/year {st}/{yr} at lines "
                    f"{seen[key]} and {lineno}"
                )
            seen[key] = lineno
            rows.append((st, yr, am))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def group_maxima(rows: list, sites_by_station: dict | None = None) -> MaximaDataset:
    """Group long-form rows into per-station records, stations sorted by id."""
    by_station: dict = {}
    for st, yr, am in rows:
        by_station.setdefault(st, []).append((yr, am))
    ids = sorted(by_station)
    records = []
    for st in ids:
        pairs = sorted(by_station[st])
        years = np.array([p[0] for p in pairs], dtype=float)
        y = np.array([p[1] for p in pairs], dtype=float)
        records.append((years, y))
    if sites_by_station is not None:
        missing = [st for st in ids if st not in sites_by_station]
        if missing:
            raise DataError(f"no coordinates for stations: {missing[:5]}")
        sites = np.array([sites_by_station[st] for st in ids], dtype=float)
    else:
        sites = np.zeros((len(ids), 2))
    return MaximaDataset(station_ids=ids, sites=sites, records=records)


def write_maxima_csv(path: str, dataset: MaximaDataset) -> None:
    """Write records back to the long-form format; read_maxima_csv inverts it."""
    with open(path + ".tmp", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["station", "year", "amax"])
        for st, (years, y) in zip(dataset.station_ids, dataset.records):
            for yr, v in zip(years, y):
                writer.writerow([st, int(yr), repr(float(v))])
    os.replace(path + ".tmp", path)


_BOOL_STRINGS = {"true": 1.0, "false": 0.0, "yes": 1.0, "no": 0.0}


def _parse_cell(text: str) -> float:
    low = text.strip().lower()
    if low in _BOOL_STRINGS:
        return _BOOL_STRINGS[low]
    return float(text)


def read_descriptors_csv(path: str, delimiter: str | None = None):
    """Read a station-keyed descriptor table.

    Returns (station_ids, column_names, values) where values is (J, k) and
    column_names excludes the station key.  Coordinate columns x and y, if
    present, stay in the table like any other column.
    """
    if delimiter is None:
        delimiter = _sniff_delimiter(path)
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        lower = [h.lower() for h in header]
        if "station" not in lower:
            raise DataError(f"{path}: missing station column")
        i_st = lower.index("station")
        names = [h for k, h in enumerate(header) if k != i_st]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            st = row[i_st].strip()
            if st in ids:
                raise DataError(f"{path}:{lineno}: duplicate station {st}")
            try:
                vals = [_parse_cell(row[k]) for k in range(len(header)) if k != i_st]
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row: {exc}") from exc
            ids.append(st)
            rows.append(vals)
    if not ids:
        raise DataError(f"{path}: no data rows")
    return ids, names, np.asarray(rows, dtype=float)


# closed/open range checks for the named catchment descriptors
_DESCRIPTOR_RANGES = {
    "AREA": (0.0, math.inf, False, False),
    "FARL": (0.0, 1.0, False, True),
    "URBEXT": (0.0, math.inf, True, False),
    "BFIHOST": (0.0, 1.0, False, False),
}


def validate_descriptors(names: list, values: np.ndarray) -> None:
    """Range-check known descriptor columns and require finite values."""
    values = np.asarray(values, dtype=float)
    for j, nm in enumerate(names):
        col = values[:, j]
        if not np.all(np.isfinite(col)):
            raise DataError(f"descriptor {nm}: non-finite values")
        bounds = _DESCRIPTOR_RANGES.get(nm.upper())
        if bounds is None:
            continue
        lo, hi, lo_closed, hi_closed = bounds
        ok = (col >= lo) if lo_closed else (col > lo)
        ok &= (col <= hi) if hi_closed else (col < hi)
        if not np.all(ok):
            raise DataError(f"descriptor {nm}: values outside required range")


# ----------------------------------------------------------------------------
# Descriptor transforms
# ----------------------------------------------------------------------------

# special cases by descriptor name; everything else defaults to log
_SPECIAL_TRANSFORMS = {
    "BFIHOST": ("square", lambda v: v**2),
    "URBEXT": ("log1p", lambda v: np.log(v + 1.0)),
    "ASPBAR": ("scale100", lambda v: v / 100.0),
}


@dataclass
class DescriptorTransform:
    """Per-column transform plus standardization statistics from training data."""

    names: list
    kinds: list
    means: np.ndarray
    sds: np.ndarray

    @classmethod
    def fit(cls, names: list, values: np.ndarray) -> "DescriptorTransform":
        kinds = []
        cols = []
        for j, nm in enumerate(names):
            v = values[:, j]
            key = nm.upper()
            if key in _SPECIAL_TRANSFORMS:
                kind, fn = _SPECIAL_TRANSFORMS[key]
                if key == "URBEXT" and np.any(v < 0):
                    raise DataError(f"descriptor {nm}: negative values under log(x+1)")
                cols.append(fn(v))
            else:
                kind = "log"
                if np.any(v <= 0):
                    raise DataError(
                        f"descriptor {nm}: nonpositive values cannot be log-transformed"
                    )
                cols.append(np.log(v))
            kinds.append(kind)
        X = np.column_stack(cols) if cols else np.empty((values.shape[0], 0))
        means = X.mean(axis=0)
        sds = X.std(axis=0, ddof=0)
        if np.any(sds == 0.0):
            bad = [names[j] for j in np.where(sds == 0.0)[0]]
            raise DataError(f"constant descriptor column(s): {bad}")
        return cls(names=list(names), kinds=kinds, means=means, sds=sds)

    def apply(self, names: list, values: np.ndarray) -> np.ndarray:
        """Transform new rows with the stored statistics."""
        if list(names) != self.names:
            raise DataError("descriptor columns do not match the fitted transform")
        cols = []
        for j, (nm, kind) in enumerate(zip(self.names, self.kinds)):
            v = values[:, j]
            if kind == "square":
                t = v**2
            elif kind == "log1p":
                if np.any(v < 0):
                    raise DataError(f"descriptor {nm}: negative values under log(x+1)")
                t = np.log(v + 1.0)
            elif kind == "scale100":
                t = v / 100.0
            else:
                if np.any(v <= 0):
                    raise DataError(
                        f"descriptor {nm}: nonpositive values cannot be log-transformed"
                    )
                t = np.log(v)
            cols.append((t - self.means[j]) / self.sds[j])
        return np.column_stack(cols) if cols else np.empty((values.shape[0], 0))

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "kinds": self.kinds,
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DescriptorTransform":
        return cls(names=list(d["names"]), kinds=list(d["kinds"]),
                   means=np.asarray(d["means"]), sds=np.asarray(d["sds"]))


# ----------------------------------------------------------------------------
# Run configuration
# ----------------------------------------------------------------------------

_CONFIG_FIELDS = {
    "seed": int,
    "trend": bool,
    "t0": float,
    "covariates": list,  # names used for psi (and tau) designs
    "tau_covariates": list,
    "transform_descriptors": bool,  # false when columns are ready-made designs
    "spatial": dict,  # e.g. {"psi": true, "tau": true}
    "mesh": dict,  # interior_divisor, buffer_fraction, buffer_divisor
    "priors": dict,  # s0, rho0, eps0, sigma_beta
    "mcmc": dict,  # n_chains, n_iterations, n_kept
    "selection": dict,  # n_folds, max_steps, rule thresholds
    "cv": dict,  # split_year, n_eff_time, n_eff_space, n_samples
    "predict": dict,  # year, stations, include_nugget
    "aggregate": dict,  # stations, weights, year_range, n_blocks, periods
    "return_periods": list,
    "scenario": dict,  # synthetic generator settings
    "files": dict,  # default input paths, overridable on the command line
}

# kept in sync with simulate.Scenario (asserted in the test suite)
_SCENARIO_KEYS = {
    "n_sites", "domain_size", "n_covariates", "beta_psi", "beta_tau",
    "xi_center", "eps_phi", "s_psi", "eps_psi", "s_tau", "eps_tau",
    "range_fraction", "trend", "delta_center", "delta_sd", "years_end",
    "record_length", "record_length_range",
}

_NESTED_KEYS = {
    "spatial": {"psi", "tau", "phi", "gamma"},
    "mesh": {"interior_divisor", "buffer_fraction", "buffer_divisor",
             "site_exclusion_fraction"},
    "priors": {"s0", "rho0", "eps0", "sigma_beta"},
    "mcmc": {"n_chains", "n_iterations", "n_kept", "seed"},
    "selection": {"n_folds", "max_steps", "within_pct", "spatial_pct", "seed",
                  "grid_size", "s0", "rho0", "eps0", "sigma_beta"},
    "cv": {"split_year", "n_eff_time", "n_eff_space", "n_samples", "n_samples_trend",
           "min_start_year", "complete_through", "variants", "n_heldout", "seed"},
    "predict": {"year", "stations", "include_nugget"},
    "aggregate": {"stations", "weights", "year_range", "n_blocks", "periods",
                  "n_bootstrap", "pool_size"},
    "scenario": _SCENARIO_KEYS,
    "files": {"maxima", "sites", "targets"},
}


@dataclass
class RunConfig:
    """Validated run configuration; unknown keys are rejected."""

    raw: dict

    @classmethod
    def from_json(cls, path_or_str: str) -> "RunConfig":
        if os.path.exists(path_or_str):
            with open(path_or_str) as fh:
                text = fh.read()
        else:
            text = path_or_str
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(data) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, sub in _NESTED_KEYS.items():
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                bad = set(data[key]) - sub
                if bad:
                    raise ConfigError(f"unknown keys under {key!r}: {sorted(bad)}")
        return cls(raw=data)

    def get(self, key: str, default=None):
        return self.raw.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))


def config_hash(config: RunConfig) -> str:
    """Stable hash of the configuration for run manifests."""
    blob = json.dumps(config.raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_json_atomic(path: str, obj) -> None:
    """Write JSON via a temporary file and rename, so readers never see
    partial output."""
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_csv_atomic(path: str, header: list, rows) -> None:
    """Write a delimited table via a temporary file and rename."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)
