"""Loading, validation, and encoding of checklist datasets.

The on-disk format is three CSV files (UTF-8, comma-delimited, ``.``
decimal separator):

* ``sites.csv``       -- ``site_id,<cov1>,<cov2>,...``, one row per site.
* ``checklists.csv``  -- ``checklist_id,site_id,<obscov1>,...``.
* ``detections.csv``  -- long format ``checklist_id,species,detected``;
  rows with ``detected=0`` are permitted and ignored, and absent
  (checklist, species) pairs mean non-detection.
* ``species.csv``     -- optional, header ``species``; defines the full
  roster including never-detected species.  Without it the roster is the
  species appearing in ``detections.csv``, in order of first appearance.

Detections are stored per species as sorted arrays of checklist indices
rather than as a dense sites-by-max-visits matrix, so memory is
O(checklists + positive records) even when one site holds most of the
visits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    AllSpeciesRemoved,
    DanglingReference,
    EmptyTable,
    MissingColumn,
    ZeroVarianceColumn,
)

__all__ = [
    "SiteTable",
    "ChecklistTable",
    "DetectionStore",
    "Standardizer",
    "DesignSpec",
    "DesignResult",
    "DesignTables",
    "load_dataset",
    "build_design",
    "filter_rare_species",
]


@dataclass(frozen=True)
class SiteTable:
    """Sites with their raw environmental covariates."""

    site_ids: list[str]
    columns: list[str]
    env_raw: np.ndarray  # (N, D_raw)

    @property
    def n_sites(self) -> int:
        return self.env_raw.shape[0]


@dataclass(frozen=True)
class ChecklistTable:
    """Checklists with raw observation covariates and their site index."""

    checklist_ids: list[str]
    site_index: np.ndarray  # (K,) int, values in [0, N)
    columns: list[str]
    obs_raw: np.ndarray  # (K, D_raw)

    @property
    def n_checklists(self) -> int:
        return self.obs_raw.shape[0]


@dataclass(frozen=True)
class DetectionStore:
    """Sparse per-species detection record.

    ``detections[j]`` holds the sorted, strictly increasing checklist
    indices on which species ``j`` was recorded.  ``site_of_checklist``
    maps every checklist to its site.
    """

    species_names: list[str]
    detections: list[np.ndarray]
    site_of_checklist: np.ndarray  # (K,) int

    def __post_init__(self):
        for name, idx in zip(self.species_names, self.detections):
            if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0
                             or idx[-1] >= self.n_checklists):
                raise ValueError(
                    f"detection indices for {name!r} must be strictly "
                    f"increasing and within [0, {self.n_checklists})")

    @property
    def n_species(self) -> int:
        return len(self.species_names)

    @property
    def n_checklists(self) -> int:
        return self.site_of_checklist.shape[0]

    @property
    def n_sites(self) -> int:
        return int(self.site_of_checklist.max()) + 1 if self.site_of_checklist.size else 0

    def detection_counts(self) -> np.ndarray:
        """Number of positive records per species."""
        return np.array([idx.size for idx in self.detections], dtype=int)

    @property
    def total_detections(self) -> int:
        return int(self.detection_counts().sum())

    def memory_bytes(self) -> int:
        """Bytes held by the index arrays (O(K + total detections))."""
        return self.site_of_checklist.nbytes + sum(d.nbytes for d in self.detections)

    def to_long_format(self) -> list[tuple[str, str]]:
        """Decode back to (checklist_index_as_str?, species) pairs.

        Returns (checklist_index, species_name) tuples sorted by species
        then checklist; the inverse of the encoding up to row order.
        """
        out = []
        for name, idx in zip(self.species_names, self.detections):
            out.extend((int(k), name) for k in idx)
        return out

    def dense_matrix(self) -> np.ndarray:
        """Dense (K, J) 0/1 matrix; for small test instances only."""
        s = np.zeros((self.n_checklists, self.n_species))
        for j, idx in enumerate(self.detections):
            s[idx, j] = 1.0
        return s


@dataclass(frozen=True)
class Standardizer:
    """Column-wise location/scale transform fitted on training data.

    Continuous columns are shifted by their mean and divided by their
    sample standard deviation (ddof=1, so a column with values {1,2,3}
    maps to {-1,0,1}).  Columns flagged in ``passthrough_mask`` (indicator
    columns) pass through unchanged.
    """

    means: np.ndarray
    sds: np.ndarray
    passthrough_mask: np.ndarray  # bool per column

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        out = (raw - self.means) / self.sds
        out[:, self.passthrough_mask] = raw[:, self.passthrough_mask]
        return out

    def invert(self, standardized: np.ndarray) -> np.ndarray:
        standardized = np.asarray(standardized, dtype=float)
        out = standardized * self.sds + self.means
        out[:, self.passthrough_mask] = standardized[:, self.passthrough_mask]
        return out


@dataclass(frozen=True)
class DesignSpec:
    """How to turn a raw covariate table into a design matrix.

    quadratic_columns
        Raw column names whose squares are appended (before
        standardization), named ``<col>^2``.
    correlation_threshold
        Scanning columns left to right, a column whose absolute Pearson
        correlation (ddof=1) with any already-kept column exceeds this
        is dropped.
    indicator_columns
        Exempt from standardization and quadratic expansion; allowed to
        be constant (with a warning).
    add_intercept
        Append a constant 1 column named ``(intercept)`` after the scan,
        exempt from everything.  Used for detection designs, where the
        intercept carries the hierarchical group prior.
    """

    quadratic_columns: list[str] = field(default_factory=list)
    correlation_threshold: float = 0.95
    indicator_columns: list[str] = field(default_factory=list)
    add_intercept: bool = False


@dataclass(frozen=True)
class DesignResult:
    """A fitted design: the matrix plus everything needed to redo it."""

    design: np.ndarray
    standardizer: Standardizer
    kept_columns: list[str]
    input_columns: list[str]
    spec: DesignSpec

    def apply(self, raw: np.ndarray, columns: list[str]) -> np.ndarray:
        """Transform new raw data with the fitted pipeline."""
        raw = np.asarray(raw, dtype=float)
        cols = {c: raw[:, i] for i, c in enumerate(columns)}
        for c in self.input_columns:
            if c not in cols and c != "(intercept)" and not c.endswith("^2"):
                raise MissingColumn(c)
        out = np.empty((raw.shape[0], len(self.kept_columns)))
        for i, name in enumerate(self.kept_columns):
            if name == "(intercept)":
                out[:, i] = 1.0
            elif name.endswith("^2") and name[:-2] in cols:
                out[:, i] = cols[name[:-2]] ** 2
            else:
                out[:, i] = cols[name]
        return self.standardizer.apply(out)


@dataclass(frozen=True)
class DesignTables:
    """Fitted site and checklist designs used by the model."""

    env: DesignResult
    obs: DesignResult

    @property
    def env_design(self) -> np.ndarray:
        return self.env.design

    @property
    def obs_design(self) -> np.ndarray:
        return self.obs.design


def _read_csv(path, required: list[str]) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={c: str for c in required if c.endswith("_id") or c == "species"},
                     float_precision="round_trip")
    for col in required:
        if col not in df.columns:
            raise MissingColumn(col, str(path))
    if len(df) == 0:
        raise EmptyTable(f"{path} contains no rows")
    if df.isna().any().any():
        bad = df.columns[df.isna().any()].tolist()
        raise EmptyTable(f"{path} has missing values in columns {bad}")
    return df


def load_dataset(sites_csv, checklists_csv, detections_csv,
                 species_csv=None) -> tuple[SiteTable, ChecklistTable, DetectionStore]:
    """Load and cross-validate the three dataset tables.

    Raises
    ------
    MissingColumn, EmptyTable, DanglingReference
        On malformed headers, empty tables, or references to unknown
        site/checklist identifiers.
    """
    sites_df = _read_csv(sites_csv, ["site_id"])
    site_ids = sites_df["site_id"].tolist()
    if len(set(site_ids)) != len(site_ids):
        dup = next(s for s in site_ids if site_ids.count(s) > 1)
        raise DanglingReference(dup, kind="duplicate site_id")
    env_cols = [c for c in sites_df.columns if c != "site_id"]
    site_table = SiteTable(
        site_ids=site_ids,
        columns=env_cols,
        env_raw=sites_df[env_cols].to_numpy(dtype=float),
    )

    cl_df = _read_csv(checklists_csv, ["checklist_id", "site_id"])
    site_pos = {s: i for i, s in enumerate(site_ids)}
    try:
        site_index = np.array([site_pos[s] for s in cl_df["site_id"]], dtype=np.int64)
    except KeyError as exc:
        raise DanglingReference(exc.args[0], kind="site_id") from None
    obs_cols = [c for c in cl_df.columns if c not in ("checklist_id", "site_id")]
    checklist_ids = cl_df["checklist_id"].tolist()
    if len(set(checklist_ids)) != len(checklist_ids):
        dup = next(s for s in checklist_ids if checklist_ids.count(s) > 1)
        raise DanglingReference(dup, kind="duplicate checklist_id")
    checklist_table = ChecklistTable(
        checklist_ids=checklist_ids,
        site_index=site_index,
        columns=obs_cols,
        obs_raw=cl_df[obs_cols].to_numpy(dtype=float),
    )

    det_df = _read_csv(detections_csv, ["checklist_id", "species", "detected"])
    cl_pos = {c: i for i, c in enumerate(checklist_ids)}
    detected = det_df["detected"].astype(float).to_numpy() != 0

    if species_csv is not None:
        sp_df = _read_csv(species_csv, ["species"])
        roster = sp_df["species"].tolist()
    else:
        roster = list(dict.fromkeys(det_df["species"][detected]))
    roster_pos = {s: j for j, s in enumerate(roster)}

    per_species: list[set[int]] = [set() for _ in roster]
    for cl, sp, is_det in zip(det_df["checklist_id"], det_df["species"], detected):
        if not is_det:
            continue
        if cl not in cl_pos:
            raise DanglingReference(cl, kind="checklist_id")
        if sp not in roster_pos:
            raise DanglingReference(sp, kind="species")
        per_species[roster_pos[sp]].add(cl_pos[cl])

    store = DetectionStore(
        species_names=roster,
        detections=[np.array(sorted(s), dtype=np.int64) for s in per_species],
        site_of_checklist=site_index.copy(),
    )
    return site_table, checklist_table, store


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation with the n-1 denominator convention."""
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        return 0.0
    return float((xc @ yc) / denom)


def build_design(raw: np.ndarray, columns: list[str],
                 spec: DesignSpec) -> DesignResult:
    """Expand, screen, and standardize a raw covariate table.

    Squares of ``spec.quadratic_columns`` are appended first.  Columns are
    then scanned left to right and dropped when their absolute sample
    correlation against any already-kept column exceeds the threshold.
    Surviving non-indicator columns are standardized to mean 0, sd 1
    (sample sd); indicator columns pass through.

    Raises
    ------
    ZeroVarianceColumn
        If a non-indicator column is constant.  Constant indicator
        columns only warn.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise EmptyTable("design input needs at least one row")
    if len(columns) != raw.shape[1]:
        raise MissingColumn(f"expected {raw.shape[1]} column names, got {len(columns)}")
    for q in spec.quadratic_columns:
        if q not in columns:
            raise MissingColumn(q)
        if q in spec.indicator_columns:
            raise ZeroVarianceColumn(f"{q} (indicator columns cannot be square-expanded)")

    names = list(columns)
    mat = [raw[:, i] for i in range(raw.shape[1])]
    for q in spec.quadratic_columns:
        mat.append(raw[:, columns.index(q)] ** 2)
        names.append(f"{q}^2")

    indicator = set(spec.indicator_columns)
    kept_cols: list[np.ndarray] = []
    kept_names: list[str] = []
    kept_variable: list[bool] = []  # has positive variance (correlation defined)
    n = raw.shape[0]
    for name, col in zip(names, mat):
        sd = col.std(ddof=1) if n > 1 else 0.0
        if sd == 0.0:
            if name in indicator:
                warnings.warn(f"indicator column {name!r} is constant", stacklevel=2)
            else:
                raise ZeroVarianceColumn(name)
        drop = False
        if sd > 0.0:
            for prev, variable in zip(kept_cols, kept_variable):
                if variable and abs(_pearson(col, prev)) > spec.correlation_threshold:
                    drop = True
                    break
        if not drop:
            kept_cols.append(col)
            kept_names.append(name)
            kept_variable.append(sd > 0.0)

    if spec.add_intercept:
        kept_cols.append(np.ones(n))
        kept_names.append("(intercept)")

    design_raw = np.column_stack(kept_cols) if kept_cols else np.empty((n, 0))
    passthrough = np.array(
        [name in indicator or name == "(intercept)" for name in kept_names], dtype=bool)
    means = np.where(passthrough, 0.0, design_raw.mean(axis=0) if kept_cols else 0.0)
    sds = np.ones(len(kept_names))
    for i, name in enumerate(kept_names):
        if not passthrough[i]:
            sds[i] = design_raw[:, i].std(ddof=1)
    standardizer = Standardizer(means=means, sds=sds, passthrough_mask=passthrough)
    return DesignResult(
        design=standardizer.apply(design_raw),
        standardizer=standardizer,
        kept_columns=kept_names,
        input_columns=list(columns),
        spec=spec,
    )


def filter_rare_species(store: DetectionStore, min_detections: int = 5) -> DetectionStore:
    """Drop species with fewer positive records than ``min_detections``.

    The default of 5 matches the usual screening rule for fitting.
    Survivor order is preserved.  Raises :class:`AllSpeciesRemoved` when
    nothing survives.
    """
    if min_detections < 0:
        raise ValueError("min_detections must be >= 0")
    keep = [j for j, idx in enumerate(store.detections) if idx.size >= min_detections]
    if not keep:
        raise AllSpeciesRemoved(
            f"no species has {min_detections} or more detections")
    return DetectionStore(
        species_names=[store.species_names[j] for j in keep],
        detections=[store.detections[j] for j in keep],
        site_of_checklist=store.site_of_checklist,
    )
