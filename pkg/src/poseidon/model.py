"""Data containers, hyperparameters, the abundance transform and file I/O."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import inv_norm_cdf


class ValidationError(ValueError):
    """A collection, grid or hyperparameter set violates an invariant."""


class DegenerateInputError(ValueError):
    """Input that makes an operation undefined (e.g. a constant matrix)."""


@dataclass(frozen=True)
class AbundanceMatrix:
    """N x J matrix: rows are analytes (m/z), columns are pixels."""

    values: np.ndarray
    row_labels: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"abundance matrix must be 2-D and non-empty, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        labels = tuple(self.row_labels) or tuple(f"r{i}" for i in range(values.shape[0]))
        if len(labels) != values.shape[0]:
            raise ValidationError("row_labels length differs from the number of rows")
        if len(set(labels)) != len(labels):
            raise ValidationError("row_labels must be unique")
        object.__setattr__(self, "row_labels", labels)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpatialGrid:
    coords: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.neighbors)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency as a sparse J x J matrix (cached)."""
        cached = self.__dict__.get("_adjacency")
        if cached is not None:
            return cached
        rows = [j for j, nb in enumerate(self.neighbors) for _ in nb]
        cols = [q for nb in self.neighbors for q in nb]
        data = np.ones(len(rows))
        adj = sp.csr_matrix((data, (rows, cols)), shape=(self.size, self.size))
        object.__setattr__(self, "_adjacency", adj)
        return adj

    def permuted(self, perm: Sequence[int]) -> "SpatialGrid":
        """Grid whose pixel p is this grid's pixel perm[p]."""
        return build_grid(self.coords[np.asarray(perm)])


def build_grid(coords) -> SpatialGrid:
    """4-neighbourhood adjacency from integer (x, y) pixel coordinates."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    index = {}
    for j, (x, y) in enumerate(coords.tolist()):
        if (x, y) in index:
            raise ValidationError(f"duplicate pixel coordinate {(x, y)}")
        index[(x, y)] = j
    neighbors = []
    for x, y in coords.tolist():
        nb = [index[c] for c in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)) if c in index]
        neighbors.append(tuple(sorted(nb)))
    coords.setflags(write=False)
    return SpatialGrid(coords=coords, neighbors=tuple(neighbors))


def raster_grid(n_x: int, n_y: int) -> SpatialGrid:
    """Full n_x-by-n_y lattice; pixel index = y * n_x + x."""
    ys, xs = np.divmod(np.arange(n_x * n_y), n_x)
    return build_grid(np.column_stack([xs, ys]))


@dataclass(frozen=True)
class DatasetCollection:
    datasets: tuple[AbundanceMatrix, ...]
    grid: SpatialGrid

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))

    @property
    def n_cols(self) -> int:
        return self.datasets[0].n_cols

    @property
    def T(self) -> int:
        return len(self.datasets)


def validate_collection(c: DatasetCollection) -> None:
    """Raise ValidationError naming the first violated invariant."""
    if len(c.datasets) < 1:
        raise ValidationError("collection must contain at least one dataset (T >= 1)")
    J = c.datasets[0].n_cols
    for t, d in enumerate(c.datasets):
        if d.n_cols != J:
            raise ValidationError(
                f"column-count mismatch: dataset {t} has {d.n_cols} columns, dataset 0 has {J}"
            )
    if c.grid.size != J:
        raise ValidationError(f"grid/J mismatch: grid has {c.grid.size} pixels, datasets have {J} columns")
    for t, d in enumerate(c.datasets):
        if not np.all(np.isfinite(d.values)):
            raise ValidationError(f"non-finite entries in dataset {t}")


def transform_abundance(Z: AbundanceMatrix, epsilon: float = 1e-6) -> AbundanceMatrix:
    """Min-max scale the whole matrix, clamp to [eps, 1-eps], apply the normal quantile."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    z = Z.values
    if not np.all(np.isfinite(z)):
        raise ValidationError("non-finite entries in abundance matrix")
    lo, hi = z.min(), z.max()
    if not hi > lo:
        raise DegenerateInputError("constant matrix: max equals min")
    u = np.clip((z - lo) / (hi - lo), epsilon, 1.0 - epsilon)
    return AbundanceMatrix(inv_norm_cdf(u), Z.row_labels, Z.name)


# ---------------------------------------------------------------- hyperparameters


@dataclass(frozen=True)
class NIGPrior:
    """Normal-inverse-gamma base measure: mu | s2 ~ N(m0, s2/k0), s2 ~ IG(c0, d0)."""

    m0: float = 0.0
    k0: float = 0.1
    c0: float = 3.0
    d0: float = 2.0

    def __post_init__(self):
        if not (self.k0 > 0 and self.c0 > 0 and self.d0 > 0):
            raise ValidationError("NIG prior requires k0, c0, d0 > 0")


@dataclass(frozen=True)
class FixedBeta:
    value: float = 0.0

    def __post_init__(self):
        if not self.value >= 0:
            raise ValidationError("fixed beta must be >= 0")

    def __str__(self):
        return f"fixed:{self.value:g}"


@dataclass(frozen=True)
class GridBeta:
    """Uniform prior on G equispaced inverse temperatures in [0, bound]."""

    bound: float = 2.0
    n_points: int = 21

    def __post_init__(self):
        if not self.bound > 0 or self.n_points < 2:
            raise ValidationError("grid beta needs bound > 0 and at least 2 points")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(0.0, self.bound, self.n_points)

    def __str__(self):
        return f"grid:{self.bound:g}:{self.n_points}"


def parse_beta(text: str) -> FixedBeta | GridBeta:
    """Parse ``fixed:<b>``, ``grid`` or ``grid:<B>[:<G>]``."""
    kind, _, rest = text.partition(":")
    try:
        if kind == "fixed":
            return FixedBeta(float(rest))
        if kind == "grid":
            parts = [p for p in rest.split(":") if p]
            bound = float(parts[0]) if parts else 2.0
            n = int(parts[1]) if len(parts) > 1 else 21
            return GridBeta(bound, n)
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"bad beta setting {text!r}: {exc}") from None
    raise ValidationError(f"bad beta setting {text!r}; use fixed:<b> or grid:<B>[:<G>]")


@dataclass(frozen=True)
class Hyperparameters:
    K: int = 30
    L: int = 40
    nig: tuple[NIGPrior, ...] = (NIGPrior(),)
    b0: float = 1e-4
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    beta: FixedBeta | GridBeta = field(default_factory=GridBeta)

    def __post_init__(self):
        if isinstance(self.nig, NIGPrior):
            object.__setattr__(self, "nig", (self.nig,))
        object.__setattr__(self, "nig", tuple(self.nig))
        if self.K < 1 or self.L < 1:
            raise ValidationError("truncations K and L must be positive")
        if not (self.b0 > 0 and self.a_alpha > 0 and self.b_alpha > 0):
            raise ValidationError("b0, a_alpha and b_alpha must be positive")

    def nig_for(self, t: int) -> NIGPrior:
        """Prior for dataset t; a single prior is broadcast to every dataset."""
        return self.nig[0] if len(self.nig) == 1 else self.nig[t]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "L": self.L,
            "nig": [[p.m0, p.k0, p.c0, p.d0] for p in self.nig],
            "b0": self.b0,
            "a_alpha": self.a_alpha,
            "b_alpha": self.b_alpha,
            "beta": str(self.beta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        kw = dict(d)
        if "nig" in kw:
            kw["nig"] = tuple(NIGPrior(*p) for p in kw["nig"])
        if "beta" in kw and isinstance(kw["beta"], str):
            kw["beta"] = parse_beta(kw["beta"])
        return cls(**kw)


@dataclass
class PartitionEstimate:
    """Hard labels (0-based) read off the variational probabilities."""

    column_labels: np.ndarray
    row_labels: dict[tuple[int, int], np.ndarray]
    occupied_ccs: tuple[int, ...]

    def rows_for(self, t: int) -> dict[int, np.ndarray]:
        return {k: self.row_labels[(t, k)] for k in self.occupied_ccs}


# ---------------------------------------------------------------------------- I/O


def read_matrix_csv(path, name: str | None = None) -> AbundanceMatrix:
    """First row: pixel ids; first column: m/z row labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels, rows = [], []
        for row in reader:
            if not row:
                continue
            labels.append(row[0])
            rows.append([float(v) for v in row[1:]])
    if any(len(r) != len(header) - 1 for r in rows):
        raise ValidationError(f"{path}: ragged matrix or header/column mismatch")
    values = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    if values.shape[0] == 0:
        raise ValidationError(f"{path}: ragged matrix or header/column mismatch")
    return AbundanceMatrix(values, tuple(labels), name or Path(path).stem)


def write_matrix_csv(path, Z: AbundanceMatrix, pixel_ids: Sequence | None = None) -> None:
    pixel_ids = list(pixel_ids) if pixel_ids is not None else list(range(Z.n_cols))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mz", *pixel_ids])
        for label, row in zip(Z.row_labels, Z.values):
            w.writerow([label, *(repr(float(v)) for v in row)])


def read_grid_csv(path) -> tuple[list[str], SpatialGrid]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    missing = {"pixel_id", "x", "y"} - set(rows[0] if rows else {})
    if missing:
        raise ValidationError(f"{path}: grid file lacks columns {sorted(missing)}")
    ids = [r["pixel_id"] for r in rows]
    coords = [(int(r["x"]), int(r["y"])) for r in rows]
    return ids, build_grid(coords)


def write_grid_csv(path, grid: SpatialGrid, pixel_ids: Sequence | None = None) -> None:
    pixel_ids = list(pixel_ids) if pixel_ids is not None else list(range(grid.size))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pixel_id", "x", "y"])
        for pid, (x, y) in zip(pixel_ids, grid.coords.tolist()):
            w.writerow([pid, x, y])


def write_manifest(path, datasets: Sequence[dict], grid: str, **extra) -> None:
    """datasets: dicts with keys ``name``, ``path`` and optional ``transform``."""
    doc = {"datasets": list(datasets), "grid": grid, **extra}
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_manifest(path, names: Sequence[str] | None = None, stack: bool = False,
                  epsilon: float = 1e-6) -> tuple[DatasetCollection, dict]:
    """Load a collection described by a JSON manifest.

    ``names`` selects a subset of datasets (manifest order otherwise); ``stack``
    row-stacks the selection into a single dataset. Returns the validated
    collection and the raw manifest document.
    """
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    entries = doc.get("datasets")
    if not entries or "grid" not in doc:
        raise ValidationError(f"{path}: manifest needs 'datasets' and 'grid'")
    by_name = {e["name"]: e for e in entries}
    if names:
        unknown = [n for n in names if n not in by_name]
        if unknown:
            raise ValidationError(f"{path}: unknown datasets {unknown}")
        entries = [by_name[n] for n in names]
    pixel_ids, grid = read_grid_csv(base / doc["grid"])
    mats = []
    for e in entries:
        m = read_matrix_csv(base / e["path"], e["name"])
        if e.get("transform", False):
            m = transform_abundance(m, epsilon)
        mats.append(m)
    if stack and len(mats) > 1:
        labels = tuple(f"{m.name}:{r}" for m in mats for r in m.row_labels)
        if len({m.n_cols for m in mats}) != 1:
            raise ValidationError("column-count mismatch: cannot stack datasets")
        mats = [AbundanceMatrix(np.vstack([m.values for m in mats]), labels, "+".join(m.name for m in mats))]
    coll = DatasetCollection(tuple(mats), grid)
    validate_collection(coll)
    doc = dict(doc, pixel_ids=pixel_ids)
    return coll, doc
