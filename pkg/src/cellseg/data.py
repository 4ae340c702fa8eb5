"""Molecule tables, gene panels and exact spatial queries.

The spatial index wraps a kd-tree but post-processes every query so results
are bit-reproducible: neighbors are ordered by (distance, molecule id) and
range bounds are evaluated with the package's own distance computation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyFile,
    EmptyTable,
    InvalidRange,
    KTooLarge,
    MissingColumn,
    UnknownLabel,
    UnparsableRow,
)

DELIMITERS = (",", "\t", ";")


@dataclass(frozen=True)
class GenePanel:
    """Ordered set of targeted gene names; order fixes one-hot indexing."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("gene panel must contain at least one gene")
        if len(set(self.names)) != len(self.names):
            raise ValueError("gene panel names must be unique")
        object.__setattr__(self, "_lookup", {g: i for i, g in enumerate(self.names)})

    @property
    def size(self) -> int:
        return len(self.names)

    def index_of(self, label: str) -> int:
        try:
            return self._lookup[label]
        except KeyError:
            raise UnknownLabel(f"gene {label!r} is not in the panel") from None

    def __contains__(self, label: str) -> bool:
        return label in self._lookup


@dataclass(frozen=True)
class Molecule:
    id: int
    position: np.ndarray
    label: str


class MoleculeTable:
    """All detected molecules: positions (n, D) plus panel-indexed labels."""

    def __init__(self, positions: np.ndarray, label_ids: np.ndarray, panel: GenePanel):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        label_ids = np.ascontiguousarray(label_ids, dtype=np.int64)
        if positions.ndim != 2 or positions.shape[1] not in (2, 3):
            raise ValueError("positions must be (n, 2) or (n, 3)")
        if label_ids.shape != (positions.shape[0],):
            raise ValueError("label_ids must align with positions")
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions must be finite")
        if positions.shape[0] and (label_ids.min() < 0 or label_ids.max() >= panel.size):
            raise ValueError("label id outside the gene panel")
        self.positions = positions
        self.label_ids = label_ids
        self.panel = panel

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dims(self) -> int:
        return self.positions.shape[1]

    def molecule(self, i: int) -> Molecule:
        return Molecule(i, self.positions[i].copy(), self.panel.names[self.label_ids[i]])

    def gene_names(self) -> list[str]:
        return [self.panel.names[j] for j in self.label_ids]

    def subset(self, mask: np.ndarray) -> tuple["MoleculeTable", np.ndarray]:
        """Rows where mask is true, re-indexed 0..m-1. Returns (table, original ids).

        The gene panel is kept as-is so feature dimensionality is unchanged.
        """
        mask = np.asarray(mask, dtype=bool)
        kept = np.flatnonzero(mask)
        return MoleculeTable(self.positions[kept], self.label_ids[kept], self.panel), kept


def _sniff_delimiter(header_line: str) -> str:
    counts = [(header_line.count(d), d) for d in DELIMITERS]
    counts.sort(reverse=True)
    return counts[0][1]


def load_molecules(
    path,
    column_map: dict[str, str] | None = None,
    delimiter: str | None = None,
) -> MoleculeTable:
    """Read a delimited text file with a header row into a MoleculeTable.

    column_map maps the logical fields x / y / z / gene to column names in
    the file; z is optional and enables 3D mode only when its column exists
    (unless it was named explicitly, in which case it must exist). Molecule
    ids are assigned by row order; the panel is built from distinct gene
    values in order of first appearance. Row numbers in errors are 1-based
    over data rows.
    """
    cmap = {"x": "x", "y": "y", "z": "z", "gene": "gene"}
    explicit_z = bool(column_map and "z" in column_map)
    if column_map:
        cmap.update(column_map)

    with open(path, "r", newline="") as fh:
        first = fh.readline()
        if first == "":
            raise EmptyFile(f"{path} is empty")
        delim = delimiter or _sniff_delimiter(first)
        header = next(csv.reader([first], delimiter=delim))
        header = [h.strip() for h in header]
        col = {}
        for field in ("x", "y", "gene"):
            if cmap[field] not in header:
                raise MissingColumn(cmap[field])
            col[field] = header.index(cmap[field])
        has_z = cmap["z"] in header
        if explicit_z and not has_z:
            raise MissingColumn(cmap["z"])
        if has_z:
            col["z"] = header.index(cmap["z"])

        dims = 3 if has_z else 2
        coords: list[list[float]] = []
        genes: list[str] = []
        reader = csv.reader(fh, delimiter=delim)
        for rownum, row in enumerate(reader, start=1):
            if not row or all(f.strip() == "" for f in row):
                continue
            if len(row) < len(header):
                raise UnparsableRow(rownum, "too few fields")
            try:
                xyz = [float(row[col["x"]]), float(row[col["y"]])]
                if has_z:
                    xyz.append(float(row[col["z"]]))
            except ValueError as exc:
                raise UnparsableRow(rownum, str(exc)) from None
            if not all(math.isfinite(c) for c in xyz):
                raise UnparsableRow(rownum, "non-finite coordinate")
            gene = row[col["gene"]].strip()
            if gene == "":
                raise UnparsableRow(rownum, "empty gene label")
            coords.append(xyz)
            genes.append(gene)

    if not coords:
        raise EmptyFile(f"{path} has a header but no data rows")

    seen: dict[str, int] = {}
    for g in genes:
        if g not in seen:
            seen[g] = len(seen)
    panel = GenePanel(tuple(seen.keys()))
    label_ids = np.array([seen[g] for g in genes], dtype=np.int64)
    return MoleculeTable(np.array(coords, dtype=np.float64), label_ids, panel)


class SpatialIndex:
    """Immutable kd-tree over molecule positions; safe for concurrent reads."""

    def __init__(self, positions: np.ndarray):
        self.points = np.ascontiguousarray(positions, dtype=np.float64)
        self.tree = cKDTree(self.points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dims(self) -> int:
        return self.points.shape[1]

    def distances_to(self, point: np.ndarray, ids: np.ndarray) -> np.ndarray:
        diff = self.points[ids] - np.asarray(point, dtype=np.float64)
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def build_spatial_index(table: MoleculeTable) -> SpatialIndex:
    if len(table) == 0:
        raise EmptyTable("cannot index an empty molecule table")
    return SpatialIndex(table.positions)


def _candidates_within(index: SpatialIndex, point: np.ndarray, radius: float) -> np.ndarray:
    # nextafter pads the kd-tree bound by one ulp so exact-boundary points
    # are never lost to rounding; our own distance filter is authoritative.
    r = np.nextafter(radius, np.inf) if radius > 0 else radius
    ids = index.tree.query_ball_point(point, r)
    return np.asarray(sorted(ids), dtype=np.int64)


def knn_query(
    index: SpatialIndex,
    point,
    k: int,
    exclude_id: int | None = None,
) -> list[tuple[int, float]]:
    """k nearest molecules to a point, ascending distance, ties by ascending id.

    The query molecule itself (distance 0) is part of the result when querying
    from a molecule position; pass its id as exclude_id to leave it out.
    """
    point = np.asarray(point, dtype=np.float64)
    n_eff = index.n - (1 if exclude_id is not None else 0)
    if not 1 <= k <= n_eff:
        raise KTooLarge(f"k={k} outside 1..{n_eff}")
    kq = min(index.n, k + (1 if exclude_id is not None else 0))
    d0, _ = index.tree.query(point, k=kq)
    radius = float(np.max(np.atleast_1d(d0)))
    cand = _candidates_within(index, point, radius)
    if exclude_id is not None:
        cand = cand[cand != exclude_id]
    dist = index.distances_to(point, cand)
    order = np.lexsort((cand, dist))[:k]
    return [(int(cand[i]), float(dist[i])) for i in order]


def annulus_query(index: SpatialIndex, point, r_min: float, r_max: float) -> list[int]:
    """Molecule ids with r_min < distance <= r_max, ascending id."""
    if not (0 <= r_min < r_max):
        raise InvalidRange(f"need 0 <= r_min < r_max, got ({r_min}, {r_max})")
    point = np.asarray(point, dtype=np.float64)
    cand = _candidates_within(index, point, r_max)
    dist = index.distances_to(point, cand)
    keep = (dist > r_min) & (dist <= r_max)
    return [int(i) for i in cand[keep]]


def knn_bulk(index: SpatialIndex, k: int, exclude_self: bool = False):
    """(ids, distances), each (n, k), for every molecule's neighborhood.

    Matches knn_query row by row: each molecule queries from its own position,
    optionally excluding itself. Rows with distance ties are recomputed through
    the exact single-point path so the (distance, id) ordering contract holds.
    """
    n = index.n
    base = k + 1 if exclude_self else k
    if base > n:
        raise KTooLarge(f"k={k} too large for {n} molecules")
    kq = min(n, base + 1)  # spare column to detect ties across the k cut
    dist, ids = index.tree.query(index.points, k=kq)
    if kq == 1:
        dist = dist[:, None]
        ids = ids[:, None]
    ids = ids.astype(np.int64, copy=False)

    if exclude_self:
        own = np.arange(n, dtype=np.int64)[:, None]
        keep = np.ones((n, kq), dtype=bool)
        is_self = ids == own
        has_self = is_self.any(axis=1)
        first_self = is_self.argmax(axis=1)
        rows = np.arange(n)
        keep[rows[has_self], first_self[has_self]] = False
        keep[rows[~has_self], kq - 1] = False
        ids = ids[keep].reshape(n, kq - 1)
        dist = dist[keep].reshape(n, kq - 1)

    avail = ids.shape[1]
    suspicious = np.zeros(n, dtype=bool)
    if avail > k:
        suspicious |= dist[:, k - 1] == dist[:, k]
    if k > 1:
        suspicious |= (dist[:, : k - 1] == dist[:, 1:k]).any(axis=1)
    for i in np.flatnonzero(suspicious):
        exact = knn_query(index, index.points[i], k, exclude_id=i if exclude_self else None)
        ids[i, :k] = [m for m, _ in exact]
        dist[i, :k] = [d for _, d in exact]
    return ids[:, :k].copy(), dist[:, :k].copy()
