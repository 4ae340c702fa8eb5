"""End-to-end segmentation: prefilter, features, training, graph, partition,
postfilter, and the assignment/report file formats.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import graphs, mutex, pairnet
from .data import (
    MoleculeTable,
    SpatialIndex,
    build_spatial_index,
    knn_bulk,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DegenerateData,
    KTooLarge,
    StageError,
)
from .features import FeatureMatrix, compositional_features
from .mutex import Partition

log = logging.getLogger(__name__)

UNASSIGNED = -1


@dataclass
class PipelineConfig:
    r_cell: float
    k: int | None = None
    expected_per_cell: float | None = None  # used for the k heuristic
    n_min: int = 30
    seed: int = 0
    prefilter_enabled: bool = True
    prefilter_neighbor: int = 15
    gaussian_bandwidth: float | None = None
    include_self: bool = True
    attractive_neighbors: int = 5
    repulsive_per_node: int = 15
    hidden: int = 64
    latent: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 300
    patience: int = 15
    batch_size: int = 2048

    def __post_init__(self):
        if self.r_cell <= 0:
            raise ConfigError("r_cell must be > 0")
        if self.n_min < 1:
            raise ConfigError("n_min must be >= 1")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1 when set")

    def resolve_k(self) -> int:
        if self.k is not None:
            return self.k
        if self.expected_per_cell is None:
            raise ConfigError("set k, or expected_per_cell for the k heuristic")
        return max(1, round(self.expected_per_cell / 3))


_CONFIG_TYPES = {
    "r_cell": float,
    "k": int,
    "expected_per_cell": float,
    "n_min": int,
    "seed": int,
    "prefilter_enabled": bool,
    "prefilter_neighbor": int,
    "gaussian_bandwidth": float,
    "include_self": bool,
    "attractive_neighbors": int,
    "repulsive_per_node": int,
    "hidden": int,
    "latent": int,
    "learning_rate": float,
    "max_epochs": int,
    "patience": int,
    "batch_size": int,
}


def read_config_file(path) -> dict:
    """key = value lines; # starts a comment; keys match PipelineConfig fields."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            typ = _CONFIG_TYPES[key]
            try:
                if typ is bool:
                    if val.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(val)
                    out[key] = val.lower() in ("true", "1")
                else:
                    out[key] = typ(val)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value {val!r} for {key}") from None
    return out


@dataclass
class Gmm1D:
    """Two-component 1D Gaussian mixture fitted by EM."""

    means: np.ndarray  # (2,)
    variances: np.ndarray  # (2,)
    weights: np.ndarray  # (2,), sum to 1
    log_likelihoods: list[float] = field(default_factory=list)

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, None]
        pdf = np.exp(-0.5 * (x - self.means) ** 2 / self.variances) / np.sqrt(
            2 * np.pi * self.variances
        )
        joint = self.weights * pdf
        total = joint.sum(axis=1, keepdims=True)
        total[total == 0] = 1.0
        return joint / total


_VAR_FLOOR = 1e-12


def gmm_fit_1d(values, seed: int = 0, max_iter: int = 200, tol: float = 1e-6) -> Gmm1D:
    """EM fit initialized from the 25th/75th percentiles with pooled variance.

    Iterates until the log-likelihood improves by less than tol. The seed is
    accepted for interface stability; the initialization is deterministic.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 4:
        raise DegenerateData("need at least 4 values")
    if np.ptp(x) == 0:
        raise DegenerateData("all values equal")

    mu = np.percentile(x, [25.0, 75.0]).astype(np.float64)
    if mu[0] == mu[1]:
        mu = np.array([x.min(), x.max()], dtype=np.float64)
    var = np.full(2, max(x.var(), _VAR_FLOOR))
    w = np.array([0.5, 0.5])

    def loglik():
        pdf = np.exp(-0.5 * (x[:, None] - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)
        return float(np.log((w * pdf).sum(axis=1).clip(1e-300)).sum())

    ll_hist = [loglik()]
    for _ in range(max_iter):
        gmm = Gmm1D(mu, var, w)
        resp = gmm.responsibilities(x)
        mass = resp.sum(axis=0)
        mass[mass == 0] = 1e-300
        mu = (resp * x[:, None]).sum(axis=0) / mass
        var = np.maximum((resp * (x[:, None] - mu) ** 2).sum(axis=0) / mass, _VAR_FLOOR)
        w = mass / x.size
        ll_hist.append(loglik())
        if ll_hist[-1] - ll_hist[-2] < tol:
            break
    return Gmm1D(mu, var, w, log_likelihoods=ll_hist)


def prefilter_extracellular(
    table: MoleculeTable,
    index: SpatialIndex,
    seed: int = 0,
    neighbor: int = 15,
) -> np.ndarray:
    """Keep-mask over molecules; False marks likely-extracellular ones.

    Each molecule's distance to its `neighbor`-th nearest other molecule is
    clustered with a 2-component GMM; molecules whose responsibility under
    the larger-mean component exceeds 0.5 are dropped.
    """
    n = len(table)
    if n <= neighbor:
        raise KTooLarge(f"prefilter needs more than {neighbor} molecules, have {n}")
    _, dist = knn_bulk(index, neighbor, exclude_self=True)
    d_k = dist[:, neighbor - 1]
    gmm = gmm_fit_1d(d_k, seed=seed)
    far = int(np.argmax(gmm.means))
    resp = gmm.responsibilities(d_k)
    return resp[:, far] <= 0.5


@dataclass
class CellSegmentation:
    """Per-molecule assignment (UNASSIGNED = -1) and per-cell molecule sets."""

    assignment: np.ndarray  # (n,) int64
    cells: dict[int, np.ndarray]

    @classmethod
    def from_assignment(cls, assignment: np.ndarray) -> "CellSegmentation":
        assignment = np.asarray(assignment, dtype=np.int64)
        cells = {}
        for cid in np.unique(assignment):
            if cid == UNASSIGNED:
                continue
            cells[int(cid)] = np.flatnonzero(assignment == cid)
        return cls(assignment, cells)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def assigned_count(self) -> int:
        return int((self.assignment != UNASSIGNED).sum())

    def assigned_fraction(self) -> float:
        return self.assigned_count() / self.n if self.n else 0.0

    def validate(self) -> None:
        total = 0
        for cid, members in self.cells.items():
            if not np.all(self.assignment[members] == cid):
                raise ValueError("cells map inconsistent with assignment")
            total += members.size
        if total != self.assigned_count():
            raise ValueError("cells map misses assigned molecules")


def postfilter_small_cells(partition: Partition, n_min: int) -> CellSegmentation:
    """Unassign components smaller than n_min; renumber survivors densely in
    order of their first molecule id."""
    labels = partition.labels
    assignment = np.full(labels.shape[0], UNASSIGNED, dtype=np.int64)
    if labels.size:
        counts = np.bincount(labels)
        keep = counts >= n_min
        remap: dict[int, int] = {}
        for i, lab in enumerate(labels.tolist()):
            if keep[lab]:
                assignment[i] = remap.setdefault(lab, len(remap))
    return CellSegmentation.from_assignment(assignment)


def segment(
    table: MoleculeTable,
    config: PipelineConfig,
    return_artifacts: bool = False,
):
    """Run the full pipeline; returns (CellSegmentation, report dict).

    With return_artifacts=True a third element carries intermediate stage
    outputs (keep mask, features, graph, partition, trained network) for
    diagnostics and verification.
    """
    if len(table) == 0:
        raise StageError("input", ValueError("empty molecule table"))
    t0 = time.perf_counter()
    timings: dict[str, float] = {}
    artifacts: dict = {}

    def stage(name):
        class _Timer:
            def __enter__(self_inner):
                self_inner.start = time.perf_counter()

            def __exit__(self_inner, exc_type, exc, tb):
                timings[name] = time.perf_counter() - self_inner.start
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc

        return _Timer()

    n_total = len(table)
    keep = np.ones(n_total, dtype=bool)
    if config.prefilter_enabled:
        with stage("prefilter"):
            index_all = build_spatial_index(table)
            keep = prefilter_extracellular(
                table, index_all, seed=config.seed, neighbor=config.prefilter_neighbor
            )
    sub, kept_ids = table.subset(keep)
    log.info("prefilter kept %d / %d molecules", len(sub), n_total)

    with stage("features"):
        k = config.resolve_k()
        index = build_spatial_index(sub)
        feats = compositional_features(
            sub, index, k,
            gaussian_bandwidth=config.gaussian_bandwidth,
            include_self=config.include_self,
        )

    with stage("train"):
        net = pairnet.init_network(
            sub.panel.size, hidden=config.hidden, latent=config.latent, seed=config.seed
        )
        tconf = pairnet.TrainConfig(
            r_cell=config.r_cell,
            max_epochs=config.max_epochs,
            patience=config.patience,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            seed=config.seed,
        )
        net, loss_history = pairnet.train(net, sub, index, feats, tconf)

    with stage("graph"):
        att = graphs.attractive_edges(index, m=config.attractive_neighbors)
        rep_rng = np.random.default_rng([config.seed, 1])
        rep, rep_inf = graphs.repulsive_edges(
            index, config.r_cell, per_node=config.repulsive_per_node, rng=rep_rng
        )
        graph = graphs.weight_graph(net, feats, att, rep, rep_inf)

    with stage("partition"):
        part = mutex.mutex_watershed(graph)

    with stage("postfilter"):
        seg_sub = postfilter_small_cells(part, config.n_min)
        assignment = np.full(n_total, UNASSIGNED, dtype=np.int64)
        assignment[kept_ids] = seg_sub.assignment
        seg = CellSegmentation.from_assignment(assignment)

    timings["total"] = time.perf_counter() - t0
    report = {
        "n_molecules": n_total,
        "n_prefiltered": int(n_total - keep.sum()),
        "cells": seg.n_cells,
        "assigned_fraction": seg.assigned_fraction(),
        "epochs_trained": len(loss_history),
        "loss_history": loss_history,
        "timings": timings,
        "seed": config.seed,
        "config": {k_: v for k_, v in asdict(config).items()},
    }
    if return_artifacts:
        artifacts = {
            "keep_mask": keep,
            "kept_ids": kept_ids,
            "features": feats,
            "network": net,
            "graph": graph,
            "partition": part,
            "subtable": sub,
        }
        return seg, report, artifacts
    return seg, report


def write_assignments(path, table: MoleculeTable, seg: CellSegmentation) -> None:
    """Delimited text: molecule_id, x, y, [z,] gene, cell_id (-1 unassigned)."""
    header = ["molecule_id", "x", "y"] + (["z"] if table.dims == 3 else []) + ["gene", "cell_id"]
    names = table.gene_names()
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(table)):
            coords = [repr(float(c)) for c in table.positions[i]]
            fh.write(",".join([str(i), *coords, names[i], str(int(seg.assignment[i]))]) + "\n")


def read_assignments(path):
    """Parse an assignment file back into (ids, positions, genes, cell_ids)."""
    from .data import DELIMITERS

    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise AlignmentError(f"{path} is empty")
        delim = max(DELIMITERS, key=first.count)
        header = [h.strip() for h in first.strip().split(delim)]
        for needed in ("molecule_id", "x", "y", "gene", "cell_id"):
            if needed not in header:
                raise AlignmentError(f"{path} misses column {needed!r}")
        idx = {h: header.index(h) for h in header}
        has_z = "z" in idx
        ids, coords, genes, cells = [], [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = line.split(delim)
            ids.append(int(fields[idx["molecule_id"]]))
            pt = [float(fields[idx["x"]]), float(fields[idx["y"]])]
            if has_z:
                pt.append(float(fields[idx["z"]]))
            coords.append(pt)
            genes.append(fields[idx["gene"]])
            cells.append(int(fields[idx["cell_id"]]))
    return (
        np.asarray(ids, dtype=np.int64),
        np.asarray(coords, dtype=np.float64),
        genes,
        np.asarray(cells, dtype=np.int64),
    )


def segmentation_from_file(path) -> tuple[CellSegmentation, np.ndarray]:
    """(CellSegmentation keyed by molecule id, positions) from a file."""
    ids, coords, _, cells = read_assignments(path)
    order = np.argsort(ids)
    ids, coords, cells = ids[order], coords[order], cells[order]
    if ids.size and not np.array_equal(ids, np.arange(ids.size)):
        raise AlignmentError("molecule ids must be contiguous from 0")
    return CellSegmentation.from_assignment(cells), coords


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
