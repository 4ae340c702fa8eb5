"""Synthetic ground-truth generator for benchmarking the pipeline.

Cells sit on a jittered grid with centers at least 3 r_cell apart; each
cell's molecules scatter isotropically (sigma = r_cell / 2) and draw genes
from its type's multinomial profile. Profiles put 80% of their mass on a
type-specific quarter of the panel. A configurable fraction of extra noise
molecules is scattered uniformly and left unassigned in the ground truth.
"""

from __future__ import annotations

import numpy as np

from .data import GenePanel, MoleculeTable
from .pipeline import UNASSIGNED, CellSegmentation


def _type_profiles(n_types: int, n_genes: int, rng: np.random.Generator) -> np.ndarray:
    quarter = max(1, n_genes // 4)
    profiles = np.empty((n_types, n_genes))
    for t in range(n_types):
        lo = (t % 4) * quarter
        hi = min(lo + quarter, n_genes)
        inside = np.zeros(n_genes, dtype=bool)
        inside[lo:hi] = True
        p = np.zeros(n_genes)
        p[inside] = rng.dirichlet(np.ones(inside.sum())) * 0.8
        p[~inside] = rng.dirichlet(np.ones((~inside).sum())) * 0.2
        profiles[t] = p / p.sum()
    return profiles


def _jittered_centers(n_cells: int, r_cell: float, rng: np.random.Generator) -> np.ndarray:
    # spacing 4r with jitter up to r/2 per axis keeps centers >= 3r apart
    cols = int(np.ceil(np.sqrt(n_cells)))
    gx, gy = np.meshgrid(np.arange(cols), np.arange(int(np.ceil(n_cells / cols))))
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)[:n_cells] * (4.0 * r_cell)
    jitter = rng.uniform(-r_cell / 2, r_cell / 2, size=grid.shape)
    return grid.astype(np.float64) + jitter


def generate(
    n_cells: int,
    per_cell: int,
    n_types: int,
    r_cell: float,
    seed: int = 0,
    noise_fraction: float = 0.0,
    n_genes: int = 32,
) -> tuple[MoleculeTable, CellSegmentation]:
    """Returns (molecule table, ground-truth segmentation over its rows)."""
    if min(n_cells, per_cell, n_types, n_genes) < 1:
        raise ValueError("counts must be >= 1")
    if not 0 <= noise_fraction < 1:
        raise ValueError("noise_fraction must be in [0, 1)")
    if r_cell <= 0:
        raise ValueError("r_cell must be > 0")

    rng = np.random.default_rng(seed)
    profiles = _type_profiles(n_types, n_genes, rng)
    centers = _jittered_centers(n_cells, r_cell, rng)

    positions = []
    genes = []
    truth = []
    for cell in range(n_cells):
        ctype = cell % n_types
        pts = centers[cell] + rng.normal(0.0, r_cell / 2.0, size=(per_cell, 2))
        labs = rng.choice(n_genes, size=per_cell, p=profiles[ctype])
        positions.append(pts)
        genes.append(labs)
        truth.append(np.full(per_cell, cell, dtype=np.int64))

    n_signal = n_cells * per_cell
    n_noise = int(round(n_signal * noise_fraction / (1.0 - noise_fraction)))
    if n_noise:
        lo = centers.min(axis=0) - 2 * r_cell
        hi = centers.max(axis=0) + 2 * r_cell
        positions.append(rng.uniform(lo, hi, size=(n_noise, 2)))
        genes.append(rng.integers(0, n_genes, size=n_noise))
        truth.append(np.full(n_noise, UNASSIGNED, dtype=np.int64))

    pos = np.concatenate(positions)
    lab = np.concatenate(genes).astype(np.int64)
    tru = np.concatenate(truth)
    perm = rng.permutation(pos.shape[0])
    pos, lab, tru = pos[perm], lab[perm], tru[perm]

    panel = GenePanel(tuple(f"G{i:02d}" for i in range(n_genes)))
    table = MoleculeTable(pos, lab, panel)
    # ground-truth cell ids renumbered densely in molecule order
    remap: dict[int, int] = {}
    dense = np.full(tru.shape[0], UNASSIGNED, dtype=np.int64)
    for i, t in enumerate(tru.tolist()):
        if t != UNASSIGNED:
            dense[i] = remap.setdefault(t, len(remap))
    return table, CellSegmentation.from_assignment(dense)


def write_molecules(path, table: MoleculeTable) -> None:
    """Plain molecule table: x, y, gene (the segmentation input format)."""
    names = table.gene_names()
    with open(path, "w") as fh:
        fh.write("x,y,gene\n")
        for i in range(len(table)):
            x, y = table.positions[i]
            fh.write(f"{x!r},{y!r},{names[i]}\n")
