"""Segmentation comparison: Dice index, optimal one-to-one cell matching,
and summary metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptySet
from .pipeline import CellSegmentation


def dice_index(a, b) -> float:
    """2|a n b| / (|a| + |b|) for two molecule id sets."""
    a, b = set(a), set(b)
    if not a or not b:
        raise EmptySet("dice_index needs nonempty sets")
    return 2.0 * len(a & b) / (len(a) + len(b))


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (cell id in A, cell id in B, dice)
    unmatched_a: list[int]
    unmatched_b: list[int]
    median_dice: float | None
    mean_dice: float | None

    def to_dict(self) -> dict:
        return {
            "pairs": [[a, b, d] for a, b, d in self.pairs],
            "unmatched_a": self.unmatched_a,
            "unmatched_b": self.unmatched_b,
            "median_dice": self.median_dice,
            "mean_dice": self.mean_dice,
        }


def match_cells(seg_a: CellSegmentation, seg_b: CellSegmentation) -> MatchResult:
    """One-to-one matching maximizing total Dice (rectangular assignment).

    The Dice matrix is filled sparsely from molecule-overlap counts, so cell
    pairs sharing no molecule cost nothing. Zero-dice assignments are
    reported as unmatched.
    """
    ids_a = sorted(seg_a.cells)
    ids_b = sorted(seg_b.cells)
    if not ids_a or not ids_b:
        return MatchResult([], ids_a, ids_b, None, None)
    pos_a = {c: i for i, c in enumerate(ids_a)}
    pos_b = {c: i for i, c in enumerate(ids_b)}

    # overlap counts via the molecule -> (cell in A, cell in B) join
    overlap: dict[tuple[int, int], int] = {}
    assign_a, assign_b = seg_a.assignment, seg_b.assignment
    both = (assign_a != -1) & (assign_b != -1)
    for ca, cb in zip(assign_a[both].tolist(), assign_b[both].tolist()):
        key = (ca, cb)
        overlap[key] = overlap.get(key, 0) + 1

    dice = np.zeros((len(ids_a), len(ids_b)))
    for (ca, cb), cnt in overlap.items():
        size_a = seg_a.cells[ca].size
        size_b = seg_b.cells[cb].size
        dice[pos_a[ca], pos_b[cb]] = 2.0 * cnt / (size_a + size_b)

    rows, cols = linear_sum_assignment(dice, maximize=True)
    pairs = []
    matched_a: set[int] = set()
    matched_b: set[int] = set()
    for r, c in zip(rows.tolist(), cols.tolist()):
        if dice[r, c] > 0.0:
            pairs.append((ids_a[r], ids_b[c], float(dice[r, c])))
            matched_a.add(ids_a[r])
            matched_b.add(ids_b[c])
    values = [d for _, _, d in pairs]
    return MatchResult(
        pairs=pairs,
        unmatched_a=[c for c in ids_a if c not in matched_a],
        unmatched_b=[c for c in ids_b if c not in matched_b],
        median_dice=float(np.median(values)) if values else None,
        mean_dice=float(np.mean(values)) if values else None,
    )


@dataclass
class SummaryMetrics:
    cell_count: int
    assigned_count: int
    assigned_fraction: float
    size_histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "cell_count": self.cell_count,
            "assigned_count": self.assigned_count,
            "assigned_fraction": self.assigned_fraction,
            "size_histogram": {str(k): v for k, v in sorted(self.size_histogram.items())},
        }


def summary_metrics(seg: CellSegmentation, total_molecules: int) -> SummaryMetrics:
    if total_molecules < seg.n:
        raise ValueError("total_molecules smaller than the segmentation")
    sizes: dict[int, int] = {}
    for members in seg.cells.values():
        sizes[members.size] = sizes.get(members.size, 0) + 1
    assigned = seg.assigned_count()
    fraction = assigned / total_molecules if total_molecules else 0.0
    return SummaryMetrics(seg.n_cells, assigned, fraction, sizes)


def dice_histogram(values, bin_width: float = 0.05):
    """(bin_edges, counts) over [0, 1]; the last bin is closed at 1."""
    edges = np.arange(0.0, 1.0 + bin_width / 2, bin_width)
    counts, _ = np.histogram(np.asarray(list(values), dtype=np.float64), bins=edges)
    return edges, counts


def write_match_json(path, match: MatchResult) -> None:
    with open(path, "w") as fh:
        json.dump(match.to_dict(), fh, indent=2)
        fh.write("\n")


def write_match_pairs(path, match: MatchResult, delimiter: str = ",") -> None:
    with open(path, "w") as fh:
        fh.write(delimiter.join(["cell_a", "cell_b", "dice"]) + "\n")
        for a, b, d in match.pairs:
            fh.write(delimiter.join([str(a), str(b), repr(d)]) + "\n")


def write_dice_histogram(path, match: MatchResult, bin_width: float = 0.05,
                         delimiter: str = ",") -> None:
    edges, counts = dice_histogram([d for _, _, d in match.pairs], bin_width)
    with open(path, "w") as fh:
        fh.write(delimiter.join(["bin_lo", "bin_hi", "count"]) + "\n")
        for i, cnt in enumerate(counts):
            fh.write(delimiter.join([repr(float(edges[i])), repr(float(edges[i + 1])),
                                     str(int(cnt))]) + "\n")
