"""Cell outline polygons from a segmentation.

Per-cell molecule counts are binned on a regular grid, smoothed with a
truncated (radius 3 sigma, renormalized) Gaussian, and turned into a label
mask by per-pixel argmax across cells. A cell's contour is the longest path
of the minimum spanning tree over its boundary pixels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d
from scipy.sparse.csgraph import minimum_spanning_tree

from .errors import CellNotInMask, Requires2D
from .pipeline import CellSegmentation

log = logging.getLogger(__name__)

BACKGROUND = -1


@dataclass
class CountImage:
    origin: np.ndarray  # (2,) lower corner in micrometers
    bin_size: float
    shape: tuple[int, int]
    channels: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]  # cell -> (ix, iy, count)

    def channel_sum(self, cell_id: int) -> float:
        return float(self.channels[cell_id][2].sum())


@dataclass
class LabeledMask:
    origin: np.ndarray  # (2,) micrometers, includes smoothing padding
    bin_size: float
    labels: np.ndarray  # (nx, ny) int64, BACKGROUND where empty
    channel_mass: dict[int, float]  # per-cell mass after smoothing


@dataclass
class CellPolygon:
    cell_id: int
    vertices: np.ndarray  # (m, 2) micrometers, ordered along the contour


def _positions_of(table) -> np.ndarray:
    return table.positions if hasattr(table, "positions") else np.asarray(table, dtype=np.float64)


def rasterize_counts(seg: CellSegmentation, table, bin_size: float) -> CountImage:
    """Per-cell molecule counts in square bins covering the assigned bounding
    box. A molecule exactly on a bin boundary lands in the lower-index bin."""
    if bin_size <= 0:
        raise ValueError("bin_size must be > 0")
    pos = _positions_of(table)
    if pos.shape[1] != 2:
        raise Requires2D("contour rasterization needs 2D positions")
    assigned = seg.assignment != BACKGROUND
    if not assigned.any():
        return CountImage(np.zeros(2), bin_size, (0, 0), {})
    pts = pos[assigned]
    origin = pts.min(axis=0)
    idx = np.floor((pts - origin) / bin_size).astype(np.int64)
    shape = (int(idx[:, 0].max()) + 1, int(idx[:, 1].max()) + 1)

    channels = {}
    cells_of = seg.assignment[assigned]
    for cid in sorted(seg.cells):
        sel = cells_of == cid
        sub = idx[sel]
        flat = sub[:, 0] * shape[1] + sub[:, 1]
        uniq, counts = np.unique(flat, return_counts=True)
        channels[cid] = (
            (uniq // shape[1]).astype(np.int64),
            (uniq % shape[1]).astype(np.int64),
            counts.astype(np.float64),
        )
    return CountImage(origin.astype(np.float64), float(bin_size), shape, channels)


def _gauss_kernel(sigma_bins: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma_bins)) if sigma_bins > 0 else 0
    if radius == 0:
        return np.ones(1)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-0.5 * (t / sigma_bins) ** 2)
    return kern / kern.sum()


def smooth_and_label(img: CountImage, sigma: float) -> LabeledMask:
    """Argmax-across-cells label mask after Gaussian smoothing.

    The grid grows by the kernel radius on every side so smoothing loses no
    mass; pixels where every channel is zero stay background; argmax ties go
    to the lower cell id.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    kern = _gauss_kernel(sigma / img.bin_size)
    radius = len(kern) // 2
    nx = img.shape[0] + 2 * radius
    ny = img.shape[1] + 2 * radius
    best = np.zeros((nx, ny))
    labels = np.full((nx, ny), BACKGROUND, dtype=np.int64)
    mass: dict[int, float] = {}

    for cid in sorted(img.channels):
        ix, iy, cnt = img.channels[cid]
        if ix.size == 0:
            mass[cid] = 0.0
            continue
        # local window: cell bbox padded by the kernel radius, in expanded coords
        x0, x1 = int(ix.min()), int(ix.max()) + 2 * radius + 1
        y0, y1 = int(iy.min()), int(iy.max()) + 2 * radius + 1
        win = np.zeros((x1 - x0, y1 - y0))
        win[ix - x0 + radius, iy - y0 + radius] = cnt
        if radius:
            win = convolve1d(win, kern, axis=0, mode="constant")
            win = convolve1d(win, kern, axis=1, mode="constant")
        mass[cid] = float(win.sum())
        view_best = best[x0:x1, y0:y1]
        view_lab = labels[x0:x1, y0:y1]
        upd = win > view_best
        view_best[upd] = win[upd]
        view_lab[upd] = cid

    origin = img.origin - radius * img.bin_size
    return LabeledMask(origin, img.bin_size, labels, mass)


def _boundary_pixels(labels: np.ndarray, cell_id: int) -> np.ndarray:
    """Pixels of the cell 4-adjacent to a different label, background, or the
    image edge; returned in row-major order."""
    inside = labels == cell_id
    padded = np.full((labels.shape[0] + 2, labels.shape[1] + 2), BACKGROUND - 1,
                     dtype=labels.dtype)
    padded[1:-1, 1:-1] = labels
    different = np.zeros_like(inside)
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted = padded[1 + dx : labels.shape[0] + 1 + dx, 1 + dy : labels.shape[1] + 1 + dy]
        different |= shifted != cell_id
    return np.argwhere(inside & different)


def _tree_longest_path(adj: list[list[tuple[int, float]]], start: int) -> tuple[int, np.ndarray, dict]:
    """Farthest node from start in a tree plus distances and parents."""
    m = len(adj)
    dist = np.full(m, -1.0)
    parent = {start: -1}
    dist[start] = 0.0
    stack = [start]
    while stack:
        node = stack.pop()
        for nb, w in adj[node]:
            if dist[nb] < 0:
                dist[nb] = dist[node] + w
                parent[nb] = node
                stack.append(nb)
    far = int(np.argmax(dist))
    return far, dist, parent


def extract_contour(mask: LabeledMask, cell_id: int) -> CellPolygon:
    """Contour polygon for one cell: the minimum spanning tree over boundary
    pixels, filtered to the tree's longest path, in micrometer coordinates."""
    if not np.any(mask.labels == cell_id):
        raise CellNotInMask(f"cell {cell_id} has no pixels in the mask")
    bpix = _boundary_pixels(mask.labels, cell_id)
    m = bpix.shape[0]
    if m < 3:
        # too few boundary pixels for a path polygon: emit the bin outline
        lo = bpix.min(axis=0).astype(np.float64)
        hi = bpix.max(axis=0).astype(np.float64) + 1.0
        corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
        verts = mask.origin + corners * mask.bin_size
        return CellPolygon(cell_id, verts)

    diff = bpix[:, None, :] - bpix[None, :, :]
    dists = np.sqrt((diff.astype(np.float64) ** 2).sum(axis=2))
    tree = minimum_spanning_tree(dists).tocoo()
    adj: list[list[tuple[int, float]]] = [[] for _ in range(m)]
    for r, c, w in zip(tree.row, tree.col, tree.data):
        adj[int(r)].append((int(c), float(w)))
        adj[int(c)].append((int(r), float(w)))

    a, _, _ = _tree_longest_path(adj, 0)
    b, _, parent = _tree_longest_path(adj, a)
    path = [b]
    while parent[path[-1]] != -1:
        path.append(parent[path[-1]])
    centers = bpix[path].astype(np.float64) + 0.5
    verts = mask.origin + centers * mask.bin_size
    return CellPolygon(cell_id, verts)


def contour_cells(
    seg: CellSegmentation,
    table,
    bin_size: float,
    sigma: float,
) -> list[CellPolygon]:
    """All cell contours for a segmentation; 3D positions are projected to
    2D with a warning."""
    pos = _positions_of(table)
    if pos.shape[1] == 3:
        log.warning("3D input: contours use the (x, y) projection, z ignored")
        pos = pos[:, :2]
    img = rasterize_counts(seg, pos, bin_size)
    mask = smooth_and_label(img, sigma)
    polys = []
    for cid in sorted(seg.cells):
        try:
            polys.append(extract_contour(mask, cid))
        except CellNotInMask:
            # a small cell can be completely overwritten in the argmax mask
            log.warning("cell %d left no pixels in the label mask; skipped", cid)
    return polys


def export_geojson(polygons: list[CellPolygon], path) -> None:
    """One closed-ring Polygon feature per cell, cell id in properties."""
    features = []
    for poly in polygons:
        ring = [[float(x), float(y)] for x, y in poly.vertices]
        ring.append(ring[0])
        features.append({
            "type": "Feature",
            "properties": {"cell_id": poly.cell_id},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=2)
        fh.write("\n")


def export_vertex_table(polygons: list[CellPolygon], path, delimiter: str = ",") -> None:
    with open(path, "w") as fh:
        fh.write(delimiter.join(["cell_id", "vertex", "x", "y"]) + "\n")
        for poly in polygons:
            for k, (x, y) in enumerate(poly.vertices):
                fh.write(delimiter.join([str(poly.cell_id), str(k), repr(float(x)),
                                         repr(float(y))]) + "\n")
