"""Siamese pair classifier over compositional features.

Two shared fully connected layers with ELU activations encode a feature
vector into a latent point; a scalar affine on the Euclidean distance
between two latent points, squashed by a sigmoid, gives the posterior that
the two molecules share a cell. Training minimizes binary cross entropy
with Adam on distance-heuristic pair labels: closer than r_cell means same
cell, between 2 r_cell and 6 r_cell means different cells.

Everything is plain float64 numpy so gradients can be checked against
finite differences.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .data import MoleculeTable, SpatialIndex
from .errors import DimensionMismatch, NoEligiblePairs

log = logging.getLogger(__name__)

SIGMOID_CLAMP = 30.0
POSTERIOR_EPS = 1e-12
IMPROVEMENT_EPS = 1e-6


@dataclass
class PairNet:
    w1: np.ndarray  # (hidden, panel)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (latent, hidden)
    b2: np.ndarray  # (latent,)
    scale: float  # classifier slope on the latent distance
    bias: float  # classifier intercept

    @property
    def panel_size(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def latent(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "PairNet":
        return PairNet(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
            float(self.scale), float(self.bias),
        )


@dataclass
class TrainConfig:
    r_cell: float
    max_epochs: int = 300
    patience: int = 15
    batch_size: int = 2048
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    pairs_per_epoch: int | None = None  # defaults to the molecule count

    def __post_init__(self):
        if self.r_cell <= 0:
            raise ValueError("r_cell must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.patience < self.max_epochs:
            raise ValueError("patience must be < max_epochs")


@dataclass(frozen=True)
class LabeledPair:
    i: int
    j: int
    label: int  # 1 same cell, 0 different cells

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pair endpoints must differ")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def init_network(panel_size: int, hidden: int = 64, latent: int = 16, seed: int = 0) -> PairNet:
    """Glorot-uniform weights, zero biases, classifier scale -1 / bias 0.

    The negative initial scale encodes the monotone prior that a larger
    latent distance means a lower same-cell posterior.
    """
    if min(panel_size, hidden, latent) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, size=(rows, cols))

    return PairNet(
        w1=glorot(hidden, panel_size),
        b1=np.zeros(hidden),
        w2=glorot(latent, hidden),
        b2=np.zeros(latent),
        scale=-1.0,
        bias=0.0,
    )


def _elu(u: np.ndarray) -> np.ndarray:
    return np.where(u > 0, u, np.expm1(np.minimum(u, 0.0)))


def _elu_grad(u: np.ndarray) -> np.ndarray:
    return np.where(u > 0, 1.0, np.exp(np.minimum(u, 0.0)))


def _sigmoid(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-s))


def _encode_batch(net: PairNet, x: np.ndarray):
    """Forward pass with caches for the backward pass. x is (B, panel)."""
    u1 = x @ net.w1.T + net.b1
    h1 = _elu(u1)
    u2 = h1 @ net.w2.T + net.b2
    z = _elu(u2)
    return z, (x, u1, h1, u2)


def encode(net: PairNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.panel_size,):
        raise DimensionMismatch(f"feature length {x.shape} != panel size {net.panel_size}")
    z, _ = _encode_batch(net, x[None, :])
    return z[0]


def encode_all(net: PairNet, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != net.panel_size:
        raise DimensionMismatch("feature width does not match the network")
    z, _ = _encode_batch(net, features)
    return z


def latent_posteriors(net: PairNet, z_i: np.ndarray, z_j: np.ndarray) -> np.ndarray:
    delta = np.sqrt(((z_i - z_j) ** 2).sum(axis=-1))
    return _sigmoid(net.scale * delta + net.bias)


def pair_posterior(net: PairNet, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Posterior that the two molecules share a cell; symmetric in (i, j)."""
    return float(latent_posteriors(net, encode(net, x_i), encode(net, x_j)))


def bce_loss(y: float, label: int) -> float:
    y = np.clip(y, POSTERIOR_EPS, 1.0 - POSTERIOR_EPS)
    return float(-(label * np.log(y) + (1 - label) * np.log(1.0 - y)))


def _params(net: PairNet) -> list[np.ndarray]:
    return [net.w1, net.b1, net.w2, net.b2,
            np.array(net.scale, dtype=np.float64), np.array(net.bias, dtype=np.float64)]


def _net_from_params(params: list[np.ndarray]) -> PairNet:
    w1, b1, w2, b2, a, c = params
    return PairNet(w1, b1, w2, b2, float(a), float(c))


def loss_and_grads(net: PairNet, x_i: np.ndarray, x_j: np.ndarray, labels: np.ndarray):
    """Mean BCE over a batch of pairs and its gradient for every parameter.

    Returns (loss, [dW1, db1, dW2, db2, dscale, dbias]).
    """
    x_i = np.atleast_2d(np.asarray(x_i, dtype=np.float64))
    x_j = np.atleast_2d(np.asarray(x_j, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    bsz = x_i.shape[0]

    z_i, cache_i = _encode_batch(net, x_i)
    z_j, cache_j = _encode_batch(net, x_j)
    diff = z_i - z_j
    delta = np.sqrt((diff**2).sum(axis=1))
    s = net.scale * delta + net.bias
    y = _sigmoid(s)
    y_safe = np.clip(y, POSTERIOR_EPS, 1.0 - POSTERIOR_EPS)
    loss = float(-(labels * np.log(y_safe) + (1 - labels) * np.log(1 - y_safe)).mean())

    g_s = (y - labels) / bsz
    g_scale = float((g_s * delta).sum())
    g_bias = float(g_s.sum())
    g_delta = g_s * net.scale
    # unit direction of the latent difference; zero distance has no gradient
    safe = np.where(delta > 0, delta, 1.0)
    g_zi = (g_delta / safe)[:, None] * diff
    g_zi[delta == 0] = 0.0

    gw1 = np.zeros_like(net.w1)
    gb1 = np.zeros_like(net.b1)
    gw2 = np.zeros_like(net.w2)
    gb2 = np.zeros_like(net.b2)
    for g_z, (x, u1, h1, u2) in ((g_zi, cache_i), (-g_zi, cache_j)):
        g_u2 = g_z * _elu_grad(u2)
        gw2 += g_u2.T @ h1
        gb2 += g_u2.sum(axis=0)
        g_h1 = g_u2 @ net.w2
        g_u1 = g_h1 * _elu_grad(u1)
        gw1 += g_u1.T @ x
        gb1 += g_u1.sum(axis=0)

    return loss, [gw1, gb1, gw2, gb2, np.array(g_scale), np.array(g_bias)]


class AdamState:
    """Standard Adam with bias correction; a zero gradient is a no-op."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        out = []
        for idx, (p, g) in enumerate(zip(params, grads)):
            self.m[idx] = self.beta1 * self.m[idx] + (1 - self.beta1) * g
            self.v[idx] = self.beta2 * self.v[idx] + (1 - self.beta2) * g**2
            m_hat = self.m[idx] / (1 - self.beta1**self.t)
            v_hat = self.v[idx] / (1 - self.beta2**self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


class PairSampler:
    """Draws balanced same-cell / different-cell training pairs.

    Positives: anchor plus a uniformly chosen molecule strictly closer than
    r_cell. Negatives: anchor plus a uniformly chosen molecule at distance in
    (2 r_cell, 6 r_cell]. Anchors are uniform with replacement; anchors with
    no eligible partner are redrawn. Negative partners use batched rejection
    sampling against the full table (uniform over the annulus once accepted),
    falling back to exact annulus materialization for anchors the rejection
    rounds keep missing.
    """

    _REJECTION_ROUNDS = 200

    def __init__(self, points: np.ndarray, index: SpatialIndex, r_cell: float):
        self.points = points
        self.index = index
        self.r = float(r_cell)
        close = index.tree.query_ball_point(points, np.nextafter(self.r, np.inf),
                                            return_length=True)
        n6 = index.tree.query_ball_point(points, np.nextafter(6 * self.r, np.inf),
                                         return_length=True)
        n2 = index.tree.query_ball_point(points, np.nextafter(2 * self.r, np.inf),
                                         return_length=True)
        # counts are closed-ball, so eligibility can overcount molecules whose
        # only partner sits exactly on a bound; exact re-checks below demote
        # such anchors on first contact.
        self._pos_ok = np.asarray(close) > 1
        self._neg_ok = np.asarray(n6) > np.asarray(n2)
        self._pos_lists: dict[int, np.ndarray] = {}
        self._neg_lists: dict[int, np.ndarray] = {}

    def _positive_partners(self, anchor: int) -> np.ndarray:
        cached = self._pos_lists.get(anchor)
        if cached is None:
            ids = self.index.tree.query_ball_point(self.points[anchor],
                                                   np.nextafter(self.r, np.inf))
            ids = np.asarray(ids, dtype=np.int64)
            ids = ids[ids != anchor]
            if ids.size:
                d = self.index.distances_to(self.points[anchor], ids)
                ids = ids[d < self.r]
            cached = ids
            self._pos_lists[anchor] = cached
        return cached

    def _negative_partners(self, anchor: int) -> np.ndarray:
        cached = self._neg_lists.get(anchor)
        if cached is None:
            ids = self.index.tree.query_ball_point(self.points[anchor],
                                                   np.nextafter(6 * self.r, np.inf))
            ids = np.asarray(ids, dtype=np.int64)
            d = self.index.distances_to(self.points[anchor], ids)
            cached = ids[(d > 2 * self.r) & (d <= 6 * self.r)]
            self._neg_lists[anchor] = cached
        return cached

    def _fill_anchors(self, rng, anchors: np.ndarray, ok: np.ndarray) -> None:
        """Redraw anchors (uniform with replacement) for slots still at -1."""
        need = np.flatnonzero(anchors < 0)
        while need.size:
            if not ok.any():
                raise NoEligiblePairs("no molecule pair satisfies the distance rule")
            draw = rng.integers(0, self.index.n, size=need.size)
            hit = ok[draw]
            anchors[need[hit]] = draw[hit]
            need = need[~hit]

    def sample_positives(self, rng: np.random.Generator, count: int):
        out_i = np.full(count, -1, dtype=np.int64)
        out_j = np.full(count, -1, dtype=np.int64)
        while True:
            self._fill_anchors(rng, out_i, self._pos_ok)
            pending = np.flatnonzero(out_j < 0)
            if pending.size == 0:
                return out_i, out_j
            for slot in pending:
                a = int(out_i[slot])
                partners = self._positive_partners(a)
                if partners.size == 0:
                    self._pos_ok[a] = False
                    out_i[slot] = -1
                    continue
                out_j[slot] = partners[rng.integers(0, partners.size)]

    def sample_negatives(self, rng: np.random.Generator, count: int):
        n = self.index.n
        out_i = np.full(count, -1, dtype=np.int64)
        out_j = np.full(count, -1, dtype=np.int64)
        tries = np.zeros(count, dtype=np.int64)
        lo, hi = 2 * self.r, 6 * self.r
        while True:
            self._fill_anchors(rng, out_i, self._neg_ok)
            pending = np.flatnonzero(out_j < 0)
            if pending.size == 0:
                return out_i, out_j
            cand = rng.integers(0, n, size=pending.size)
            diff = self.points[cand] - self.points[out_i[pending]]
            d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            accept = (d > lo) & (d <= hi)
            out_j[pending[accept]] = cand[accept]
            tries[pending[~accept]] += 1
            for slot in pending[~accept][tries[pending[~accept]] >= self._REJECTION_ROUNDS]:
                a = int(out_i[slot])
                partners = self._negative_partners(a)
                if partners.size == 0:
                    self._neg_ok[a] = False
                    out_i[slot] = -1
                else:
                    out_j[slot] = partners[rng.integers(0, partners.size)]
                tries[slot] = 0

    def sample_epoch(self, rng: np.random.Generator, n_pairs: int):
        """(i, j, label) arrays, shuffled so batches stay roughly balanced."""
        n_pos = n_pairs - n_pairs // 2
        n_neg = n_pairs // 2
        pi, pj = self.sample_positives(rng, n_pos)
        ni, nj = self.sample_negatives(rng, n_neg)
        i = np.concatenate([pi, ni])
        j = np.concatenate([pj, nj])
        labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
        perm = rng.permutation(n_pairs)
        return i[perm], j[perm], labels[perm]


def sample_training_pairs(
    table: MoleculeTable,
    index: SpatialIndex,
    config: TrainConfig,
    rng: np.random.Generator,
) -> list[LabeledPair]:
    """One epoch worth of labeled pairs (half positive, half negative)."""
    if len(table) == 0:
        raise NoEligiblePairs("empty molecule table")
    n_pairs = config.pairs_per_epoch or len(table)
    sampler = PairSampler(table.positions, index, config.r_cell)
    i, j, labels = sampler.sample_epoch(rng, n_pairs)
    return [LabeledPair(int(a), int(b), int(t)) for a, b, t in zip(i, j, labels)]


def train(
    net: PairNet,
    table: MoleculeTable,
    index: SpatialIndex,
    features,
    config: TrainConfig,
) -> tuple[PairNet, list[float]]:
    """Adam on BCE over sampled pairs; returns the lowest-loss epoch snapshot.

    Stops early once the best epoch-mean loss has stagnated (no improvement
    greater than 1e-6) for more than `patience` epochs.
    """
    x = features.values
    if x.shape[1] != net.panel_size:
        raise DimensionMismatch("features do not match the network panel size")
    n_pairs = config.pairs_per_epoch or len(table)
    rng = np.random.default_rng(config.seed)
    sampler = PairSampler(table.positions, index, config.r_cell)

    params = [p.copy() if isinstance(p, np.ndarray) else p for p in _params(net)]
    adam = AdamState(params, config.learning_rate, config.beta1, config.beta2, config.eps)

    history: list[float] = []
    best_loss = np.inf
    best_params = [p.copy() for p in params]
    stale = 0
    for epoch in range(config.max_epochs):
        i_idx, j_idx, labels = sampler.sample_epoch(rng, n_pairs)
        loss_sum = 0.0
        for start in range(0, n_pairs, config.batch_size):
            sl = slice(start, min(start + config.batch_size, n_pairs))
            cur = _net_from_params(params)
            loss, grads = loss_and_grads(cur, x[i_idx[sl]], x[j_idx[sl]], labels[sl])
            loss_sum += loss * (sl.stop - sl.start)
            params = adam.step(params, grads)
        epoch_loss = loss_sum / n_pairs
        history.append(epoch_loss)
        if epoch_loss < best_loss - IMPROVEMENT_EPS:
            best_loss = epoch_loss
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
        if stale > config.patience:
            log.info("early stop after epoch %d (best loss %.5f)", epoch + 1, best_loss)
            break
    return _net_from_params(best_params), history


MAGIC = b"PAIRNETv1"


def save_network(net: PairNet, path, seed: int | None = None, config: dict | None = None) -> None:
    """Flat little-endian float64 blob prefixed with a JSON header."""
    config_hash = None
    if config is not None:
        config_hash = hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest()
    header = {
        "panel_size": net.panel_size,
        "hidden": net.hidden,
        "latent": net.latent,
        "seed": seed,
        "config_hash": config_hash,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in (net.w1, net.b1, net.w2, net.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.array([net.scale, net.bias], dtype="<f8").tobytes())


def load_network(path) -> PairNet:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a saved network")
        hlen = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(hlen).decode())
        L, H, Z = header["panel_size"], header["hidden"], header["latent"]

        def take(shape):
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
            return arr.reshape(shape)

        w1 = take((H, L))
        b1 = take((H,))
        w2 = take((Z, H))
        b2 = take((Z,))
        tail = take((2,))
    return PairNet(w1, b1, w2, b2, float(tail[0]), float(tail[1]))
