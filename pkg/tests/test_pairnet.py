import numpy as np
import pytest

from cellseg.data import GenePanel, MoleculeTable, build_spatial_index
from cellseg.errors import DimensionMismatch, NoEligiblePairs
from cellseg.features import compositional_features
from cellseg.pairnet import (
    AdamState,
    PairNet,
    TrainConfig,
    bce_loss,
    encode,
    init_network,
    load_network,
    loss_and_grads,
    pair_posterior,
    sample_training_pairs,
    save_network,
    train,
    _net_from_params,
    _params,
)


def reference_forward(net, x):
    """Straightforward loop-based forward pass, independent of the batch code."""

    def elu(t):
        return t if t > 0 else np.expm1(t)

    h = np.array([elu(float(net.w1[r] @ x + net.b1[r])) for r in range(net.hidden)])
    return np.array([elu(float(net.w2[r] @ h + net.b2[r])) for r in range(net.latent)])


class TestInitNetwork:
    def test_same_seed_identical(self):
        a = init_network(10, 8, 4, seed=5)
        b = init_network(10, 8, 4, seed=5)
        for pa, pb in zip(_params(a), _params(b)):
            np.testing.assert_array_equal(pa, pb)

    def test_different_seeds_differ(self):
        a = init_network(10, 8, 4, seed=5)
        b = init_network(10, 8, 4, seed=6)
        assert not np.array_equal(a.w1, b.w1)

    def test_minimal_dims_evaluate(self):
        net = init_network(1, 1, 1, seed=0)
        assert np.isfinite(encode(net, np.array([2.0]))).all()

    def test_classifier_prior(self):
        net = init_network(4, 4, 2, seed=0)
        assert net.scale == -1.0 and net.bias == 0.0


class TestEncode:
    def test_zero_net_gives_zero(self):
        net = PairNet(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 3)), np.zeros(2), -1.0, 0.0)
        np.testing.assert_array_equal(encode(net, np.array([1.0, 2.0])), [0.0, 0.0])

    def test_identity_net_passes_nonnegative_input(self):
        net = PairNet(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3), -1.0, 0.0)
        x = np.array([0.5, 2.0, 0.0])
        np.testing.assert_array_equal(encode(net, x), x)

    def test_matches_reference_forward(self):
        rng = np.random.default_rng(8)
        for seed in range(5):
            net = init_network(7, 6, 3, seed=seed)
            x = rng.uniform(-2, 4, size=7)
            np.testing.assert_allclose(encode(net, x), reference_forward(net, x), rtol=1e-12)

    def test_dimension_mismatch(self):
        net = init_network(4, 4, 2, seed=0)
        with pytest.raises(DimensionMismatch):
            encode(net, np.zeros(5))


class TestPairPosterior:
    def test_identical_features_give_sigmoid_bias(self):
        net = init_network(4, 4, 2, seed=1)
        x = np.array([1.0, 0.0, 2.0, 3.0])
        assert pair_posterior(net, x, x) == pytest.approx(0.5)  # sigmoid(0)

    def test_zero_scale_ignores_distance(self):
        net = init_network(4, 4, 2, seed=1)
        net.scale = 0.0
        net.bias = 1.5
        rng = np.random.default_rng(2)
        ys = {pair_posterior(net, rng.uniform(0, 3, 4), rng.uniform(0, 3, 4))
              for _ in range(5)}
        assert ys == {pytest.approx(1.0 / (1.0 + np.exp(-1.5)))}

    def test_symmetry_exact(self):
        net = init_network(6, 8, 4, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = rng.uniform(0, 5, size=6)
            b = rng.uniform(0, 5, size=6)
            assert pair_posterior(net, a, b) == pair_posterior(net, b, a)

    def test_output_in_open_interval(self):
        net = init_network(5, 4, 2, seed=0)
        rng = np.random.default_rng(5)
        for _ in range(50):
            y = pair_posterior(net, rng.uniform(0, 50, 5), rng.uniform(0, 50, 5))
            assert 0.0 < y < 1.0


class TestBceLoss:
    def test_half(self):
        assert bce_loss(0.5, 1) == pytest.approx(np.log(2))
        assert bce_loss(0.5, 0) == pytest.approx(np.log(2))

    def test_confident_correct_is_small(self):
        assert bce_loss(1 - 1e-9, 1) < 1e-6
        assert bce_loss(1e-9, 0) < 1e-6

    def test_wrong_penalty(self):
        assert bce_loss(0.9, 0) == pytest.approx(-np.log(0.1))


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(100)
        h = 1e-5
        for probe in range(10):
            net = init_network(5, 4, 3, seed=probe)
            xi = rng.uniform(0, 6, size=(1, 5))
            xj = rng.uniform(0, 6, size=(1, 5))
            label = np.array([float(probe % 2)])
            _, grads = loss_and_grads(net, xi, xj, label)
            params = _params(net)
            for p_idx, p in enumerate(params):
                flat = p.reshape(-1)
                gflat = np.asarray(grads[p_idx]).reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    lp, _ = loss_and_grads(_net_from_params(params), xi, xj, label)
                    flat[i] = orig - h
                    lm, _ = loss_and_grads(_net_from_params(params), xi, xj, label)
                    flat[i] = orig
                    fd = (lp - lm) / (2 * h)
                    rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-8)
                    assert rel < 1e-4

    def test_zero_distance_pair_has_finite_gradients(self):
        net = init_network(4, 4, 2, seed=0)
        x = np.array([[1.0, 2.0, 0.0, 1.0]])
        loss, grads = loss_and_grads(net, x, x, np.array([1.0]))
        assert np.isfinite(loss)
        for g in grads:
            assert np.all(np.isfinite(g))


class TestAdam:
    def test_zero_gradient_is_noop(self):
        net = init_network(4, 4, 2, seed=0)
        params = _params(net)
        adam = AdamState(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
        zero = [np.zeros_like(p) for p in params]
        out = adam.step(params, zero)
        for p, q in zip(params, out):
            np.testing.assert_array_equal(p, q)

    def test_step_moves_against_gradient(self):
        params = [np.array([1.0])]
        adam = AdamState(params, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        out = adam.step(params, [np.array([2.0])])
        assert out[0][0] < 1.0


def cluster_table(rng, centers, per_cluster, labels):
    """Gaussian blobs, one gene per cluster."""
    panel = GenePanel(tuple(sorted(set(labels))))
    pos = []
    lab = []
    for c, (center, gene) in enumerate(zip(centers, labels)):
        pos.append(rng.normal(0, 0.8, size=(per_cluster, 2)) + center)
        lab += [panel.index_of(gene)] * per_cluster
    return MoleculeTable(np.concatenate(pos), np.array(lab, dtype=np.int64), panel)


class TestSampler:
    def test_two_clusters_respect_distance_rules(self):
        rng = np.random.default_rng(0)
        r_cell = 4.0
        table = cluster_table(rng, [(0, 0), (3 * r_cell, 0)], 40, ["A", "B"])
        index = build_spatial_index(table)
        config = TrainConfig(r_cell=r_cell, pairs_per_epoch=200)
        pairs = sample_training_pairs(table, index, config, np.random.default_rng(1))
        assert len(pairs) == 200
        n_pos = sum(p.label for p in pairs)
        assert n_pos == 100
        for p in pairs:
            d = np.linalg.norm(table.positions[p.i] - table.positions[p.j])
            if p.label == 1:
                assert d < r_cell
            else:
                assert 2 * r_cell < d <= 6 * r_cell

    def test_no_negatives_possible_raises(self):
        panel = GenePanel(("A",))
        r = 4.0
        pos = np.array([[0.0, 0.0], [0.5 * r, 0.0]])
        table = MoleculeTable(pos, np.zeros(2, dtype=np.int64), panel)
        index = build_spatial_index(table)
        config = TrainConfig(r_cell=r, pairs_per_epoch=10)
        with pytest.raises(NoEligiblePairs):
            sample_training_pairs(table, index, config, np.random.default_rng(0))

    def test_fixed_seed_reproducible(self, random_table, random_index):
        config = TrainConfig(r_cell=6.0, pairs_per_epoch=50)
        a = sample_training_pairs(random_table, random_index, config, np.random.default_rng(7))
        b = sample_training_pairs(random_table, random_index, config, np.random.default_rng(7))
        assert a == b


class TestTrain:
    @pytest.fixture
    def separable(self):
        rng = np.random.default_rng(42)
        r_cell = 4.0
        centers = [(i * 3 * r_cell, j * 3 * r_cell) for i in range(3) for j in range(3)]
        genes = ["A" if (i + j) % 2 else "B" for i in range(3) for j in range(3)]
        table = cluster_table(rng, centers, 40, genes)
        index = build_spatial_index(table)
        feats = compositional_features(table, index, k=12)
        return table, index, feats, r_cell

    def test_loss_drops_on_separable_data(self, separable):
        table, index, feats, r_cell = separable
        net = init_network(table.panel.size, hidden=16, latent=4, seed=0)
        config = TrainConfig(r_cell=r_cell, max_epochs=60, batch_size=128, seed=0)
        net, history = train(net, table, index, feats, config)
        assert history[-1] < 0.3 or min(history) < 0.3
        assert len(history) <= 60

    def test_same_seed_identical_history(self, separable):
        table, index, feats, r_cell = separable
        histories = []
        for _ in range(2):
            net = init_network(table.panel.size, hidden=8, latent=4, seed=1)
            config = TrainConfig(r_cell=r_cell, max_epochs=8, patience=5, batch_size=128, seed=3)
            _, history = train(net, table, index, feats, config)
            histories.append(history)
        assert histories[0] == histories[1]

    def test_early_stop_fires_on_stagnation(self, separable):
        table, index, feats, r_cell = separable
        net = init_network(table.panel.size, hidden=8, latent=4, seed=1)
        # zero learning rate: the loss can never improve after epoch 1
        config = TrainConfig(r_cell=r_cell, max_epochs=100, patience=4,
                             batch_size=128, learning_rate=0.0, seed=3)
        _, history = train(net, table, index, feats, config)
        assert len(history) == 1 + config.patience + 1

    def test_running_best_nonincreasing(self, separable):
        table, index, feats, r_cell = separable
        net = init_network(table.panel.size, hidden=8, latent=4, seed=2)
        config = TrainConfig(r_cell=r_cell, max_epochs=20, batch_size=128, seed=5)
        _, history = train(net, table, index, feats, config)
        best = np.minimum.accumulate(history)
        assert all(a >= b for a, b in zip(best, best[1:]))


def test_save_load_roundtrip(tmp_path):
    net = init_network(9, 6, 3, seed=11)
    path = tmp_path / "net.bin"
    save_network(net, path, seed=11, config={"r_cell": 8.0})
    loaded = load_network(path)
    for a, b in zip(_params(net), _params(loaded)):
        np.testing.assert_array_equal(a, b)
