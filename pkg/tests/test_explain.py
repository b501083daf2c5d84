"""Saliency maps and t-SNE embeddings: hand-computed CAM fixtures, the
bandwidth search on symmetric inputs, blob-separation and KL-trace
oracles, and the CSV export."""

from types import SimpleNamespace

import numpy as np
import pytest

from irispad.explain import (
    Embedding,
    Heatmap,
    TSNE_DEFAULTS,
    average_heatmap,
    conditional_probabilities,
    extract_block_features,
    grad_cam,
    heatmap_overlay,
    heatmap_to_u8,
    tsne,
    write_embedding_csv,
    _joint_p,
    _pairwise_sq_dists,
)
from irispad.model import ModelConfig, build_model
from irispad.synthdata import generate


class StubModel:
    """Single-block model facade exposing fixed activations and gradients,
    so the map arithmetic can be checked against hand computations."""

    num_blocks = 1

    def __init__(self, acts, grads):
        self.acts = np.asarray(acts, dtype=np.float64)
        self.grads = np.asarray(grads, dtype=np.float64)
        size = self.acts.shape[-1]
        self.config = SimpleNamespace(input_size=size)

    def forward_batch(self, x, need_caches=False):
        logits = np.zeros((1, 2))
        return logits, [self.acts], None

    def backward_to_block(self, grad_logits, caches, block_index):
        return self.grads * grad_logits.sum()


class TestGradCamArithmetic:
    def test_hand_example_positive_gradient(self):
        acts = np.array([[[[1.0, -1.0], [2.0, 0.0]]]])
        stub = StubModel(acts, np.ones_like(acts))
        hm = grad_cam(stub, np.zeros((2, 2)))
        np.testing.assert_allclose(hm.values, [[0.5, 0.0], [1.0, 0.0]], atol=1e-15)
        assert not hm.all_zero

    def test_hand_example_negative_gradient(self):
        acts = np.array([[[[1.0, -1.0], [2.0, 0.0]]]])
        stub = StubModel(acts, -np.ones_like(acts))
        hm = grad_cam(stub, np.zeros((2, 2)))
        # alpha = -1, map = ReLU(-A): only the -1 entry survives
        np.testing.assert_allclose(hm.values, [[0.0, 1.0], [0.0, 0.0]], atol=1e-15)

    def test_two_maps_weighted_sum(self):
        a0 = [[2.0, 0.0], [0.0, 0.0]]
        a1 = [[0.0, 4.0], [0.0, 0.0]]
        acts = np.array([[a0, a1]])
        # alpha_0 = 1, alpha_1 = 0.5 -> map [[2,2],[0,0]]
        grads = np.array([[np.ones((2, 2)), np.full((2, 2), 0.5)]])
        hm = grad_cam(StubModel(acts, grads), np.zeros((2, 2)))
        np.testing.assert_allclose(hm.values, [[1.0, 1.0], [0.0, 0.0]], atol=1e-15)

    def test_all_zero_flagged(self):
        acts = np.zeros((1, 3, 2, 2))
        hm = grad_cam(StubModel(acts, np.ones_like(acts)), np.zeros((2, 2)))
        assert hm.all_zero
        np.testing.assert_array_equal(hm.values, np.zeros((2, 2)))


class TestGradCamOnModel:
    def test_invariants(self, tiny_model, rng):
        img = rng.random((16, 16))
        for bi in range(tiny_model.num_blocks):
            hm = grad_cam(tiny_model, img, block_index=bi)
            assert hm.values.shape == (16, 16)
            assert hm.values.min() >= 0.0
            if not hm.all_zero:
                assert hm.values.max() == pytest.approx(1.0, abs=1e-12)

    def test_default_block_is_last(self, tiny_model, rng):
        img = rng.random((16, 16))
        a = grad_cam(tiny_model, img)
        b = grad_cam(tiny_model, img, block_index=tiny_model.num_blocks - 1)
        np.testing.assert_array_equal(a.values, b.values)

    def test_block_out_of_range(self, tiny_model, rng):
        with pytest.raises(ValueError):
            grad_cam(tiny_model, rng.random((16, 16)), block_index=5)

    def test_dead_network_flagged(self, rng):
        model = build_model(ModelConfig(input_size=16, stem_filters=4, growth_rate=2, block_layers=(1, 1)), seed=0)
        for k, v in model.params().items():
            v[...] = 0.0
        hm = grad_cam(model, rng.random((16, 16)))
        assert hm.all_zero

    def test_deterministic(self, tiny_model, rng):
        img = rng.random((16, 16))
        np.testing.assert_array_equal(grad_cam(tiny_model, img).values, grad_cam(tiny_model, img).values)


class TestAverageHeatmap:
    def test_single_is_identity(self):
        hm = Heatmap(values=np.array([[0.2, 1.0], [0.0, 0.5]]), source_class="print")
        avg = average_heatmap([hm])
        np.testing.assert_allclose(avg.values, hm.values, atol=1e-15)
        assert avg.source_class == "print"

    def test_mirror_pair_symmetric(self):
        v = np.array([[1.0, 0.0], [0.25, 0.5]])
        avg = average_heatmap([Heatmap(values=v), Heatmap(values=v[:, ::-1].copy())])
        np.testing.assert_allclose(avg.values, avg.values[:, ::-1], atol=1e-15)

    def test_identical_maps_unchanged(self):
        v = np.array([[0.0, 0.5], [1.0, 0.25]])
        avg = average_heatmap([Heatmap(values=v.copy()) for _ in range(5)])
        np.testing.assert_allclose(avg.values, v, atol=1e-15)

    def test_mixed_resolution_rejected(self):
        with pytest.raises(ValueError):
            average_heatmap([Heatmap(values=np.zeros((2, 2))), Heatmap(values=np.zeros((3, 3)))])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_heatmap([])

    def test_all_zero_average(self):
        avg = average_heatmap([Heatmap(values=np.zeros((2, 2)), all_zero=True)] * 2)
        assert avg.all_zero


class TestOverlay:
    def test_shape_and_dtype(self):
        hm = Heatmap(values=np.array([[1.0, 0.0], [0.5, 0.25]]))
        out = heatmap_overlay(np.full((2, 2), 128, dtype=np.uint8), hm)
        assert out.shape == (2, 2, 3)
        assert out.dtype == np.uint8

    def test_hot_pixels_pull_red(self):
        hm = Heatmap(values=np.array([[1.0, 0.0]]))
        out = heatmap_overlay(np.full((1, 2), 100, dtype=np.uint8), hm)
        r_hot, b_hot = int(out[0, 0, 0]), int(out[0, 0, 2])
        r_cold, b_cold = int(out[0, 1, 0]), int(out[0, 1, 2])
        assert r_hot > b_hot
        assert b_cold > r_cold

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            heatmap_overlay(np.zeros((3, 3), dtype=np.uint8), Heatmap(values=np.zeros((2, 2))))

    def test_u8_export(self):
        hm = Heatmap(values=np.array([[0.0, 1.0]]))
        u8 = heatmap_to_u8(hm)
        assert u8.dtype == np.uint8
        assert u8[0, 1] == 255


class TestFeatureExtraction:
    def test_default_config_last_block_width(self, default_model):
        data = [generate("bonafide", seed=s, size=96) for s in range(2)]
        feats = extract_block_features(default_model, data, 3)
        # last block: 32 maps at 4x4 under the default pooling chain
        assert feats.shape == (2, 32 * 4 * 4)

    def test_identical_inputs_identical_rows(self, tiny_model):
        im = generate("print", seed=1, size=48)
        feats = extract_block_features(tiny_model, [im, im], 0)
        np.testing.assert_array_equal(feats[0], feats[1])

    def test_row_per_sample_and_chunking(self, tiny_model):
        data = [generate("bonafide", seed=s, size=48) for s in range(5)]
        whole = extract_block_features(tiny_model, data, 1)
        chunked = extract_block_features(tiny_model, data, 1, chunk=2)
        assert whole.shape[0] == 5
        np.testing.assert_array_equal(whole, chunked)

    def test_index_out_of_range(self, tiny_model):
        with pytest.raises(ValueError):
            extract_block_features(tiny_model, [], 7)


class TestBandwidthSearch:
    def test_equidistant_rows_uniform(self):
        # regular simplex: every off-diagonal distance equal, so each row
        # must come out uniform with entropy log(n-1) == log(perplexity)
        n = 6
        pts = np.eye(n) * 3.0
        p = conditional_probabilities(_pairwise_sq_dists(pts), perplexity=n - 1)
        off = p[~np.eye(n, dtype=bool)]
        np.testing.assert_allclose(off, 1.0 / (n - 1), atol=1e-9)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(np.diag(p) == 0.0)

    def test_unreachable_entropy_names_point(self):
        pts = np.eye(8) * 2.0  # entropy pinned at log 7 for every beta
        with pytest.raises(ValueError) as e:
            conditional_probabilities(_pairwise_sq_dists(pts), perplexity=3)
        assert "point 0" in str(e.value)

    def test_row_entropy_matches_target(self, rng):
        pts = rng.random((40, 4))
        perp = 10.0
        p = conditional_probabilities(_pairwise_sq_dists(pts), perp)
        for i in range(40):
            row = p[i][p[i] > 0]
            h = -(row * np.log(row)).sum()
            assert h == pytest.approx(np.log(perp), abs=1e-4)

    def test_joint_p_valid_distribution(self, rng):
        pts = rng.random((30, 3))
        p = _joint_p(pts, 5.0)
        assert p.min() >= 0.0
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(p, p.T, atol=1e-15)


class TestTsne:
    def test_preconditions(self, rng):
        with pytest.raises(ValueError):
            tsne(rng.random((10, 3)), perplexity=5)  # needs n >= 15
        with pytest.raises(ValueError):
            tsne(rng.random((10, 3)), perplexity=1.0)

    def test_deterministic(self, rng):
        pts = rng.random((20, 4))
        a = tsne(pts, perplexity=5, iters=60, seed=3)
        b = tsne(pts, perplexity=5, iters=60, seed=3)
        np.testing.assert_array_equal(a.coords, b.coords)
        assert a.kl == b.kl

    def test_seed_changes_layout(self, rng):
        pts = rng.random((20, 4))
        a = tsne(pts, perplexity=5, iters=60, seed=3)
        b = tsne(pts, perplexity=5, iters=60, seed=4)
        assert (a.coords != b.coords).any()

    def test_shape_and_finiteness(self, rng):
        pts = rng.random((24, 6))
        emb = tsne(pts, perplexity=6, iters=80, seed=0)
        assert emb.coords.shape == (24, 2)
        assert np.isfinite(emb.coords).all()
        assert emb.kl_history.shape == (80,)
        assert emb.params["perplexity"] == 6

    def test_three_blobs_separate(self):
        rng = np.random.default_rng(0)
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        pts = np.concatenate([c + rng.normal(0, 0.01, (50, 2)) for c in centers])
        labels = np.repeat([0, 1, 2], 50)
        emb = tsne(pts, perplexity=30, iters=400, seed=1)

        d = _pairwise_sq_dists(emb.coords)
        np.fill_diagonal(d, np.inf)
        nn5 = np.argsort(d, axis=1)[:, :5]
        purity = np.mean(labels[nn5] == labels[:, None])
        assert purity >= 0.95

    def test_kl_trace_settles(self):
        rng = np.random.default_rng(2)
        pts = np.concatenate(
            [c + rng.normal(0, 0.05, (30, 3)) for c in (np.zeros(3), np.full(3, 8.0))]
        )
        # full-length run: the adaptive-gain optimizer can still bump the
        # KL mid-run, but the final stretch has to sit flat
        emb = tsne(pts, perplexity=10, iters=1000, seed=0)
        tail = emb.kl_history[-100:]
        rises = np.diff(tail)
        assert rises.max() <= 1e-3
        assert emb.kl == pytest.approx(tail[-1])

    def test_defaults_recorded(self):
        assert TSNE_DEFAULTS["perplexity"] == 30.0
        assert TSNE_DEFAULTS["iters"] == 1000
        assert TSNE_DEFAULTS["early_exaggeration"] == 12.0
        assert TSNE_DEFAULTS["learning_rate"] == 200.0


class TestEmbeddingCsv:
    def test_roundtrip_columns(self, tmp_path, rng):
        emb = Embedding(
            coords=rng.random((4, 2)),
            block_index=2,
            labels=["bonafide", "print", "bonafide", "print"],
        )
        p = tmp_path / "emb.csv"
        write_embedding_csv(p, emb)
        lines = p.read_text().splitlines()
        assert lines[0] == "x,y,label,block"
        assert len(lines) == 5
        assert lines[1].endswith(",bonafide,2")
