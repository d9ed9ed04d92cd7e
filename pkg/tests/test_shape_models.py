"""Voxel feature encoder and shape-completion training."""

import numpy as np
import pytest

from graspgraph import models
from graspgraph.geometry import VoxelGrid
from graspgraph.nn import ShapeError, Tensor, grad_check, load_checkpoint


def box_grid(lo, hi):
    g = np.zeros((32, 32, 32), dtype=np.float32)
    g[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = 1.0
    return g


def sphere_grid(center, radius):
    idx = np.arange(32)
    d2 = ((idx[:, None, None] - center[0]) ** 2 + (idx[None, :, None] - center[1]) ** 2
          + (idx[None, None, :] - center[2]) ** 2)
    return (d2 <= radius * radius).astype(np.float32)


def synth_grids(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        if rng.random() < 0.5:
            lo = rng.integers(4, 16, size=3)
            out.append(box_grid(lo, lo + rng.integers(6, 14, size=3)))
        else:
            out.append(sphere_grid(rng.integers(10, 22, size=3), rng.integers(4, 9)))
    return np.stack(out)


@pytest.fixture(scope="module")
def trained_ae():
    cfg = models.ModelTrainConfig(steps=40, batch_size=8, learning_rate=2e-3)
    return models.train_autoencoder(synth_grids(40, 1), seed=5, config=cfg)


class TestEncode:
    def test_zero_grid_zero_feature(self):
        params = models.EncoderParams.init(np.random.default_rng(0))
        feat = models.encode(np.zeros((32, 32, 32)), params)
        assert feat.shape == (128,)
        assert np.abs(feat).max() == 0.0

    def test_identical_grids_identical_features(self):
        params = models.EncoderParams.init(np.random.default_rng(1))
        grid = synth_grids(1, 3)[0]
        assert np.array_equal(models.encode(grid, params),
                              models.encode(grid.copy(), params))

    def test_wrong_resolution_rejected(self):
        params = models.EncoderParams.init(np.random.default_rng(0))
        with pytest.raises(ShapeError):
            models.encode(np.zeros((16, 16, 16)), params)
        with pytest.raises(ShapeError):
            models.encode_batch(np.zeros((2, 16, 16, 16)), params)

    def test_batch_matches_single(self):
        params = models.EncoderParams.init(np.random.default_rng(2))
        grids = synth_grids(3, 4)
        batch = models.encode_batch(grids, params)
        for row, grid in zip(batch, grids):
            assert np.allclose(row, models.encode(grid, params), atol=1e-5)

    def test_shape_separation_beats_jitter(self, trained_ae):
        # distinct shapes sit farther apart than 1-cell jitters of one shape
        shifts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
        boxes = np.stack([box_grid((8 + a, 8 + b, 8 + c), (20 + a, 20 + b, 20 + c))
                          for a, b, c in shifts])
        spheres = np.stack([sphere_grid((16 + a, 16 + b, 16 + c), 7)
                            for a, b, c in shifts])
        fb = models.encode_batch(boxes, trained_ae.encoder)
        fs = models.encode_batch(spheres, trained_ae.encoder)
        intra = max(max(np.linalg.norm(fb[0] - f) for f in fb[1:]),
                    max(np.linalg.norm(fs[0] - f) for f in fs[1:]))
        inter = np.linalg.norm(fb[0] - fs[0])
        assert inter > intra


class TestParamsConstruction:
    def test_rejects_wrong_shape(self):
        params = models.EncoderParams.init(np.random.default_rng(0))
        bad = params.tensors()
        bad["enc.fc.w"] = Tensor(np.zeros((10, 10)), requires_grad=True)
        with pytest.raises(ShapeError, match="enc.fc.w"):
            models.EncoderParams.from_tensors(bad)

    def test_rejects_non_tensor(self):
        with pytest.raises(TypeError):
            models.EncoderParams(*([np.zeros((32, 1, 5, 5, 5))] * 6))

    def test_missing_checkpoint_tensor(self):
        params = models.EncoderParams.init(np.random.default_rng(0))
        partial = params.tensors()
        del partial["enc.conv2.b"]
        with pytest.raises(KeyError, match="enc.conv2.b"):
            models.EncoderParams.from_tensors(partial)

    def test_checkpoint_round_trip(self, tmp_path):
        params = models.CompletionParams.init(np.random.default_rng(3))
        path = tmp_path / "model.ckpt"
        models.save_params(path, params)
        names = list(load_checkpoint(path))
        assert names == (list(models.ENCODER_SHAPES) + list(models.DECODER_SHAPES))
        loaded = models.load_completion(path)
        for a, b in zip(params.tensors().values(), loaded.tensors().values()):
            assert np.array_equal(a.data, b.data)
        encoder = models.load_encoder(path)
        assert np.array_equal(encoder.fc_w.data, params.encoder.fc_w.data)


class TestCompleteShape:
    def test_output_contains_input(self):
        params = models.CompletionParams.init(np.random.default_rng(4))
        partial = synth_grids(1, 5)[0] > 0.5
        out = models.complete_shape(partial, params)
        assert (partial <= out).all()

    def test_empty_input_empty_output_at_init(self):
        # zero biases keep every logit at 0, below the 0.5 threshold
        params = models.CompletionParams.init(np.random.default_rng(4))
        assert not models.complete_shape(np.zeros((32, 32, 32)), params).any()

    def test_voxel_grid_metadata_preserved(self):
        params = models.CompletionParams.init(np.random.default_rng(4))
        grid = VoxelGrid(synth_grids(1, 6)[0] > 0.5, 0.2, np.array([0.1, 0.2, 0.3]))
        out = models.complete_shape(grid, params)
        assert isinstance(out, VoxelGrid)
        assert out.extent == grid.extent
        assert np.array_equal(out.origin, grid.origin)

    def test_wrong_resolution_rejected(self):
        params = models.CompletionParams.init(np.random.default_rng(4))
        with pytest.raises(ShapeError):
            models.complete_shape(np.zeros((8, 8, 8)), params)


class TestTraining:
    def test_empty_dataset_raises(self):
        with pytest.raises(ValueError, match="empty"):
            models.train_autoencoder([], seed=0)
        with pytest.raises(ValueError, match="empty"):
            models.train_completion([], seed=0)

    def test_mismatched_pairs_raise(self):
        partial, complete = synth_grids(4, 0), synth_grids(3, 1)
        with pytest.raises(ShapeError, match="match"):
            models.train_completion((partial, complete), seed=0)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            models.ModelTrainConfig(steps=0)

    def test_deterministic_across_runs(self):
        grids = synth_grids(6, 2)
        cfg = models.ModelTrainConfig(steps=2, batch_size=4)
        a = models.train_autoencoder(grids, seed=9, config=cfg)
        b = models.train_autoencoder(grids, seed=9, config=cfg)
        assert np.array_equal(a.curve, b.curve)
        for ta, tb in zip(a.autoencoder.tensors().values(),
                          b.autoencoder.tensors().values()):
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_curve_decreases_smoothed(self, trained_ae):
        assert len(trained_ae.curve) == 40
        smoothed = np.convolve(trained_ae.curve, np.ones(10) / 10, mode="valid")
        assert smoothed[-1] < smoothed[0]

    def test_reconstruction_held_out(self, trained_ae):
        held = synth_grids(6, 99)
        probs = models.completion_probabilities(held, trained_ae.autoencoder)
        ious = [models.voxel_iou(p > 0.5, g > 0.5) for p, g in zip(probs, held)]
        assert min(ious) > 0.4
        assert float(np.mean(ious)) > 0.6

    def test_identity_pairs_reach_high_iou(self):
        grids = synth_grids(8, 0)
        cfg = models.ModelTrainConfig(steps=60, batch_size=4, learning_rate=3e-3)
        res = models.train_completion((grids, grids), seed=3, config=cfg)
        ious = [models.voxel_iou(models.complete_shape(g, res.params), g > 0.5)
                for g in grids]
        assert min(ious) > 0.95

    def test_completion_beats_untrained_baseline(self):
        full = synth_grids(20, 7)
        partial = full.copy()
        partial[:, :, :, :16] = 0.0    # hide one half of every grid
        cfg = models.ModelTrainConfig(steps=60, batch_size=4, learning_rate=3e-3)
        res = models.train_completion((partial[:16], full[:16]), seed=11, config=cfg)

        def bce(p, t):
            p = np.clip(p, 1e-7, 1 - 1e-7)
            return float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).mean())

        untrained = models.CompletionParams.init(np.random.default_rng(11))
        before = bce(models.completion_probabilities(partial[16:], untrained), full[16:])
        after = bce(models.completion_probabilities(partial[16:], res.params), full[16:])
        assert after < 0.7 * before


class TestGradients:
    def test_full_network_gradients(self):
        # smooth random occupancies avoid max-pool ties at binary values
        rng = np.random.default_rng(15)
        grid = rng.random((1, 1, 32, 32, 32))
        target = (rng.random((1, 1, 32, 32, 32)) < 0.4).astype(float)

        def completion_loss(*tensors):
            params = models.CompletionParams.from_tensors(
                dict(zip(list(models.ENCODER_SHAPES) + list(models.DECODER_SHAPES),
                         tensors)))
            x = Tensor(grid.astype(tensors[0].dtype), requires_grad=False)
            code, i1, i2 = models._encode_features(x, params.encoder)
            logits = models._decode_logits(code, i1, i2, params)
            from graspgraph.nn import bce_loss, sigmoid
            return bce_loss(sigmoid(logits), target)

        init = models.CompletionParams.init(np.random.default_rng(8))
        inputs = {n: t.data for n, t in init.tensors().items()}
        report = grad_check(completion_loss, inputs, max_checks=2, seed=0)
        assert report.n_checked >= 20
        assert report.max_rel_err < 1e-4
