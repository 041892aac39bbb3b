import numpy as np
import pytest

from gridseek.errors import GenerationConfigError
from gridseek.synth import SynthConfig, generate, motif_direction


def chebyshev_connected(cells, cols):
    """True when the cells form one 8-connected component."""
    cells = set(cells)
    if not cells:
        return True
    coords = {c: divmod(c, cols) for c in cells}
    frontier = [next(iter(cells))]
    seen = {frontier[0]}
    while frontier:
        cur = frontier.pop()
        r0, c0 = coords[cur]
        for other in cells - seen:
            r1, c1 = coords[other]
            if max(abs(r0 - r1), abs(c0 - c1)) <= 1:
                seen.add(other)
                frontier.append(other)
    return seen == cells


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(grid_shape=(5, 5), feature_dim=6, seed=3)
        a = generate(cfg, 4)
        b = generate(cfg, 4)
        for ta, tb in zip(a.tasks, b.tasks):
            np.testing.assert_array_equal(ta.features, tb.features)
            np.testing.assert_array_equal(ta.labels, tb.labels)
        assert a.config_hash == b.config_hash

    def test_different_seed_differs(self):
        a = generate(SynthConfig(seed=1), 2)
        b = generate(SynthConfig(seed=2), 2)
        assert not np.array_equal(a.tasks[0].features, b.tasks[0].features)


class TestClusterGeometry:
    def test_tight_cluster_is_connected(self):
        # 5 positives from one near-degenerate cluster on a 6x6 grid
        for seed in range(100):
            cfg = SynthConfig(grid_shape=(6, 6), feature_dim=4, n_clusters=1,
                              cluster_spread=1e-6, target_rate=5 / 36,
                              seed=seed)
            task = generate(cfg, 1).tasks[0]
            pos = np.flatnonzero(task.labels)
            assert len(pos) == 5
            assert chebyshev_connected(pos, 6)

    def test_target_fraction_near_rate(self):
        cfg = SynthConfig(grid_shape=(6, 6), feature_dim=4, n_clusters=2,
                          target_rate=0.25, seed=9)
        ds = generate(cfg, 50)
        fractions = [t.n_targets / t.n_cells for t in ds.tasks]
        assert abs(np.mean(fractions) - 0.25) < 0.125

    def test_impossible_config_rejected(self):
        with pytest.raises(GenerationConfigError):
            generate(SynthConfig(grid_shape=(2, 2), target_rate=0.05,
                                 n_clusters=1), 1)


class TestFeatureSignal:
    def test_zero_signal_means_no_label_information(self):
        cfg = SynthConfig(grid_shape=(6, 6), feature_dim=8, signal_strength=0.0,
                          target_rate=0.25, confuser_rate=0.0, seed=5)
        ds = generate(cfg, 200)
        pos = np.concatenate([t.features[t.labels == 1] for t in ds.tasks])
        neg = np.concatenate([t.features[t.labels == 0] for t in ds.tasks])
        gap = np.abs(pos.mean(axis=0) - neg.mean(axis=0))
        assert np.all(gap < 0.15)

    def test_signal_separates_means(self):
        cfg = SynthConfig(grid_shape=(6, 6), feature_dim=8, signal_strength=4.0,
                          noise_std=1.0, target_rate=0.25, seed=5)
        ds = generate(cfg, 50)
        pos = np.concatenate([t.features[t.labels == 1] for t in ds.tasks])
        neg = np.concatenate([t.features[t.labels == 0] for t in ds.tasks])
        gap = np.linalg.norm(pos.mean(axis=0) - neg.mean(axis=0))
        assert abs(gap - 4.0) < 0.3

    def test_bayes_linear_classifier_accuracy(self):
        # strong signal, no confusers: a linear rule on the signal axis
        # should exceed 95% per-cell accuracy
        cfg = SynthConfig(grid_shape=(6, 6), feature_dim=8, signal_strength=4.0,
                          noise_std=1.0, target_rate=0.3, confuser_rate=0.0,
                          seed=6)
        ds = generate(cfg, 100)
        direction = motif_direction(8, 0)
        correct = total = 0
        for t in ds.tasks:
            score = t.features @ direction
            pred = (score > 2.0).astype(int)
            correct += int((pred == t.labels).sum())
            total += t.n_cells
        assert correct / total >= 0.95

    def test_confusers_sit_near_positive_mean(self):
        cfg = SynthConfig(grid_shape=(8, 8), feature_dim=8, signal_strength=5.0,
                          target_rate=0.15, confuser_rate=0.3, seed=7)
        ds = generate(cfg, 50)
        direction = motif_direction(8, 0)
        high_score_negatives = 0
        for t in ds.tasks:
            score = t.features[t.labels == 0] @ direction
            high_score_negatives += int((score > 2.5).sum())
        # roughly confuser_rate of the negatives look like positives
        n_neg = sum(int((t.labels == 0).sum()) for t in ds.tasks)
        assert 0.15 < high_score_negatives / n_neg < 0.45


class TestMotifExtensions:
    def test_motif_mix_flips_roughly_half(self):
        cfg = SynthConfig(grid_shape=(6, 6), feature_dim=8, signal_strength=6.0,
                          target_rate=0.2, motif_mix=0.5, seed=8)
        ds = generate(cfg, 200)
        motif1 = 0
        for t in ds.tasks:
            pos_mean = t.features[t.labels == 1].mean(axis=0)
            motif1 += int(pos_mean[1] > pos_mean[0])
        assert 60 < motif1 < 140

    def test_confuser_other_motif(self):
        cfg = SynthConfig(grid_shape=(6, 6), feature_dim=8, signal_strength=6.0,
                          target_rate=0.2, confuser_rate=0.3,
                          confuser_motif="other", seed=9)
        ds = generate(cfg, 50)
        for t in ds.tasks[:10]:
            neg = t.features[t.labels == 0]
            # some negatives carry strong axis-1 signal (the other motif)
            assert (neg[:, 1] > 3.0).any()
