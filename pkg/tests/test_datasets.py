"""Synthetic generators: determinism, geometry, corruption, serialization."""

import numpy as np
import pytest

from pal.datasets import (
    DatasetFormatError,
    augment,
    concentric_circles,
    corrupt_labels,
    gaussian_mixture,
    load_dataset,
    reveal_labels,
    save_dataset,
)
from pal.graph import build_ssl_graph, connected_components


class TestCircles:
    def test_balanced_counts(self):
        ds = concentric_circles(10, 4, 0.0, seed=0)
        np.testing.assert_array_equal(np.bincount(ds.hidden_labels), [3, 3, 2, 2])

    def test_zero_noise_exact_radii(self):
        ds = concentric_circles(40, 4, 0.0, seed=1)
        radii = np.linalg.norm(ds.x, axis=1)
        expected = (ds.hidden_labels + 1) / 4
        np.testing.assert_allclose(radii, expected, atol=1e-12)

    def test_two_dimensional(self):
        assert concentric_circles(100, 4, 0.02, seed=2).d == 2

    def test_nearest_radius_classifier_with_small_noise(self):
        # radial separability: gap 0.25 between circles, noise well below it
        ds = concentric_circles(200, 4, noise_std=0.01, seed=3)
        radii = np.linalg.norm(ds.x, axis=1)
        predicted = np.clip(np.round(radii * 4 - 1), 0, 3).astype(int)
        assert (predicted == ds.hidden_labels).mean() == 1.0

    def test_bit_reproducible(self):
        a = concentric_circles(50, 3, 0.05, seed=9)
        b = concentric_circles(50, 3, 0.05, seed=9)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.hidden_labels, b.hidden_labels)
        c = concentric_circles(50, 3, 0.05, seed=10)
        assert not np.array_equal(a.x, c.x)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            concentric_circles(10, 1, 0.0, seed=0)


class TestGaussianMixture:
    def test_zero_sigma_at_basis_vectors(self):
        ds = gaussian_mixture(12, 3, sigma=0.0, seed=0)
        np.testing.assert_allclose(ds.x, np.eye(3)[ds.hidden_labels], atol=1e-12)

    def test_dimension_equals_classes(self):
        assert gaussian_mixture(10, 5, 0.3, seed=1).d == 5

    def test_class_mean_distances(self):
        ds = gaussian_mixture(4000, 4, sigma=0.3, seed=2)
        means = np.stack([ds.x[ds.hidden_labels == c].mean(axis=0) for c in range(4)])
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(means[i] - means[j]) == pytest.approx(np.sqrt(2), abs=0.05)


class TestAugment:
    def test_shapes_and_layout(self):
        ds = concentric_circles(200, 4, 0.02, seed=4)
        out, layout = augment(ds, views=2, epochs=1, aug_std=0.01)
        assert out.n == 400
        assert layout.n0 == 200 and layout.views == 2

    def test_zero_std_exact_duplicates(self):
        ds = concentric_circles(5, 2, 0.0, seed=5)
        out, _ = augment(ds, views=3, epochs=2, aug_std=0.0)
        for sample in range(5):
            for view in range(6):
                np.testing.assert_array_equal(out.x[sample * 6 + view], ds.x[sample])

    def test_contiguous_ordering_and_labels(self):
        ds = concentric_circles(6, 2, 0.0, seed=6)
        out, layout = augment(ds, views=2, epochs=1, aug_std=0.05)
        np.testing.assert_array_equal(out.hidden_labels, np.repeat(ds.hidden_labels, 2))
        assert [layout.group_of(i) for i in range(4)] == [0, 0, 1, 1]

    def test_ssl_graph_components_equal_original_count(self):
        ds = concentric_circles(30, 3, 0.02, seed=7)
        _, layout = augment(ds, views=2, epochs=2, aug_std=0.01)
        count, _ = connected_components(build_ssl_graph(layout))
        assert count == 30


class TestCorruptLabels:
    def test_zero_fraction_unchanged(self):
        ds = concentric_circles(50, 4, 0.02, seed=8)
        assert corrupt_labels(ds, 0.0) is ds

    def test_full_fraction_every_label_differs(self):
        ds = concentric_circles(60, 4, 0.02, seed=9)
        out = corrupt_labels(ds, 1.0)
        assert (out.hidden_labels != ds.hidden_labels).all()
        assert out.hidden_labels.min() >= 0 and out.hidden_labels.max() < 4

    def test_exact_count_at_n300(self):
        ds = concentric_circles(300, 4, 0.02, seed=10)
        out = corrupt_labels(ds, 0.1)
        assert (out.hidden_labels != ds.hidden_labels).sum() == 30

    def test_deterministic(self):
        ds = concentric_circles(40, 4, 0.02, seed=11)
        a = corrupt_labels(ds, 0.25, seed=1)
        b = corrupt_labels(ds, 0.25, seed=1)
        assert np.array_equal(a.hidden_labels, b.hidden_labels)


class TestRevealLabels:
    def test_zero_count(self):
        ds = reveal_labels(concentric_circles(20, 2, 0.0, seed=12), 0)
        assert ds.revealed_mask.sum() == 0

    def test_full_count(self):
        ds = reveal_labels(concentric_circles(20, 2, 0.0, seed=13), 20)
        assert ds.revealed_mask.all()

    def test_reproducible_subset(self):
        base = concentric_circles(30, 3, 0.0, seed=14)
        a = reveal_labels(base, 15, seed=2)
        b = reveal_labels(base, 15, seed=2)
        assert np.array_equal(a.revealed_mask, b.revealed_mask)
        assert a.revealed_mask.sum() == 15

    def test_count_out_of_range(self):
        with pytest.raises(ValueError):
            reveal_labels(concentric_circles(5, 2, 0.0, seed=0), 6)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds = reveal_labels(concentric_circles(25, 3, 0.05, seed=15), 10)
        path = tmp_path / "ds.txt"
        save_dataset(ds, path)
        back = load_dataset(path)
        np.testing.assert_allclose(back.x, ds.x)
        np.testing.assert_array_equal(back.hidden_labels, ds.hidden_labels)
        np.testing.assert_array_equal(back.revealed_mask, ds.revealed_mask)
        assert back.provenance["generator"] == "circles"

    def test_rejects_bad_column_count(self, tmp_path):
        path = tmp_path / "ds.txt"
        ds = concentric_circles(3, 2, 0.0, seed=16)
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        lines[1] = "1.0,2.0"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_rejects_label_out_of_range(self, tmp_path):
        path = tmp_path / "ds.txt"
        ds = concentric_circles(3, 2, 0.0, seed=17)
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        parts = lines[1].split(",")
        parts[-2] = "9"
        lines[1] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "ds.txt"
        path.write_text('pal-dataset v7 {"generator": "circles", "d": 2, "base_seed": 0}\n')
        with pytest.raises(DatasetFormatError):
            load_dataset(path)
