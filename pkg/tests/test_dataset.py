import numpy as np
import pytest

from mushroomnet import imaging
from mushroomnet.dataset import (AugmentConfig, ImageDataset, _batch_slices, augment, balance_by_augmentation,
                                 generate_synthetic_dataset, iterate_batches, random_augment, split_dataset,
                                 to_input, write_dataset)
from mushroomnet.errors import ConfigError, DataError, DataFormatError


@pytest.fixture(scope='module')
def synthetic():
    return generate_synthetic_dataset(3, 10, 32, seed=7)


class TestSynthetic:
    def test_counts(self):
        dataset = generate_synthetic_dataset(3, 50, 32, seed=0)
        assert len(dataset) == 150
        assert np.bincount(dataset.labels).tolist() == [50, 50, 50]
        assert dataset.class_names == ['species_00', 'species_01', 'species_02']

    def test_seeded(self, synthetic):
        again = generate_synthetic_dataset(3, 10, 32, seed=7)
        assert all(np.array_equal(a, b) for a, b in zip(synthetic.images, again.images))
        other = generate_synthetic_dataset(3, 10, 32, seed=8)
        assert not np.array_equal(synthetic.images[0], other.images[0])

    def test_image_format(self, synthetic):
        image = synthetic.load(0)
        assert image.shape == (32, 32, 3) and image.dtype == np.uint8

    def test_nearest_centroid_beats_chance(self):
        dataset = generate_synthetic_dataset(3, 20, 32, seed=1)
        split = split_dataset(dataset.labels, ratios=(0.5, 0.0, 0.5), seed=0)
        x = dataset.batch(np.arange(len(dataset)), dtype=np.float64).reshape(len(dataset), -1)
        centroids = np.stack([x[split.train][dataset.labels[split.train] == c].mean(axis=0) for c in range(3)])
        distances = ((x[split.test][:, None, :] - centroids[None]) ** 2).sum(axis=2)
        accuracy = np.mean(distances.argmin(axis=1) == dataset.labels[split.test])
        assert accuracy > 0.5

    @pytest.mark.parametrize('k,n', [(1, 5), (3, 0)])
    def test_rejects_degenerate(self, k, n):
        with pytest.raises(ConfigError):
            generate_synthetic_dataset(k, n, 32)


class TestDirectory:
    def test_written_dataset_reads_back(self, tmp_path, synthetic):
        write_dataset(synthetic, tmp_path)
        loaded = ImageDataset.from_directory(tmp_path, 32)
        assert loaded.class_names == synthetic.class_names
        np.testing.assert_array_equal(loaded.labels, synthetic.labels)
        np.testing.assert_array_equal(loaded.load(4), synthetic.load(4))
        assert loaded.reference(0).endswith('img_00000.ppm')

    def test_gray_images_get_three_channels(self, tmp_path):
        for name in ('a', 'b'):
            imaging.save_array(np.full((8, 8, 1), 100, dtype=np.uint8), tmp_path / name / 'x.pgm')
        dataset = ImageDataset.from_directory(tmp_path, 32)
        image = dataset.load(0)
        assert image.shape == (32, 32, 3)
        assert np.all(image == 100)

    def test_png_needs_opt_in(self, tmp_path):
        for name in ('a', 'b'):
            imaging.save_array(np.zeros((4, 4, 3), dtype=np.uint8), tmp_path / name / 'x.png', allow_png=True)
        with pytest.raises(DataFormatError):
            ImageDataset.from_directory(tmp_path, 32)
        assert len(ImageDataset.from_directory(tmp_path, 32, allow_png=True)) == 2

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataFormatError):
            ImageDataset.from_directory(tmp_path / 'nope', 32)

    def test_single_class(self, tmp_path):
        imaging.save_array(np.zeros((4, 4, 3), dtype=np.uint8), tmp_path / 'only' / 'x.ppm')
        with pytest.raises(DataFormatError):
            ImageDataset.from_directory(tmp_path, 32)

    def test_label_count_mismatch(self):
        with pytest.raises(DataError):
            ImageDataset(['a', 'b'], [0, 1, 1], 32, images=[np.zeros((32, 32, 3), dtype=np.uint8)])


class TestSplit:
    def test_stratified_sizes(self):
        labels = np.repeat([0, 1, 2], 10)
        split = split_dataset(labels, seed=3)
        assert split.sizes() == (24, 3, 3)
        for part in (split.val, split.test):
            assert sorted(labels[part].tolist()) == [0, 1, 2]

    def test_parts_partition_the_data(self):
        labels = np.repeat([0, 1], [13, 7])
        split = split_dataset(labels, seed=0)
        combined = np.concatenate([split.train, split.val, split.test])
        assert sorted(combined.tolist()) == list(range(20))

    def test_small_classes_keep_everything_in_train(self):
        split = split_dataset(np.repeat([0, 1], 5), seed=0)
        assert split.sizes() == (10, 0, 0)

    def test_seeded(self):
        labels = np.repeat([0, 1, 2], 20)
        a, b = split_dataset(labels, seed=4), split_dataset(labels, seed=4)
        assert np.array_equal(a.test, b.test)
        assert not np.array_equal(a.test, split_dataset(labels, seed=5).test)

    def test_pairs(self):
        labels = np.array([1, 0, 1, 0] * 5)
        split = split_dataset(labels, seed=0, stratified=False)
        assert all(labels[i] == c for i, c in split.pairs('train', labels))

    @pytest.mark.parametrize('ratios', [(0.5, 0.5), (0.8, 0.3, 0.1), (1.2, -0.1, -0.1)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ConfigError):
            split_dataset([0, 1], ratios=ratios)


class TestAugment:
    def test_rotate_full_turn_is_identity(self, synthetic):
        image = synthetic.load(0)
        np.testing.assert_array_equal(augment(image, 'rotate', {'degrees': 360}), image)

    def test_zero_brightness_is_identity(self, synthetic):
        image = synthetic.load(1)
        np.testing.assert_array_equal(augment(image, 'brightness', {'delta': 0}), image)

    def test_quarter_turns_compose(self, synthetic):
        image = synthetic.load(2)
        twice = augment(augment(image, 'rotate', {'degrees': 90}), 'rotate', {'degrees': 90})
        np.testing.assert_array_equal(twice, augment(image, 'rotate', {'degrees': 180}))

    def test_full_crop_is_identity(self, synthetic):
        image = synthetic.load(3)
        np.testing.assert_array_equal(augment(image, 'crop', {'box': (0, 0, 32, 32)}), image)

    def test_random_parameters_follow_the_seed(self, synthetic):
        image = synthetic.load(0)
        for op in ('rotate', 'crop', 'sharpen', 'contrast', 'brightness'):
            out = augment(image, op, seed=11)
            assert out.shape == image.shape and out.dtype == np.uint8
            np.testing.assert_array_equal(out, augment(image, op, seed=11))

    def test_unknown_op(self, synthetic):
        with pytest.raises(ConfigError):
            augment(synthetic.load(0), 'flip')

    def test_probability_zero_leaves_image(self, synthetic):
        image = synthetic.load(0)
        np.testing.assert_array_equal(random_augment(image, AugmentConfig(probability=0.0), seed=1), image)

    def test_balance_tops_up_minorities(self):
        labels = np.array([0] * 6 + [1] * 2 + [2] * 4)
        plan = balance_by_augmentation(labels, np.arange(12), seed=0)
        assert plan[:12] == [(i, None) for i in range(12)]
        counts = np.bincount([labels[i] for i, _ in plan])
        assert counts.tolist() == [6, 6, 6]
        assert all(seed is not None for _, seed in plan[12:])


class TestBatches:
    def test_trailing_single_sample_is_merged(self):
        assert _batch_slices(13, 6) == [(0, 6), (6, 13)]
        assert _batch_slices(12, 6) == [(0, 6), (6, 12)]
        assert _batch_slices(1, 6) == [(0, 1)]

    def test_every_sample_once(self, synthetic):
        plan = [(i, None) for i in range(len(synthetic))]
        seen = []
        for x, y in iterate_batches(synthetic, plan, 7, seed=0, epoch=0, dtype=np.float64):
            assert x.shape[1:] == (3, 32, 32)
            assert x.min() >= 0.0 and x.max() <= 1.0
            seen.extend(y.tolist())
        assert sorted(seen) == sorted(synthetic.labels.tolist())

    def test_order_depends_on_epoch(self, synthetic):
        plan = [(i, None) for i in range(len(synthetic))]
        first = [y for _, y in iterate_batches(synthetic, plan, 30, seed=0, epoch=0)][0]
        again = [y for _, y in iterate_batches(synthetic, plan, 30, seed=0, epoch=0)][0]
        later = [y for _, y in iterate_batches(synthetic, plan, 30, seed=0, epoch=1)][0]
        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, later)

    def test_workers_do_not_change_batches(self, synthetic):
        plan = [(i, None) for i in range(len(synthetic))]
        cfg = AugmentConfig(probability=1.0)
        serial = list(iterate_batches(synthetic, plan, 8, seed=2, epoch=1, augment_cfg=cfg))
        threaded = list(iterate_batches(synthetic, plan, 8, seed=2, epoch=1, augment_cfg=cfg, workers=3))
        assert len(serial) == len(threaded)
        for (xs, ys), (xt, yt) in zip(serial, threaded):
            np.testing.assert_array_equal(xs, xt)
            np.testing.assert_array_equal(ys, yt)

    def test_workers_read_a_bounded_distance_ahead(self, synthetic):
        loaded = []

        class CountingDataset:
            labels = synthetic.labels

            def load(self, index):
                loaded.append(index)
                return synthetic.load(index)

        plan = [(i, None) for i in range(len(synthetic))]
        batches = iterate_batches(CountingDataset(), plan, 2, seed=0, epoch=0, workers=2)
        next(batches)
        assert len(loaded) <= 3 * 2
        batches.close()
        assert len(loaded) < len(synthetic)

    def test_to_input_layout(self):
        image = np.zeros((2, 2, 3), dtype=np.uint8)
        image[..., 1] = 255
        out = to_input(image)
        assert out.shape == (3, 2, 2) and out.dtype == np.float32
        assert np.all(out[1] == 1.0) and np.all(out[0] == 0.0)
