import numpy as np
import pytest

from mushroomnet.embedding import (VARIANT_LABELS, VARIANTS, HeadConfig, build_targets, classify_batch,
                                   classify_by_distance, evaluate_distance_prediction, head_config, head_loss,
                                   label_embedding, reference_matrix)
from mushroomnet.errors import ConfigError, DataError, GeneticsError, ShapeError
from mushroomnet.genetics import GeneticDistanceMatrix
from mushroomnet.tensor import Tensor


@pytest.fixture
def two_species():
    return GeneticDistanceMatrix(('x', 'y'), [[0.0, 1.0], [1.0, 0.0]])


class TestTargets:
    def test_plain_rows(self, toy_matrix):
        targets = build_targets(toy_matrix)
        np.testing.assert_array_equal(targets.vectors, toy_matrix.values)
        assert targets.subset is None

    def test_minmax_ignores_diagonal(self, toy_matrix):
        targets = build_targets(toy_matrix, normalize='minmax')
        np.testing.assert_allclose(targets.vectors, [[0.0, 0.0, 1.0],
                                                     [0.0, 0.0, 0.6 / 0.7],
                                                     [1.0, 0.6 / 0.7, 0.0]])

    def test_diag_override_after_normalization(self, toy_matrix):
        targets = build_targets(toy_matrix, normalize='minmax', diag_override=-1)
        np.testing.assert_array_equal(np.diag(targets.vectors), [-1.0, -1.0, -1.0])
        assert targets.vectors[0, 2] == 1.0
        assert targets.describe()['diag_override'] == -1

    def test_reference_restores_zero_diagonal(self, toy_matrix):
        reference = reference_matrix(build_targets(toy_matrix, diag_override=-1))
        np.testing.assert_array_equal(reference.values, toy_matrix.values)

    def test_subset_then_drop(self, toy_matrix):
        targets = build_targets(toy_matrix, subset=['C', 'B', 'A'], drop=['B'])
        assert targets.names == ('C', 'A')
        assert targets.subset == ('C', 'A')
        np.testing.assert_array_equal(targets.vectors, [[0.0, 0.9], [0.9, 0.0]])

    def test_needs_two_species(self, toy_matrix):
        with pytest.raises(GeneticsError):
            build_targets(toy_matrix, drop=['A', 'B'])

    def test_minmax_needs_spread(self):
        flat = GeneticDistanceMatrix(('a', 'b', 'c'), np.ones((3, 3)) - np.eye(3))
        with pytest.raises(GeneticsError):
            build_targets(flat, normalize='minmax')

    def test_unknown_normalization(self, toy_matrix):
        with pytest.raises(ConfigError):
            build_targets(toy_matrix, normalize='zscore')


class TestHeadLoss:
    @pytest.mark.parametrize('variant,expected', [
        ('softmax', np.log(3.0)),
        ('mse_sum', (0.85 + 0.68) / 2),
        ('mse_mean', (0.85 + 0.68) / 6),
        ('mae', (1.1 + 1.0) / 6),
    ])
    def test_values(self, toy_matrix, variant, expected):
        targets = build_targets(toy_matrix)
        pred = Tensor(np.zeros((2, 3)), dtype=np.float64)
        loss = head_loss(pred, [0, 1], targets, head_config(targets, variant))
        assert loss.item() == pytest.approx(expected)

    def test_zero_at_target(self, toy_matrix):
        targets = build_targets(toy_matrix, diag_override=-1)
        pred = Tensor(targets.vectors.copy(), requires_grad=True)
        loss = head_loss(pred, [0, 1, 2], targets, head_config(targets, 'mse_sum'))
        assert loss.item() == 0.0
        loss.backward()
        np.testing.assert_array_equal(pred.grad, np.zeros((3, 3)))

    def test_width_mismatch(self, toy_matrix):
        targets = build_targets(toy_matrix)
        with pytest.raises(ShapeError):
            head_loss(Tensor(np.zeros((1, 4))), [0], targets, head_config(targets))

    def test_label_out_of_range(self, toy_matrix):
        targets = build_targets(toy_matrix)
        with pytest.raises(DataError):
            head_loss(Tensor(np.zeros((1, 3))), [3], targets, head_config(targets, 'mae'))

    def test_config_validation(self, toy_matrix):
        with pytest.raises(ConfigError):
            HeadConfig('huber', 'cosine', toy_matrix)
        with pytest.raises(ConfigError):
            HeadConfig('mae', 'manhattan', toy_matrix)
        assert set(VARIANT_LABELS) == set(VARIANTS)


class TestReadout:
    def test_cosine_recovers_diag_minus_one_targets(self, toy_matrix):
        targets = build_targets(toy_matrix, diag_override=-1)
        predicted, distances = classify_batch(targets.vectors, head_config(targets, metric='cosine'))
        np.testing.assert_array_equal(predicted, [0, 1, 2])
        assert distances.shape == (3, 3)

    def test_euclidean_distance_to_own_row_is_zero(self, toy_matrix):
        cfg = head_config(build_targets(toy_matrix), metric='euclidean')
        distances = label_embedding(toy_matrix.values, cfg)
        np.testing.assert_allclose(np.diag(distances), 0.0, atol=1e-12)
        assert distances[0, 1] == pytest.approx(np.sqrt(0.04 + 0.04 + 0.01))

    def test_ties_go_to_lowest_index(self, two_species):
        cfg = head_config(build_targets(two_species), metric='euclidean')
        label, distances = classify_by_distance(np.array([0.5, 0.5]), cfg)
        assert label == 0 and distances[0] == distances[1]

    def test_zero_prediction_under_cosine(self, toy_matrix):
        cfg = head_config(build_targets(toy_matrix))
        with pytest.raises(GeneticsError):
            label_embedding(np.zeros(3), cfg)

    def test_width_checked(self, toy_matrix):
        with pytest.raises(ShapeError):
            label_embedding(np.ones((1, 2)), head_config(build_targets(toy_matrix)))


class TestDistancePrediction:
    def test_perfect_oracle(self, toy_matrix):
        targets = build_targets(toy_matrix, normalize='minmax')
        labels = np.array([0, 0, 1, 2, 2, 2])
        result = evaluate_distance_prediction(lambda idx: targets.vectors[idx], labels, labels, targets)
        np.testing.assert_array_equal(result.absolute_error, np.zeros((3, 3)))
        assert result.mean_absolute_error == 0.0

    def test_matches_per_species_loop(self, toy_matrix, rng):
        targets = build_targets(toy_matrix)
        labels = np.array([0, 1, 1, 2, 0, 2, 2])
        outputs = rng.standard_normal((len(labels), 3))
        result = evaluate_distance_prediction(lambda idx: outputs[idx], np.arange(len(labels)), labels, targets)
        for c in range(3):
            rows = [outputs[i] for i in range(len(labels)) if labels[i] == c]
            mean = sum(rows) / len(rows)
            np.testing.assert_allclose(result.signed_error[c], mean - targets.vectors[c], atol=1e-9)
            np.testing.assert_allclose(result.absolute_error[c], np.abs(mean - targets.vectors[c]), atol=1e-9)

    def test_species_without_images(self, toy_matrix):
        targets = build_targets(toy_matrix)
        labels = np.array([0, 1])
        with pytest.raises(DataError):
            evaluate_distance_prediction(lambda idx: targets.vectors[idx], labels, labels, targets)


class TestBundledMatrix:
    def test_drop_with_diag_override(self, its_matrix):
        targets = build_targets(its_matrix, diag_override=-1, drop=['Cantharellus cibarius'])
        assert targets.vectors.shape == (17, 17)
        assert 'Cantharellus cibarius' not in targets.names
        np.testing.assert_array_equal(np.diag(targets.vectors), np.full(17, -1.0))

    def test_cosine_reads_scaled_rows_back(self, its_matrix):
        targets = build_targets(its_matrix, diag_override=-1)
        cfg = head_config(targets, metric='cosine')
        predicted, _ = classify_batch(2.5 * its_matrix.values, cfg)
        np.testing.assert_array_equal(predicted, np.arange(18))

    def test_minmax_keeps_distance_order(self, its_matrix):
        off = ~np.eye(len(its_matrix), dtype=bool)
        scaled = build_targets(its_matrix, normalize='minmax').vectors
        np.testing.assert_array_equal(np.argsort(scaled[off], kind='stable'),
                                      np.argsort(its_matrix.values[off], kind='stable'))
        assert scaled[off].min() == 0.0 and scaled[off].max() == 1.0
