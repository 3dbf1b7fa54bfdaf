from __future__ import annotations

import numpy as np
import pytest

from oracles import train_perceptron
from modelcrafter.annotator import Decision
from modelcrafter.errors import (
    ChecksumMismatchError,
    DimensionMismatchError,
    PreconditionError,
    SingleClassDatasetError,
    VersionMismatchError,
)
from modelcrafter.gateway import EmbeddingVector
from modelcrafter.trainer import (
    DistilledModel,
    HIDDEN_SIZES,
    LabeledExample,
    LabelSource,
    TrainConfig,
    gradient_check,
    init_model,
    load_model,
    predict,
    predict_batch,
    save_model,
    train,
)


def example(values, label: Decision, image_id: str = "x") -> LabeledExample:
    return LabeledExample(
        image_id=image_id,
        embedding=EmbeddingVector.from_values(values),
        label=label,
        source=LabelSource.USER,
    )


def separable_dataset(dim: int = 64, n_per_class: int = 500, seed: int = 0):
    """Two class cones around orthogonal unit directions; margin between the
    class mean directions is sqrt(2), comfortably above the 0.5 floor."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mu_pos = np.zeros(dim)
    mu_pos[0] = 1.0
    mu_neg = np.zeros(dim)
    mu_neg[1] = 1.0
    assert np.linalg.norm(mu_pos - mu_neg) >= 0.5
    examples = []
    for i in range(n_per_class * 2):
        mu = mu_pos if i < n_per_class else mu_neg
        noise = rng.standard_normal(dim)
        noise = noise / np.linalg.norm(noise) * rng.uniform(0.0, 0.45)
        label = Decision.POSITIVE if i < n_per_class else Decision.NEGATIVE
        examples.append(example(mu + noise, label, image_id=f"p{i}"))
    return examples


def accuracy(model: DistilledModel, examples) -> float:
    probs = predict_batch(model, [e.embedding for e in examples])
    predictions = probs >= 0.5
    truth = np.array([e.label is Decision.POSITIVE for e in examples])
    return float(np.mean(predictions == truth))


class TestConfigDefaults:
    def test_paper_defaults(self):
        config = TrainConfig()
        assert config.learning_rate == pytest.approx(3e-4)
        assert config.batch_size == 512
        assert config.beta1 == 0.9
        assert config.beta2 == 0.999
        assert config.epsilon == 1e-8
        assert config.weight_decay == 0.01

    def test_invalid_rates_rejected(self):
        with pytest.raises(PreconditionError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(PreconditionError):
            TrainConfig(batch_size=0)


class TestPredict:
    def test_all_zero_weights_give_exactly_half(self):
        dims = [3, *HIDDEN_SIZES, 1]
        model = DistilledModel(
            input_dim=3,
            weights=[np.zeros((a, b)) for a, b in zip(dims, dims[1:])],
            biases=[np.zeros(b) for b in dims[1:]],
        )
        assert predict(model, EmbeddingVector.from_values([1, 0, 0])) == 0.5

    def test_hand_built_passthrough_net(self):
        # One live unit per layer wired so the output logit equals x[0]:
        # sigmoid(1) for x = (1, 0), computed by hand.
        dims = [2, *HIDDEN_SIZES, 1]
        weights = [np.zeros((a, b)) for a, b in zip(dims, dims[1:])]
        biases = [np.zeros(b) for b in dims[1:]]
        for w in weights:
            w[0, 0] = 1.0
        model = DistilledModel(input_dim=2, weights=weights, biases=biases)
        prob = predict(model, EmbeddingVector(values=(1.0, 0.0), dim=2))
        assert prob == pytest.approx(0.7310585786300049, abs=1e-6)

    def test_batch_matches_single(self):
        model = init_model(4, seed=3)
        vec = EmbeddingVector.from_values([0.5, -0.5, 0.5, -0.5])
        assert predict_batch(model, [vec])[0] == predict(model, vec)

    def test_probabilities_strictly_inside_unit_interval(self):
        model = init_model(2, seed=1)
        # Saturate the logit through enormous final-layer weights.
        model.weights[-1][:] = 1e9
        model.biases[-1][:] = 1e9
        vec = EmbeddingVector.from_values([1.0, 1.0])
        prob = predict(model, vec)
        assert 0.0 < prob < 1.0
        model.biases[-1][:] = -1e9
        model.weights[-1][:] = -1e9
        prob = predict(model, vec)
        assert 0.0 < prob < 1.0

    def test_dimension_mismatch(self):
        model = init_model(4, seed=0)
        with pytest.raises(DimensionMismatchError):
            predict(model, EmbeddingVector.from_values([1, 0]))


class TestGradientCheck:
    def test_small_net_matches_finite_differences(self):
        model = init_model(4, seed=11)
        ex = example([0.5, -0.3, 0.8, 0.1], Decision.POSITIVE)
        assert gradient_check(model, ex, 1e-4) < 1e-4

    def test_step_bounds(self):
        model = init_model(4, seed=0)
        ex = example([1, 0, 0, 0], Decision.POSITIVE)
        with pytest.raises(PreconditionError):
            gradient_check(model, ex, 0.0)
        with pytest.raises(PreconditionError):
            gradient_check(model, ex, 0.5)

    def test_zero_gradient_parameters_excluded(self):
        # A dead input (x = e3, first-layer row 3 never fires forward) still
        # yields a finite, small error because zero-analytic entries are skipped.
        model = init_model(4, seed=5)
        ex = example([0.0, 0.0, 0.0, 1.0], Decision.NEGATIVE)
        assert gradient_check(model, ex, 1e-4) < 1e-4


class TestTrain:
    def test_separable_dataset_reaches_high_accuracy(self):
        examples = separable_dataset(dim=16, n_per_class=100, seed=4)
        x = np.vstack([e.embedding.as_array() for e in examples])
        y = np.array([1.0 if e.label is Decision.POSITIVE else 0.0 for e in examples])
        assert train_perceptron(x, y) is not None, "oracle says not separable"
        model, metrics = train(examples, TrainConfig(seed=4))
        assert accuracy(model, examples) >= 0.99
        assert metrics.rows[0][0] == 0

    def test_single_class_rejected(self):
        examples = [example([1, 0], Decision.POSITIVE, f"e{i}") for i in range(5)]
        with pytest.raises(SingleClassDatasetError):
            train(examples, TrainConfig())

    def test_mixed_dims_rejected(self):
        examples = [
            example([1, 0], Decision.POSITIVE, "a"),
            example([1, 0, 0], Decision.NEGATIVE, "b"),
        ]
        with pytest.raises(DimensionMismatchError):
            train(examples, TrainConfig())

    def test_deterministic_given_seed(self):
        examples = separable_dataset(dim=8, n_per_class=30, seed=2)
        one, _ = train(examples, TrainConfig(seed=9, max_epochs=5))
        two, _ = train(examples, TrainConfig(seed=9, max_epochs=5))
        for w1, w2 in zip(one.parameters(), two.parameters()):
            assert np.array_equal(w1, w2)

    def test_loss_decreases_after_first_epoch(self):
        examples = separable_dataset(dim=8, n_per_class=40, seed=3)
        _, metrics = train(examples, TrainConfig(seed=3, max_epochs=1, early_stop_patience=None))
        initial = metrics.rows[0][1]
        after_one = metrics.rows[1][1]
        assert after_one < initial

    def test_provenance_recorded(self):
        examples = separable_dataset(dim=8, n_per_class=30, seed=1)
        config = TrainConfig(seed=7, max_epochs=3)
        model, _ = train(examples, config)
        assert model.train_provenance["seed"] == 7
        assert model.train_provenance["epochs"] == 3
        assert model.train_provenance["config_hash"] == config.canonical_hash()
        assert model.train_provenance["teacher_source"] == "user"

    def test_batch_size_clipped_to_dataset(self):
        examples = separable_dataset(dim=8, n_per_class=10, seed=6)
        model, _ = train(examples, TrainConfig(seed=6, max_epochs=2))  # 512 > 20
        assert model.input_dim == 8

    def test_metrics_table_format(self):
        examples = separable_dataset(dim=8, n_per_class=30, seed=8)
        _, metrics = train(examples, TrainConfig(seed=8, max_epochs=2, early_stop_patience=None))
        table = metrics.to_table()
        assert table.startswith("epoch\tloss\tval_loss\n")
        assert len(table.strip().splitlines()) == 4  # header + epochs 0..2

    def test_diverging_run_aborts_with_diagnostics(self):
        from modelcrafter.errors import NonFiniteLossError

        examples = separable_dataset(dim=8, n_per_class=10, seed=9)
        config = TrainConfig(seed=9, learning_rate=1e200, max_epochs=5, early_stop_patience=None)
        with np.errstate(all="ignore"), pytest.raises(NonFiniteLossError) as err:
            train(examples, config)
        assert err.value.details["epoch"] >= 1


class TestSaveLoad:
    def test_roundtrip_predictions_bit_exact(self, tmp_path):
        examples = separable_dataset(dim=8, n_per_class=30, seed=5)
        model, _ = train(examples, TrainConfig(seed=5, max_epochs=3))
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(100):
            vec = EmbeddingVector.from_values(rng.standard_normal(8))
            assert predict(model, vec) == predict(loaded, vec)

    def test_double_roundtrip_is_byte_identical(self, tmp_path):
        model = init_model(4, seed=2)
        first = tmp_path / "a.bin"
        second = tmp_path / "b.bin"
        save_model(model, first)
        save_model(load_model(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_truncated_file_fails_checksum(self, tmp_path):
        model = init_model(4, seed=2)
        path = tmp_path / "model.bin"
        save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ChecksumMismatchError):
            load_model(path)

    def test_future_version_rejected(self, tmp_path):
        model = init_model(4, seed=2)
        path = tmp_path / "model.bin"
        save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99  # bump the little-endian version field
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatchError):
            load_model(path)

    def test_not_a_model_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"x" * 100)
        with pytest.raises(VersionMismatchError):
            load_model(path)


class TestModelInvariants:
    def test_hidden_layout_is_fixed(self):
        with pytest.raises(PreconditionError):
            DistilledModel(
                input_dim=4,
                weights=[np.zeros((4, 2)), np.zeros((2, 1))],
                biases=[np.zeros(2), np.zeros(1)],
                hidden_sizes=(2,),
            )

    def test_non_finite_parameters_rejected(self):
        dims = [2, *HIDDEN_SIZES, 1]
        weights = [np.zeros((a, b)) for a, b in zip(dims, dims[1:])]
        weights[0][0, 0] = np.nan
        with pytest.raises(PreconditionError):
            DistilledModel(
                input_dim=2, weights=weights, biases=[np.zeros(b) for b in dims[1:]]
            )
