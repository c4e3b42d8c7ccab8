import json

import numpy as np
import pytest
from pydantic import ValidationError

from incremental_glmix.evaluation.drift import (
    activity_distribution,
    entity_names,
    generate_drift_stream,
)
from incremental_glmix.schemas import DriftGenConfig


SMALL = DriftGenConfig(
    seed=7, n_entities=20, feature_dim=8, examples_per_phase=400, n_phases=4, nnz_per_example=3
)


def test_the_same_seed_gives_the_same_stream():
    first, second = generate_drift_stream(SMALL), generate_drift_stream(SMALL)

    for a, b in zip(first.phases, second.phases, strict=True):
        assert a.examples == b.examples
    other = generate_drift_stream(SMALL.model_copy(update={"seed": 8}))
    assert other.phases[0].examples != first.phases[0].examples


def test_phases_are_indexed_in_order():
    stream = generate_drift_stream(SMALL)

    assert len(stream) == 4
    assert [p.phase_index for p in stream.phases] == [0, 1, 2, 3]
    assert all(len(p) == 400 and p.feature_dim == 8 for p in stream.phases)


def test_examples_carry_a_bias_and_an_entity():
    stream = generate_drift_stream(SMALL)

    for example in stream.phases[0].examples:
        assert example.features.indices[0] == 0
        assert example.features.values[0] == 1.0
        assert example.features.nnz == 4
        assert example.entity_ids["member"] in entity_names(20)


def test_without_drift_the_weights_stay_put():
    stream = generate_drift_stream(SMALL.model_copy(update={"drift_rate": 0.0}))

    first = stream.truth[0]
    for truth in stream.truth[1:]:
        np.testing.assert_array_equal(truth.fixed_weights, first.fixed_weights)
        for name, weights in truth.entity_weights.items():
            np.testing.assert_array_equal(weights, first.entity_weights[name])


def test_entity_weights_take_random_walk_steps():
    stream = generate_drift_stream(
        SMALL.model_copy(update={"drift_rate": 0.1, "n_entities": 200})
    )

    steps = np.concatenate(
        [
            stream.truth[1].entity_weights[name] - stream.truth[0].entity_weights[name]
            for name in entity_names(200)
        ]
    )
    np.testing.assert_array_equal(stream.truth[1].fixed_weights, stream.truth[0].fixed_weights)
    assert np.std(steps) == pytest.approx(0.1, rel=0.1)


def test_positive_rate_matches_the_true_probabilities():
    stream = generate_drift_stream(SMALL.model_copy(update={"examples_per_phase": 2000}))

    labels = np.concatenate([p.labels for p in stream.phases])
    probabilities = np.concatenate([t.probabilities for t in stream.truth])
    sigma = np.sqrt(np.sum(probabilities * (1 - probabilities))) / labels.size

    assert abs(labels.mean() - probabilities.mean()) <= 3 * sigma


def test_activity_skew_favours_the_first_entities():
    uniform = activity_distribution(5, 0.0)
    skewed = activity_distribution(5, 1.0)

    np.testing.assert_allclose(uniform, np.full(5, 0.2))
    assert skewed.sum() == pytest.approx(1.0)
    assert np.all(np.diff(skewed) < 0)


def test_entity_names_are_padded():
    assert entity_names(3) == ["e0000", "e0001", "e0002"]
    assert entity_names(100000)[-1] == "e99999"


def test_truth_records_are_json_serializable():
    stream = generate_drift_stream(SMALL.model_copy(update={"n_phases": 1}))

    record = json.loads(json.dumps(stream.truth[0].as_record()))

    assert record["phase_index"] == 0
    assert len(record["probabilities"]) == 400


def test_active_features_must_fit_the_dimension():
    with pytest.raises(ValidationError):
        DriftGenConfig(feature_dim=4, nnz_per_example=4)
