import numpy as np
import pytest

from incremental_glmix.constants import FIXED_COMPONENT, HessianMode, TrainModeKind
from incremental_glmix.core.models import GlmixModel, GlmModel, LabeledExample, PhaseDataset
from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.errors import DataValidationError, ShapeError
from incremental_glmix.hessian import (
    AdamMomentHessian,
    DfpHessian,
    DiagonalHessian,
    FullHessian,
    PriorDistribution,
    cold_start_prior,
)
from incremental_glmix.loss import QuadraticLossSpec
from incremental_glmix.schemas import AdamConfig, BcdSchedule, OptimizerConfig, TrainerConfig
from incremental_glmix.trainer import (
    Cold,
    GlmixPriors,
    Incremental,
    Warm,
    block_coordinate_descent,
    glmix_objective,
    train_glm,
    train_random_effects,
)

from tests.conftest import random_phase


TIGHT = OptimizerConfig(max_iterations=500, gradient_tolerance=1e-12, objective_tolerance=0.0)


def full_config(**kwargs):
    return TrainerConfig(hessian_mode=HessianMode.FULL, optimizer=TIGHT, **kwargs)


def batch_solution(specs, l2_base):
    matrix = sum(s.dense_matrix() for s in specs) + l2_base * np.eye(specs[0].dim)
    return np.linalg.solve(matrix, sum(s.linear for s in specs))


def test_cold_start_on_a_quadratic(quadratic_spec):
    spec = quadratic_spec(dim=4)
    config = full_config(l2_base=0.5)

    trained = train_glm(spec, Cold(), config)

    expected = batch_solution([spec], 0.5)
    np.testing.assert_allclose(trained.model.dense_weights(), expected, atol=1e-9)
    np.testing.assert_allclose(
        trained.next_prior.precision.matrix, spec.dense_matrix() + 0.5 * np.eye(4), atol=1e-12
    )


@pytest.mark.parametrize("n_phases", [2, 4])
def test_full_incremental_updates_recover_the_batch_solution(quadratic_spec, n_phases):
    specs = [quadratic_spec(dim=5) for _ in range(n_phases)]
    config = full_config(l2_base=1.0)

    trained = train_glm(specs[0], Cold(), config)
    for spec in specs[1:]:
        trained = train_glm(spec, Incremental(trained.next_prior, 1.0, HessianMode.FULL), config)
    batch = train_glm(specs[-1], Cold(window=tuple(specs)), config)

    expected = batch_solution(specs, 1.0)
    np.testing.assert_allclose(batch.model.dense_weights(), expected, atol=1e-8)
    np.testing.assert_allclose(trained.model.dense_weights(), expected, atol=1e-8)


def test_full_incremental_precision_is_the_summed_curvature(quadratic_spec):
    first, second = quadratic_spec(dim=3), quadratic_spec(dim=3)
    config = full_config(l2_base=2.0)

    cold = train_glm(first, Cold(), config)
    incre = train_glm(second, Incremental(cold.next_prior, 1.0, HessianMode.FULL), config)

    expected = first.dense_matrix() + second.dense_matrix() + 2.0 * np.eye(3)
    np.testing.assert_allclose(incre.next_prior.precision.matrix, expected, atol=1e-12)


def test_warm_equals_incremental_without_memory(rng):
    data = random_phase(rng, n_examples=80, dim=5, nnz=3)
    previous = rng.normal(size=5)
    config = TrainerConfig(l2_base=0.0)
    prior = PriorDistribution(previous, DiagonalHessian(np.ones(5)))

    warm = train_glm(data, Warm(GlmModel.from_dense(previous, 0.0)), config)
    incre = train_glm(data, Incremental(prior, 0.0, HessianMode.DIAG), config)

    np.testing.assert_allclose(
        warm.model.dense_weights(), incre.model.dense_weights(), atol=1e-6
    )


def test_a_stronger_prior_keeps_the_weights_closer(rng):
    data = random_phase(rng, n_examples=100, dim=6, nnz=3)
    previous = rng.normal(size=6)
    prior = PriorDistribution(previous, DiagonalHessian(np.full(6, 5.0)))
    config = TrainerConfig(optimizer=TIGHT)

    distances = []
    for lambda_f in (0.05, 0.2, 0.5, 1.0):
        trained = train_glm(data, Incremental(prior, lambda_f, HessianMode.DIAG), config)
        distances.append(np.linalg.norm(trained.model.dense_weights() - previous))

    assert all(b <= a + 1e-9 for a, b in zip(distances, distances[1:]))
    assert distances[-1] < distances[0]


def test_the_forgetting_factor_pulls_strictly_towards_the_prior(rng):
    data = random_phase(rng, n_examples=100, dim=6, nnz=3)
    previous = rng.normal(size=6)
    prior = PriorDistribution(previous, DiagonalHessian(np.full(6, 5.0)))
    config = TrainerConfig(lambda_f_max=1000.0, optimizer=TIGHT)

    distances = [
        np.linalg.norm(
            train_glm(data, Incremental(prior, lambda_f, HessianMode.DIAG), config)
            .model.dense_weights()
            - previous
        )
        for lambda_f in (1.0, 10.0, 1000.0)
    ]

    assert distances[0] > distances[1] > distances[2]


def test_a_feature_without_data_stays_at_the_prior_mean(rng):
    narrow = random_phase(rng, n_examples=80, dim=4, nnz=2)
    data = PhaseDataset(
        phase_index=0,
        examples=tuple(
            LabeledExample(
                SparseVector(e.features.indices, e.features.values, 5), e.label, e.entity_ids
            )
            for e in narrow.examples
        ),
        feature_dim=5,
    )
    mean = rng.normal(size=5)
    prior = PriorDistribution(mean, DiagonalHessian(np.full(5, 2.0)))

    trained = train_glm(data, Incremental(prior, 1.0, HessianMode.DIAG), TrainerConfig())

    weights = trained.model.dense_weights()
    assert weights[4] == mean[4]
    assert not np.allclose(weights[:4], mean[:4])


def test_separable_data_converges_under_the_base_prior():
    examples = tuple(
        LabeledExample(SparseVector(np.array([0, 1]), np.array([1.0, s]), 2), int(s > 0))
        for s in (-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0)
    )
    data = PhaseDataset(phase_index=0, examples=examples, feature_dim=2)
    plain = OptimizerConfig(objective_tolerance=0.0)
    longer = OptimizerConfig(
        max_iterations=5000, gradient_tolerance=1e-12, objective_tolerance=0.0
    )

    trained = train_glm(data, Cold(), TrainerConfig(l2_base=1.0, optimizer=plain))
    reference = train_glm(data, Cold(), TrainerConfig(l2_base=1.0, optimizer=longer))

    assert trained.result.converged
    assert np.all(np.isfinite(trained.model.dense_weights()))
    np.testing.assert_allclose(
        trained.model.dense_weights(), reference.model.dense_weights(), atol=1e-5
    )


def test_incremental_modes_hand_back_their_precision(rng):
    data = random_phase(rng, n_examples=60, dim=4, nnz=2)
    prior = cold_start_prior(4, 1.0)
    adam = OptimizerConfig(adam=AdamConfig(epochs=2, batch_size=6))

    dfp = train_glm(data, Incremental(prior, 1.0, HessianMode.DFP), TrainerConfig())
    moment = train_glm(
        data, Incremental(prior, 1.0, HessianMode.ADAM), TrainerConfig(optimizer=adam)
    )

    assert isinstance(dfp.next_prior.precision, DfpHessian)
    assert isinstance(moment.next_prior.precision, AdamMomentHessian)
    assert moment.next_prior.precision.scale == len(data)


def test_dfp_falls_back_to_the_base_diagonal_without_steps():
    spec = QuadraticLossSpec(DiagonalHessian(np.ones(3)), np.zeros(3))
    config = TrainerConfig(l2_base=0.25, hessian_mode=HessianMode.DFP)

    trained = train_glm(spec, Cold(), config)

    assert trained.next_prior.precision == DiagonalHessian(np.full(3, 0.25))
    assert any("DFP fallback" in w for w in trained.warnings)


def test_incremental_without_examples_carries_the_prior_forward():
    prior = PriorDistribution(np.array([1.0, -1.0]), DiagonalHessian(np.array([2.0, 4.0])))

    trained = train_glm(
        PhaseDataset.empty(3, 2), Incremental(prior, 0.5, HessianMode.DIAG), TrainerConfig()
    )

    np.testing.assert_array_equal(trained.model.dense_weights(), [1.0, -1.0])
    assert trained.next_prior.precision == DiagonalHessian(np.array([1.0, 2.0]))
    assert trained.warnings


def test_train_glm_checks_its_inputs(phase):
    with pytest.raises(DataValidationError):
        train_glm(PhaseDataset.empty(0, 6), Cold())
    with pytest.raises(ShapeError):
        train_glm(phase, Warm(GlmModel.zeros(7)))
    with pytest.raises(DataValidationError):
        train_glm(phase, Incremental(cold_start_prior(6, 1.0), 1.5, HessianMode.DIAG))
    with pytest.raises(DataValidationError):
        Incremental(cold_start_prior(6, 1.0), -0.1, HessianMode.DIAG)


def test_random_effects_train_one_model_per_entity(make_phase):
    data = make_phase(n_examples=90, entities=("a", "b", "c"))
    config = TrainerConfig()

    result = train_random_effects(data, "member", None, {}, TrainModeKind.COLD, config)

    assert list(result.models) == ["a", "b", "c"]
    for entity_id, positions in data.partition_by_entity("member").items():
        alone = train_glm(data.subset(positions), Cold(), config)
        np.testing.assert_allclose(
            result.models[entity_id].dense_weights(), alone.model.dense_weights(), atol=1e-12
        )


def test_random_effects_on_threads_match_inline_training(make_phase):
    data = make_phase(n_examples=90, entities=("a", "b", "c", "d"))

    inline = train_random_effects(data, "member", None, {}, TrainModeKind.COLD, TrainerConfig())
    threaded = train_random_effects(
        data, "member", None, {}, TrainModeKind.COLD, TrainerConfig(n_workers=3)
    )

    for entity_id in inline.models:
        np.testing.assert_array_equal(
            inline.models[entity_id].dense_weights(), threaded.models[entity_id].dense_weights()
        )


def test_incremental_random_effects_cold_start_new_entities_and_carry_absent_ones(make_phase):
    data = make_phase(n_examples=60, entities=("a", "b"))
    old = PriorDistribution(np.full(6, 0.3), DiagonalHessian(np.full(6, 2.0)))
    config = TrainerConfig(lambda_f=0.5)

    result = train_random_effects(
        data, "member", None, {"a": old, "z": old}, TrainModeKind.INCREMENTAL, config
    )

    assert list(result.models) == ["a", "b", "z"]
    np.testing.assert_array_equal(result.models["z"].dense_weights(), old.mean)
    assert result.priors["z"].precision == DiagonalHessian(np.full(6, 1.0))
    fresh = train_glm(
        data.subset(data.partition_by_entity("member")["b"]),
        Incremental(cold_start_prior(6, 1.0), 1.0, HessianMode.DIAG),
        config,
    )
    np.testing.assert_allclose(
        result.models["b"].dense_weights(), fresh.model.dense_weights(), atol=1e-12
    )


def test_random_effects_use_the_offsets(make_phase):
    data = make_phase(n_examples=40, entities=("a",))
    offsets = np.full(len(data), 2.0)

    shifted = train_random_effects(data, "member", offsets, {}, TrainModeKind.COLD)
    expected = train_glm(data.with_offsets(offsets), Cold())

    np.testing.assert_allclose(
        shifted.models["a"].dense_weights(), expected.model.dense_weights(), atol=1e-12
    )


def test_block_coordinate_descent_decreases_the_objective(make_phase):
    data = make_phase(n_examples=150, dim=5, entities=("a", "b", "c"))
    schedule = BcdSchedule(components=(FIXED_COMPONENT, "member"), sweeps=4)
    config = TrainerConfig(optimizer=TIGHT)
    start = GlmixModel.zeros(5, ("member",))

    result = block_coordinate_descent(data, start, schedule, config)

    objectives = result.sweep_objectives
    assert len(objectives) == 4
    assert all(b <= a + 1e-8 * abs(a) for a, b in zip(objectives, objectives[1:]))
    initial = glmix_objective(start, data, schedule.components, {}, None, config)
    assert objectives[0] < initial
    assert set(result.model.random_effects["member"]) == {"a", "b", "c"}
    assert set(result.priors.random_effects["member"]) == {"a", "b", "c"}


def test_block_coordinate_descent_with_a_single_component_is_a_single_fit(phase):
    schedule = BcdSchedule(components=(FIXED_COMPONENT,), sweeps=1)

    result = block_coordinate_descent(phase, GlmixModel.zeros(6), schedule)

    alone = train_glm(phase, Cold())
    np.testing.assert_allclose(
        result.model.fixed.dense_weights(), alone.model.dense_weights(), atol=1e-12
    )


def test_incremental_bcd_keeps_the_fixed_prior_when_only_entities_train(make_phase):
    first, second = make_phase(phase_index=0), make_phase(phase_index=1)
    schedule = BcdSchedule(components=(FIXED_COMPONENT, "member"), sweeps=2)
    cold = block_coordinate_descent(first, GlmixModel.zeros(6, ("member",)), schedule)

    incre = block_coordinate_descent(
        second,
        cold.model,
        BcdSchedule(components=("member",), sweeps=1),
        TrainerConfig(),
        {"member": TrainModeKind.INCREMENTAL},
        cold.priors,
    )

    assert incre.model.fixed == cold.model.fixed
    assert incre.priors.fixed == cold.priors.fixed
    assert isinstance(incre.priors, GlmixPriors)


def test_full_precision_of_a_logistic_round(rng):
    data = random_phase(rng, n_examples=50, dim=4, nnz=2)
    trained = train_glm(data, Cold(), TrainerConfig(hessian_mode=HessianMode.FULL))

    assert isinstance(trained.next_prior.precision, FullHessian)
    assert np.min(np.linalg.eigvalsh(trained.next_prior.precision.matrix)) >= 1.0 - 1e-9
