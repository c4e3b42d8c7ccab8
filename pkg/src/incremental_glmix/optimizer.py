import logging
from collections import deque
from collections.abc import Callable, Sized
from dataclasses import dataclass

import numpy as np

from incremental_glmix.constants import OBJECTIVE_WINDOW, StopReason
from incremental_glmix.core.sparse import SparseVector, as_dense
from incremental_glmix.errors import DataValidationError, NumericalError
from incremental_glmix.hessian import adam_bias_corrected, adam_second_moment_update
from incremental_glmix.loss import ObjectiveEvaluation
from incremental_glmix.schemas import LineSearchConfig, OptimizerConfig


logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], ObjectiveEvaluation]
BatchedObjective = Callable[[np.ndarray, np.ndarray], ObjectiveEvaluation]

# Largest factor by which an interpolated step may exceed the accepted trial step
MAX_STEP_GROWTH = 1e3
# Relative objective change below which values are treated as equal
APPROXIMATE_DECREASE_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    """Outcome of one minimizer run

    Attributes
    ----------
    w_star : np.ndarray
        Final iterate
    trajectory : tuple[tuple[np.ndarray, np.ndarray], ...]
        Last iterates and their gradients (x_k, g_k), oldest first
    final_value : float
        Objective at ``w_star``
    iterations : int
        Accepted L-BFGS iterations, or Adam steps
    converged : bool
        Whether the final gradient norm met the relative tolerance
    stop_reason : StopReason
        Test that ended the run
    gradient_norm : float
        Euclidean norm of the gradient at ``w_star``
    """

    w_star: np.ndarray
    trajectory: tuple[tuple[np.ndarray, np.ndarray], ...]
    final_value: float
    iterations: int
    converged: bool
    stop_reason: StopReason
    gradient_norm: float


def _evaluate(objective: Objective, x: np.ndarray, iteration: int) -> ObjectiveEvaluation:
    evaluation = objective(x)
    if not np.isfinite(evaluation.value) or not np.all(np.isfinite(evaluation.gradient)):
        raise NumericalError("non-finite objective value or gradient", iteration)
    return evaluation


def _two_loop(gradient: np.ndarray, pairs: deque) -> np.ndarray:
    """Inverse-Hessian approximation applied to the gradient"""
    q = gradient.copy()
    alphas = []
    for step, change, rho in reversed(pairs):
        alpha = rho * float(step @ q)
        q -= alpha * change
        alphas.append(alpha)

    if pairs:
        step, change, _ = pairs[-1]
        q *= float(step @ change) / float(change @ change)

    for (step, change, rho), alpha in zip(pairs, reversed(alphas), strict=True):
        beta = rho * float(change @ q)
        q += (alpha - beta) * step
    return q


def _interpolated_step(value: float, slope: float, step: float, trial_value: float):
    """Minimizer of the quadratic through f(0), f'(0) and f(step), None if it is concave"""
    curvature = trial_value - value - slope * step
    if curvature <= 0:
        return None
    return -slope * step * step / (2.0 * curvature)


def _secant_step(slope: float, trial_slope: float, step: float):
    """Zero of the directional derivative interpolated linearly, None without curvature"""
    if trial_slope <= slope:
        return None
    return step * slope / (slope - trial_slope)


def _sufficient_decrease(
    current: ObjectiveEvaluation,
    trial: ObjectiveEvaluation,
    step: float,
    slope: float,
    trial_slope: float,
    c1: float,
) -> bool:
    """Armijo condition, or its slope form once values no longer resolve the decrease"""
    if trial.value <= current.value + c1 * step * slope:
        return True
    tolerance = APPROXIMATE_DECREASE_EPS * max(1.0, abs(current.value))
    return trial.value <= current.value + tolerance and trial_slope <= (2.0 * c1 - 1.0) * slope


def _line_search(
    objective: Objective,
    x: np.ndarray,
    current: ObjectiveEvaluation,
    direction: np.ndarray,
    step: float,
    config: LineSearchConfig,
    iteration: int,
) -> tuple[float, ObjectiveEvaluation] | None:
    """Backtracking under the Armijo condition with quadratic interpolation

    Once a trial step is accepted, the step where the interpolated directional derivative
    vanishes is tried as well and kept when it is better; on a quadratic objective this is
    the exact line minimizer.
    """
    slope = float(current.gradient @ direction)
    for _ in range(config.max_trials):
        trial = _evaluate(objective, x + step * direction, iteration)
        trial_slope = float(trial.gradient @ direction)

        if _sufficient_decrease(current, trial, step, slope, trial_slope, config.c1):
            secant = _secant_step(slope, trial_slope, step)
            if secant is not None and abs(secant - step) > 1e-10 * step:
                secant = min(secant, MAX_STEP_GROWTH * step)
                refined = _evaluate(objective, x + secant * direction, iteration)
                refined_slope = float(refined.gradient @ direction)
                better = refined.value < trial.value or (
                    refined.value <= trial.value + APPROXIMATE_DECREASE_EPS * abs(trial.value)
                    and abs(refined_slope) < abs(trial_slope)
                )
                if better and _sufficient_decrease(
                    current, refined, secant, slope, refined_slope, config.c1
                ):
                    return secant, refined
            return step, trial

        interpolated = _interpolated_step(current.value, slope, step, trial.value)
        if interpolated is None:
            step *= config.shrink
        else:
            step = min(max(interpolated, 0.1 * step), config.shrink * step)
    return None


def lbfgs_minimize(
    objective: Objective,
    w0: SparseVector | np.ndarray,
    config: OptimizerConfig = OptimizerConfig(),
    trajectory_length: int | None = None,
) -> OptimizationResult:
    """Minimize a smooth objective with two-loop L-BFGS and Armijo backtracking

    Parameters
    ----------
    objective : Callable[[np.ndarray], ObjectiveEvaluation]
        Deterministic objective returning a value and a consistent gradient
    w0 : SparseVector | np.ndarray
        Starting point
    config : OptimizerConfig
        Iteration cap, tolerances, memory and line search settings
    trajectory_length : int | None
        Iterates kept in the result, defaults to the DFP memory size plus one

    Returns
    -------
    OptimizationResult
        The best iterate; a failed line search returns it with ``converged`` False

    Raises
    ------
    NumericalError
        If the objective or its gradient is non-finite at an evaluated point
    """
    x = as_dense(w0)
    current = _evaluate(objective, x, 0)
    tolerance = config.gradient_tolerance * max(1.0, float(np.linalg.norm(current.gradient)))

    pairs: deque = deque(maxlen=config.lbfgs_memory)
    trajectory = deque(
        [(x, current.gradient)], maxlen=trajectory_length or config.dfp_memory + 1
    )
    values = [current.value]
    stop_reason = StopReason.MAX_ITERATIONS
    iteration = 0

    while True:
        gradient_norm = float(np.linalg.norm(current.gradient))
        if gradient_norm <= tolerance:
            stop_reason = StopReason.GRADIENT
            break
        if iteration >= config.max_iterations:
            break

        direction = -_two_loop(current.gradient, pairs)
        if float(direction @ current.gradient) >= 0:
            pairs.clear()
            direction = -current.gradient
        step = 1.0 if pairs else 1.0 / max(1.0, gradient_norm)

        iteration += 1
        searched = _line_search(
            objective, x, current, direction, step, config.line_search, iteration
        )
        if searched is None:
            logger.warning(
                "Line search failed at iteration %d, keeping the best iterate", iteration
            )
            iteration -= 1
            stop_reason = StopReason.LINE_SEARCH
            break

        step, candidate = searched
        x_next = x + step * direction
        s, y = x_next - x, candidate.gradient - current.gradient
        curvature = float(s @ y)
        if curvature > 0:
            pairs.append((s, y, 1.0 / curvature))

        x, current = x_next, candidate
        trajectory.append((x, current.gradient))
        values.append(current.value)
        logger.debug(
            "L-BFGS iteration %d: value=%.12g, step=%.3g", iteration, current.value, step
        )

        if config.objective_tolerance > 0 and len(values) > OBJECTIVE_WINDOW:
            decrease = values[-1 - OBJECTIVE_WINDOW] - values[-1]
            if decrease <= config.objective_tolerance * max(1.0, abs(values[-1])):
                stop_reason = StopReason.OBJECTIVE
                break

    gradient_norm = float(np.linalg.norm(current.gradient))
    return OptimizationResult(
        w_star=x,
        trajectory=tuple(trajectory),
        final_value=current.value,
        iterations=iteration,
        converged=gradient_norm <= tolerance,
        stop_reason=stop_reason,
        gradient_norm=gradient_norm,
    )


def adam_minimize(
    objective_batched: BatchedObjective,
    w0: SparseVector | np.ndarray,
    data: Sized,
    config: OptimizerConfig = OptimizerConfig(),
    trajectory_length: int | None = None,
) -> tuple[OptimizationResult, np.ndarray]:
    """Minimize a per-example average objective with mini-batch Adam

    Parameters
    ----------
    objective_batched : Callable[[np.ndarray, np.ndarray], ObjectiveEvaluation]
        Objective estimated on the examples at the given positions
    w0 : SparseVector | np.ndarray
        Starting point
    data : Sized
        The examples, only their number is used
    config : OptimizerConfig
        Its ``adam`` settings drive the run
    trajectory_length : int | None
        Iterates kept in the result, defaults to the DFP memory size plus one

    Returns
    -------
    tuple[OptimizationResult, np.ndarray]
        The run and the final bias-corrected second moment v_hat

    Raises
    ------
    DataValidationError
        If the batch size exceeds the number of examples
    NumericalError
        If an objective, gradient or update becomes non-finite
    """
    adam = config.adam
    n_examples = len(data)
    if not 1 <= adam.batch_size <= n_examples:
        raise DataValidationError(
            f"batch size {adam.batch_size} for {n_examples} examples"
        )

    everything = np.arange(n_examples)
    w = as_dense(w0)
    initial = _evaluate(lambda x: objective_batched(x, everything), w, 0)
    tolerance = config.gradient_tolerance * max(1.0, float(np.linalg.norm(initial.gradient)))

    rng = np.random.default_rng(adam.shuffle_seed)
    m, v = np.zeros_like(w), np.zeros_like(w)
    v_hat = np.zeros_like(w)
    trajectory = deque(maxlen=trajectory_length or config.dfp_memory + 1)
    step = 0

    for epoch in range(adam.epochs):
        order = rng.permutation(n_examples)
        for start in range(0, n_examples, adam.batch_size):
            step += 1
            batch = order[start : start + adam.batch_size]
            gradient = _evaluate(lambda x, b=batch: objective_batched(x, b), w, step).gradient
            trajectory.append((w, gradient))

            m = adam.beta1 * m + (1.0 - adam.beta1) * gradient
            v = adam_second_moment_update(v, gradient, adam.beta2, step)
            m_hat = m / (1.0 - adam.beta1**step)
            v_hat = adam_bias_corrected(v, adam.beta2, step)

            w = w - adam.learning_rate * m_hat / (np.sqrt(v_hat) + adam.epsilon)
            if not np.all(np.isfinite(w)):
                raise NumericalError("non-finite Adam update", step)
        logger.debug("Adam epoch %d done after %d steps", epoch + 1, step)

    final = _evaluate(lambda x: objective_batched(x, everything), w, step)
    gradient_norm = float(np.linalg.norm(final.gradient))
    result = OptimizationResult(
        w_star=w,
        trajectory=tuple(trajectory),
        final_value=final.value,
        iterations=step,
        converged=gradient_norm <= tolerance,
        stop_reason=StopReason.EPOCHS,
        gradient_norm=gradient_norm,
    )
    return result, v_hat
