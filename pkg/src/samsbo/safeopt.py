"""Safe multi-task Bayesian optimization loops.

One iteration evaluates a batch of supplementary-task inputs chosen by greedy
fantasized-variance maximization, refreshes the normalization and the
hyper-posterior over the correlation matrix, rebuilds the scaling bundle and
the safe set, and finally evaluates the main task at the safe candidate with
the lowest optimistic value.  The single-task variant skips everything
involving supplementary tasks, which reduces the loop to the safe upper
confidence bound baseline; non-safe variants use the full candidate grid
instead of the safe set.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from . import bounds, gp, hyperposterior
from .kernels import CorrelationMatrix, KernelParams, se_kernel_matrix

__all__ = [
    "ALGORITHMS",
    "Transforms",
    "CandidateGrid",
    "SafeSet",
    "TraceRecord",
    "LoopConfig",
    "OptimizationState",
    "NoSafeActionError",
    "fit_transforms",
    "make_grid",
    "safe_set",
    "acquire_main",
    "acquire_supplementary",
    "select_sigma_prime",
    "initialize_state",
    "step",
    "run_repetition",
    "run",
]

ALGORITHMS = ("samsbo", "safe-ucb", "ucb", "multi-task-ucb")
STD_FLOOR = 1e-8


class NoSafeActionError(RuntimeError):
    """Raised when the safe set is empty at acquisition time."""


def _is_multitask(algorithm: str) -> bool:
    return algorithm in ("samsbo", "multi-task-ucb")


def _is_safe(algorithm: str) -> bool:
    return algorithm in ("samsbo", "safe-ucb")


@dataclass(frozen=True)
class Transforms:
    """Affine input normalization to the unit cube and output standardization."""

    lower: np.ndarray
    upper: np.ndarray
    y_mean: float
    y_std: float

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lower) / (self.upper - self.lower)

    def denormalize(self, X: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(X, dtype=float) * (self.upper - self.lower)

    def standardize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def threshold_std(self, threshold: float) -> float:
        return (threshold - self.y_mean) / self.y_std


THRESHOLD_SIGMA_CAP = 3.0


def fit_transforms(dataset: gp.MultiTaskDataset, domain_box: np.ndarray,
                   threshold: float | None = None) -> Transforms:
    """Transforms mapping the domain box to the unit cube and pooled outputs to z-scores.

    Observations gathered safely are biased low, so their standard deviation can
    wildly understate the objective's scale; a threshold that then standardizes
    to many sigmas above the data would make the whole domain look provably
    safe.  When a threshold is given, the output scale is floored so the
    standardized threshold never exceeds THRESHOLD_SIGMA_CAP, which keeps
    unexplored regions (prior band sqrt(beta) >= 4.3 sigma for every default
    discretization) outside the safe set until data vouches for them.
    """
    if dataset.n == 0:
        raise ValueError("transforms require a nonempty dataset")
    box = np.asarray(domain_box, dtype=float)
    mean = float(np.mean(dataset.observations))
    std = max(float(np.std(dataset.observations)), STD_FLOOR)
    if threshold is not None and threshold > mean:
        std = max(std, (threshold - mean) / THRESHOLD_SIGMA_CAP)
    return Transforms(lower=box[:, 0], upper=box[:, 1], y_mean=mean, y_std=std)


@dataclass(frozen=True)
class CandidateGrid:
    """Finite acquisition grid in the normalized unit cube."""

    points: np.ndarray
    spacing: float

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if np.min(pts) < 0.0 or np.max(pts) > 1.0:
            raise ValueError("grid points must lie in the unit cube")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("grid points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def make_grid(dimension: int, size: int = 2048, tau: float = 0.001, seed: int = 0,
              extra_points: np.ndarray | None = None) -> CandidateGrid:
    """Lattice grid in one dimension, scrambled Sobol points otherwise.

    ``extra_points`` (normalized) are appended and deduplicated; the loop adds
    the known-safe seed inputs this way so the safe set can never start empty
    merely because no candidate lies near a seed.
    """
    if dimension == 1:
        points = np.linspace(0.0, 1.0, size).reshape(-1, 1)
    else:
        sob = qmc.Sobol(dimension, scramble=True, seed=seed)
        points = sob.random(size)
    if extra_points is not None and len(extra_points):
        extra = np.clip(np.atleast_2d(np.asarray(extra_points, dtype=float)), 0.0, 1.0)
        points = np.unique(np.vstack([points, extra]), axis=0)
    return CandidateGrid(points=points, spacing=tau)


@dataclass(frozen=True)
class SafeSet:
    """Boolean mask of grid candidates whose upper bound stays below threshold."""

    grid: CandidateGrid
    mask: np.ndarray
    threshold: float            # raw output units

    def size(self) -> int:
        return int(np.sum(self.mask))


def safe_set(posterior: gp.Posterior, bundle: bounds.ScalingBundle,
             threshold_std: float, grid: CandidateGrid,
             threshold_raw: float = np.nan) -> SafeSet:
    """Candidates with mean + sqrt(beta_bar) std + psi below the standardized threshold."""
    means, variances = posterior.predict_batch(grid.points, 1)
    upper = means + np.sqrt(bundle.beta_bar) * np.sqrt(variances) + bundle.psi
    return SafeSet(grid=grid, mask=upper <= threshold_std, threshold=threshold_raw)


@dataclass(frozen=True)
class TraceRecord:
    """One row per evaluation of the objective."""

    repetition: int
    iteration: int
    task: int
    x: np.ndarray               # raw input units
    observed: float
    best_so_far: float
    beta_bar: float
    confidence_set_size: int
    gamma: float
    nu: float
    safe_set_size: int
    violation: bool
    wall_time: float


@dataclass(frozen=True)
class LoopConfig:
    """Everything one optimization run needs besides the problem itself."""

    algorithm: str = "samsbo"
    iterations: int = 40
    delta: float = 0.05
    rho: float = 0.15
    tau: float = 0.001
    eta: float = 0.1
    supplementary_batch: int = 0        # 0 selects the 2 * dimension default
    grid_size: int = 2048
    lengthscale: float = 0.2
    signal_variance: float = 1.0
    noise_variance: float = 0.01
    mcmc_samples: int = 200
    mcmc_chains: int = 2
    mcmc_burn_in: float = 0.5
    mcmc_target_acceptance: float = 0.3
    refresh_every: int = 1
    include_psi: bool = False
    seed_points: int = 3

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        for name in ("delta", "rho", "tau"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")

    def kernel_params(self, dimension: int) -> KernelParams:
        return KernelParams(self.signal_variance,
                            np.full(dimension, self.lengthscale),
                            self.noise_variance)

    def batch_size(self, dimension: int) -> int:
        return self.supplementary_batch if self.supplementary_batch > 0 else 2 * dimension


@dataclass
class OptimizationState:
    """Mutable per-repetition state of the optimization loop."""

    dataset: gp.MultiTaskDataset        # raw units
    transforms: Transforms
    confidence_set: hyperposterior.ConfidenceSet
    sigma_prime: CorrelationMatrix
    bundle: bounds.ScalingBundle
    posterior: gp.Posterior
    grid: CandidateGrid | None = None
    iteration: int = 0
    best_observation: tuple[np.ndarray, float] | None = None
    violation_count: int = 0
    stalled_iterations: int = 0


def select_sigma_prime(confidence_set: hyperposterior.ConfidenceSet) -> CorrelationMatrix:
    """Member minimizing the worst-case spectral ratio over the set (smallest gamma).

    Ties resolve toward the highest recorded posterior density, which is the
    set's ordering.
    """
    members = confidence_set.members
    if len(members) == 1:
        return members[0]
    rs = bounds._two_task_offdiags(members)
    if rs is not None:
        r_lo, r_hi = float(np.min(rs)), float(np.max(rs))
        worst = np.maximum((1.0 + r_hi) / (1.0 + rs), (1.0 - r_lo) / (1.0 - rs))
        return members[int(np.argmin(worst))]
    uniq = {}
    for idx, m in enumerate(members):
        uniq.setdefault(m.key(), (idx, m))
    best_idx, best_val = 0, np.inf
    for idx, candidate in uniq.values():
        worst = max(
            np.linalg.norm(np.linalg.solve(candidate.matrix, other.matrix), 2)
            for _, other in uniq.values()
        )
        if worst < best_val - 1e-15:
            best_idx, best_val = idx, worst
    return members[best_idx]


def _standardized_dataset(state_dataset: gp.MultiTaskDataset, transforms: Transforms) -> gp.MultiTaskDataset:
    return gp.MultiTaskDataset(
        transforms.normalize(state_dataset.inputs),
        state_dataset.tasks,
        transforms.standardize(state_dataset.observations),
    )


def _refresh_model(state: OptimizationState, problem, cfg: LoopConfig,
                   rng: np.random.Generator, refresh_hyperposterior: bool) -> None:
    """Refit transforms, hyper-posterior, scaling bundle and posterior in place."""
    multitask = _is_multitask(cfg.algorithm) and problem.n_tasks > 1
    params = cfg.kernel_params(problem.dimension)
    threshold = problem.threshold if _is_safe(cfg.algorithm) else None
    state.transforms = fit_transforms(state.dataset, problem.domain, threshold)
    ds = _standardized_dataset(state.dataset, state.transforms)
    base = se_kernel_matrix(ds.inputs, ds.inputs, params)
    if multitask:
        if refresh_hyperposterior:
            mcmc = hyperposterior.McmcConfig(
                chains=cfg.mcmc_chains,
                samples_per_chain=int(np.ceil(cfg.mcmc_samples / cfg.mcmc_chains)),
                burn_in_fraction=cfg.mcmc_burn_in,
                seed=int(rng.integers(2 ** 63)),
                target_acceptance=cfg.mcmc_target_acceptance,
            )
            hyper = hyperposterior.sample_hyperposterior(
                ds, problem.n_tasks, hyperposterior.HyperPrior(cfg.eta), params,
                n_samples=cfg.mcmc_samples, config=mcmc,
            )
            state.confidence_set = hyperposterior.confidence_set(hyper, cfg.rho)
            state.sigma_prime = select_sigma_prime(state.confidence_set)
    else:
        identity = CorrelationMatrix.identity(1)
        state.confidence_set = hyperposterior.ConfidenceSet((identity,), cfg.rho, np.zeros(1))
        state.sigma_prime = identity
        ds = gp.MultiTaskDataset(ds.inputs, np.ones(ds.n, dtype=int), ds.observations)
        base = se_kernel_matrix(ds.inputs, ds.inputs, params)
    disc = bounds.DiscretizationSpec(cfg.tau, problem.dimension)
    state.bundle = bounds.scaling_bundle(
        ds, state.sigma_prime, state.confidence_set, disc, params, cfg.delta,
        include_psi=cfg.include_psi, base_gram=base,
    )
    state.posterior = gp.fit(ds, state.sigma_prime, params, base_gram=base)


def _main_task_dataset(dataset: gp.MultiTaskDataset) -> gp.MultiTaskDataset:
    keep = dataset.tasks == 1
    return gp.MultiTaskDataset(dataset.inputs[keep], dataset.tasks[keep],
                               dataset.observations[keep])


def acquire_main(state: OptimizationState, current_safe_set: SafeSet) -> np.ndarray:
    """Safe candidate minimizing the optimistic value mean - sqrt(beta_bar) std.

    Ties break toward the lowest candidate index.  Raises when nothing is safe.
    """
    if current_safe_set.size() == 0:
        raise NoSafeActionError("safe set is empty")
    grid = current_safe_set.grid
    means, variances = state.posterior.predict_batch(grid.points, 1)
    lcb = means - np.sqrt(state.bundle.beta_bar) * np.sqrt(variances)
    masked = np.where(current_safe_set.mask, lcb, np.inf)
    return grid.points[int(np.argmin(masked))]


def acquire_supplementary(state: OptimizationState, batch_size: int,
                          grid: CandidateGrid, n_tasks: int) -> list[tuple[np.ndarray, int]]:
    """Greedy batch maximizing supplementary-task variance with fantasized updates.

    Each pick conditions the posterior on a zero-valued fantasy observation at
    the chosen point (variance does not depend on the observed value), so later
    picks spread out.  Supplementary tasks are cycled when there are several.
    The whole grid is admissible.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    fantasy = state.posterior
    picks: list[tuple[np.ndarray, int]] = []
    supplementary = [z for z in range(2, n_tasks + 1)] or [1]
    for j in range(batch_size):
        task = supplementary[j % len(supplementary)]
        _, variances = fantasy.predict_batch(grid.points, task)
        idx = int(np.argmax(variances))
        x = grid.points[idx]
        picks.append((x, task))
        fantasy = gp.fit(
            fantasy.dataset.extended([x], [task], [0.0]),
            fantasy.sigma_used, fantasy.params,
        )
    return picks


def _record(state: OptimizationState, repetition: int, task: int, x_raw: np.ndarray,
            observed: float, violation: bool, safe_size: int, started: float) -> TraceRecord:
    best = state.best_observation[1] if state.best_observation else np.inf
    return TraceRecord(
        repetition=repetition, iteration=state.iteration, task=task,
        x=np.array(x_raw), observed=float(observed), best_so_far=float(best),
        beta_bar=state.bundle.beta_bar, confidence_set_size=len(state.confidence_set),
        gamma=state.bundle.gamma, nu=state.bundle.nu,
        safe_set_size=safe_size, violation=violation,
        wall_time=time.perf_counter() - started,
    )


def initialize_state(problem, cfg: LoopConfig, rng: np.random.Generator,
                     seed_inputs: np.ndarray, repetition: int = 0) -> tuple[OptimizationState, list[TraceRecord]]:
    """Evaluate the safe seed inputs on the main task and build the initial model."""
    started = time.perf_counter()
    seed_inputs = np.atleast_2d(np.asarray(seed_inputs, dtype=float))
    observations = [problem.evaluate(1, x, rng) for x in seed_inputs]
    dataset = gp.MultiTaskDataset(
        seed_inputs, np.ones(len(observations), dtype=int), observations
    )
    state = OptimizationState(
        dataset=dataset, transforms=None, confidence_set=None, sigma_prime=None,
        bundle=None, posterior=None,
    )
    _refresh_model(state, problem, cfg, rng, refresh_hyperposterior=True)
    state.grid = make_grid(problem.dimension, cfg.grid_size, cfg.tau, seed=0,
                           extra_points=state.transforms.normalize(seed_inputs))
    trace = []
    for x, y in zip(seed_inputs, observations):
        violation = problem.true_value(1, x) > problem.threshold
        state.violation_count += int(violation)
        if state.best_observation is None or y < state.best_observation[1]:
            state.best_observation = (x, float(y))
        trace.append(_record(state, repetition, 1, x, y, violation, -1, started))
    return state, trace


def step(state: OptimizationState, problem, cfg: LoopConfig,
         rng: np.random.Generator, repetition: int = 0) -> list[TraceRecord]:
    """Advance the loop by one iteration and return the new trace rows."""
    started = time.perf_counter()
    state.iteration += 1
    trace: list[TraceRecord] = []
    multitask = _is_multitask(cfg.algorithm) and problem.n_tasks > 1
    grid = state.grid if state.grid is not None else make_grid(
        problem.dimension, cfg.grid_size, cfg.tau, seed=0)

    if multitask:
        picks = acquire_supplementary(state, cfg.batch_size(problem.dimension),
                                      grid, problem.n_tasks)
        new_x, new_z, new_y = [], [], []
        for x_norm, task in picks:
            x_raw = state.transforms.denormalize(x_norm)
            y_raw = problem.evaluate(task, x_raw, rng)
            new_x.append(x_raw)
            new_z.append(task)
            new_y.append(y_raw)
        state.dataset = state.dataset.extended(new_x, new_z, new_y)

    refresh = (state.iteration - 1) % cfg.refresh_every == 0
    _refresh_model(state, problem, cfg, rng, refresh_hyperposterior=refresh)

    if multitask:
        for x_raw, task, y_raw in zip(new_x, new_z, new_y):
            trace.append(_record(state, repetition, task, x_raw, y_raw, False, -1, started))

    threshold_std = state.transforms.threshold_std(problem.threshold)
    if _is_safe(cfg.algorithm):
        current = safe_set(state.posterior, state.bundle, threshold_std, grid,
                           threshold_raw=problem.threshold)
    else:
        current = SafeSet(grid, np.ones(len(grid), dtype=bool), problem.threshold)

    try:
        x_norm = acquire_main(state, current)
    except NoSafeActionError:
        state.stalled_iterations += 1
        return trace

    x_raw = state.transforms.denormalize(x_norm)
    y_raw = problem.evaluate(1, x_raw, rng)
    state.dataset = state.dataset.extended([x_raw], [1], [y_raw])
    violation = problem.true_value(1, x_raw) > problem.threshold
    state.violation_count += int(violation)
    if state.best_observation is None or y_raw < state.best_observation[1]:
        state.best_observation = (x_raw, float(y_raw))
    trace.append(_record(state, repetition, 1, x_raw, y_raw, violation,
                         current.size(), started))
    return trace


def run_repetition(problem, cfg: LoopConfig, seed: int, repetition: int = 0,
                   seed_inputs: np.ndarray | None = None) -> list[TraceRecord]:
    """One full optimization run: seed evaluations plus ``cfg.iterations`` steps."""
    rng = np.random.default_rng(seed)
    if seed_inputs is None:
        from .benchmarks import find_safe_seed
        seed_inputs = np.array([find_safe_seed(problem, rng) for _ in range(cfg.seed_points)])
    state, trace = initialize_state(problem, cfg, rng, seed_inputs, repetition)
    for _ in range(cfg.iterations):
        trace.extend(step(state, problem, cfg, rng, repetition))
    return trace


def run(problem, cfg: LoopConfig, repetitions: int = 1, seed: int = 0) -> list[TraceRecord]:
    """Sequential repetitions with isolated seeds and reinitialized disturbances.

    A failed repetition is skipped after recording the failure; remaining
    repetitions still run.  Fixed seeds make the whole trace deterministic.
    """
    seeds = np.random.SeedSequence(seed).spawn(repetitions)
    trace: list[TraceRecord] = []
    failures = []
    for rep, seq in enumerate(seeds):
        rep_seed = int(seq.generate_state(1)[0])
        rep_problem = problem.with_disturbance_seed(rep_seed)
        try:
            trace.extend(run_repetition(rep_problem, cfg, rep_seed, repetition=rep))
        except Exception as exc:  # noqa: BLE001 - repetition isolation
            failures.append((rep, exc))
    if failures and len(failures) == repetitions:
        raise RuntimeError(f"all repetitions failed; first error: {failures[0][1]}")
    return trace
