"""Communication-round orchestration.

One round: broadcast current local models, run every worker's local update,
compute one alignment transform per worker, average the aligned models into
a global model, and push the global model back through each worker's inverse
transform.  Plain parameter averaging is the identity-transform special case
of the same pipeline, so all three methods share one code path.

A failed alignment (uncontrollable model, dependent column selection,
singular transform, degenerate pseudo-data, or a non-finite aggregate) does
not abort an experiment: that round's aggregation is skipped, the freshly
updated local models are carried forward, and the failure is recorded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import (
    MuSpec,
    PseudoDataSpec,
    align_optimize,
    to_ccf_mimo,
    to_ccf_siso,
)
from .config import CsvSource, ExperimentConfig, SyntheticSource
from .data import (
    SplitSpec,
    SyntheticSystemSpec,
    add_output_noise,
    detrend,
    generate_worker_dataset,
    load_csv,
    normalize,
    resolve_truth_model,
    split,
)
from .errors import (
    ConfigError,
    DegeneratePseudoDataError,
    DimensionError,
    InvalidMuError,
    SingularTransformError,
    UncontrollableModelError,
)
from .metrics import RoundRecord, worker_bfr
from .seeding import DATA, INIT, NOISE, PSEUDO, substream
from .ssm import (
    AlignmentTransform,
    StateSpaceModel,
    apply_inverse_similarity,
    identity_transform,
    is_stable,
)
from .sysid import PemSettings, TimeSeriesDataset, init_model, local_update

METHOD_KINDS = ("fedavg", "fedalign_a", "fedalign_o")

_ALIGNMENT_FAILURES = (
    UncontrollableModelError,
    InvalidMuError,
    SingularTransformError,
    DegeneratePseudoDataError,
)


@dataclass(frozen=True)
class MethodSpec:
    """Aggregation method plus whatever that method needs."""

    kind: str
    mu: MuSpec | None = None
    pseudo: PseudoDataSpec | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.kind == "fedalign_o" and self.pseudo is None:
            raise ValueError("fedalign_o requires a pseudo-data spec")


@dataclass(frozen=True, eq=False)
class FederationState:
    """Snapshot between rounds: local models plus the latest aggregation."""

    round: int
    local_models: tuple[StateSpaceModel, ...]
    global_model: StateSpaceModel | None = None
    transforms: tuple[AlignmentTransform, ...] | None = None
    alignment_failed: bool = False

    def __post_init__(self):
        dims = {(m.nx, m.nu, m.ny) for m in self.local_models}
        if len(dims) > 1:
            raise DimensionError("local models must share (nx, nu, ny)")


def aggregate_aligned(models, transforms) -> StateSpaceModel:
    """Average the models after moving each into the common basis."""
    models = list(models)
    transforms = list(transforms)
    if not models:
        raise DimensionError("cannot aggregate zero models")
    if len(models) != len(transforms):
        raise DimensionError(
            f"{len(models)} models but {len(transforms)} transforms"
        )
    M = len(models)
    A = sum(t.T_inv @ m.A @ t.T for m, t in zip(models, transforms)) / M
    B = sum(t.T_inv @ m.B for m, t in zip(models, transforms)) / M
    C = sum(m.C @ t.T for m, t in zip(models, transforms)) / M
    D = sum(m.D for m in models) / M
    return StateSpaceModel(A, B, C, D)


def aggregate_fedavg(models) -> StateSpaceModel:
    """Entrywise mean of the model matrices (uniform weights)."""
    models = list(models)
    if not models:
        raise DimensionError("cannot aggregate zero models")
    eye = identity_transform(models[0].nx)
    return aggregate_aligned(models, [eye] * len(models))


def redistribute(global_model: StateSpaceModel, transforms) -> list[StateSpaceModel]:
    """Express the global model in every worker's own basis."""
    return [apply_inverse_similarity(global_model, t) for t in transforms]


def compute_transforms(models, method: MethodSpec, rng: np.random.Generator) -> list[AlignmentTransform]:
    """One transform per worker for the chosen method.

    For the optimization-based method the reference worker is drawn from
    ``rng`` before the pseudo inputs, so a generator reseeded identically
    each round keeps both choices fixed across rounds.
    """
    models = list(models)
    nu = models[0].nu
    if method.kind == "fedavg":
        eye = identity_transform(models[0].nx)
        return [eye] * len(models)
    if method.kind == "fedalign_a":
        if nu == 1:
            return [to_ccf_siso(m) for m in models]
        if method.mu is None:
            raise InvalidMuError("multi-input canonical alignment requires mu")
        return [to_ccf_mimo(m, method.mu) for m in models]
    reference = int(rng.integers(len(models)))
    return align_optimize(models, reference, method.pseudo, rng)


def run_round(
    state: FederationState,
    method: MethodSpec,
    datasets: list[TimeSeriesDataset],
    settings: PemSettings | None,
    rng: np.random.Generator,
) -> FederationState:
    """Execute one communication round and return the next state.

    ``settings=None`` skips local training (useful for pure-aggregation
    analyses).  Worker updates are independent of each other and of
    evaluation order.
    """
    if len(datasets) != len(state.local_models):
        raise DimensionError(
            f"{len(state.local_models)} workers but {len(datasets)} datasets"
        )
    if settings is None:
        updated = list(state.local_models)
    else:
        updated = [
            local_update(m, d, settings)
            for m, d in zip(state.local_models, datasets)
        ]

    try:
        transforms = compute_transforms(updated, method, rng)
    except _ALIGNMENT_FAILURES:
        return FederationState(
            state.round + 1, tuple(updated), state.global_model, None, True
        )
    try:
        global_model = aggregate_aligned(updated, transforms)
        locals_next = redistribute(global_model, transforms)
    except DimensionError:
        # Shapes are consistent by construction here, so this is the
        # non-finite-aggregate guard tripping (wildly ill-conditioned
        # transforms); treat it like any other alignment failure.
        return FederationState(
            state.round + 1, tuple(updated), state.global_model, None, True
        )
    return FederationState(
        state.round + 1, tuple(locals_next), global_model, tuple(transforms), False
    )


@dataclass(frozen=True, eq=False)
class ExperimentRun:
    """All rounds of one seed; ``records[0]`` describes the initial models."""

    seed: int
    records: tuple[RoundRecord, ...]
    final_state: FederationState


def _materialize_synthetic(src: SyntheticSource, workers: int, seed: int):
    truth = resolve_truth_model(src.system)
    spec = SyntheticSystemSpec(
        truth, src.samples, src.x1_std, src.u_std, src.w_std, src.v_std
    )
    train = [
        generate_worker_dataset(spec, substream(seed, DATA, worker=i))
        for i in range(workers)
    ]
    return train, None


def _materialize_csv(src: CsvSource, workers: int, seed: int):
    paths = src.paths if len(src.paths) > 1 else src.paths * workers
    if len(paths) != workers:
        raise ConfigError("data.csv.paths", f"need 1 or {workers} paths, got {len(src.paths)}")
    cache: dict[str, tuple] = {}
    train, test = [], []
    for i, path in enumerate(paths):
        if path not in cache:
            base = load_csv(path, src.nu, src.ny)
            if src.detrend:
                base = detrend(base)
            if src.normalize:
                base, _ = normalize(base)
            cache[path] = split(base, SplitSpec(src.train_range, src.test_range))
        tr, te = cache[path]
        train.append(add_output_noise(tr, src.noise_std, substream(seed, NOISE, worker=i)))
        test.append(te)
    if any(t is None for t in test):
        test = None
    return train, test


def _build_method(config: ExperimentConfig, train, test) -> MethodSpec:
    if config.method != "fedalign_o":
        return MethodSpec(config.method, mu=config.mu)
    if config.pseudo_source == "test_inputs":
        if test is None:
            raise ConfigError("method.pseudo.source", "test_inputs requires a test split")
        pseudo = PseudoDataSpec(inputs=test[0].inputs)
    else:
        length = config.pseudo_length or train[0].K
        pseudo = PseudoDataSpec(length=length, input_std=config.pseudo_input_std)
    return MethodSpec(config.method, mu=config.mu, pseudo=pseudo)


def _validate_against_data(config: ExperimentConfig, train) -> None:
    nu = train[0].nu
    if config.method == "fedalign_a" and nu > 1:
        if config.mu is None:
            raise ConfigError("method.mu", "required for multi-input canonical alignment")
        if len(config.mu.mu) != nu:
            raise ConfigError("method.mu", f"has {len(config.mu.mu)} entries, data has nu={nu}")
        if config.mu.total != config.nx:
            raise ConfigError("method.mu", f"entries sum to {config.mu.total}, nx={config.nx}")


def _evaluate(state: FederationState, train, test) -> RoundRecord:
    train_bfr = np.array([worker_bfr(m, d) for m, d in zip(state.local_models, train)])
    test_bfr = (
        np.array([worker_bfr(m, d) for m, d in zip(state.local_models, test)])
        if test is not None
        else None
    )
    overflow = np.isneginf(train_bfr).any(axis=1)
    if test_bfr is not None:
        overflow |= np.isneginf(test_bfr).any(axis=1)
    kappas = (
        np.array([t.kappa for t in state.transforms])
        if state.transforms is not None
        else None
    )
    stable = None if state.global_model is None else is_stable(state.global_model)
    return RoundRecord(
        round=state.round,
        train_bfr=train_bfr,
        test_bfr=test_bfr,
        global_stable=stable,
        kappas=kappas,
        alignment_failed=state.alignment_failed,
        overflow=overflow,
    )


def run_experiment_full(config: ExperimentConfig, master_seed: int) -> ExperimentRun:
    """One seed of one experiment, with an initialization record up front."""
    if isinstance(config.data, SyntheticSource):
        train, test = _materialize_synthetic(config.data, config.workers, master_seed)
    else:
        train, test = _materialize_csv(config.data, config.workers, master_seed)
    nu, ny = train[0].nu, train[0].ny
    _validate_against_data(config, train)
    method = _build_method(config, train, test)
    settings = (
        PemSettings(
            iterations=config.iterations,
            damping_init=config.damping_init,
            damping_scale=config.damping_scale,
            min_step_decrease=config.min_step_decrease,
        )
        if config.iterations >= 1
        else None
    )
    models = tuple(
        init_model(config.nx, nu, ny, substream(master_seed, INIT, worker=i))
        for i in range(config.workers)
    )
    state = FederationState(0, models)
    records = [_evaluate(state, train, test)]
    for _ in range(config.rounds):
        # Reseeded identically every round: same reference worker, same
        # pseudo-input sequence, so transform drift reflects model drift only.
        round_rng = substream(master_seed, PSEUDO)
        state = run_round(state, method, train, settings, round_rng)
        records.append(_evaluate(state, train, test))
    return ExperimentRun(master_seed, tuple(records), state)


def run_experiment(config: ExperimentConfig, master_seed: int | None = None) -> list[RoundRecord]:
    """Round records (one per communication round) for a single seed."""
    seed = config.seeds[0] if master_seed is None else master_seed
    return list(run_experiment_full(config, seed).records[1:])
