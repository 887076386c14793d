"""Dataset generation, CSV ingestion, and preprocessing.

Synthetic worker datasets are drawn from a stable truth system with Gaussian
initial state, inputs, state noise, and output noise.  Real datasets arrive
as CSV (inputs first, then outputs, one sample per row, optional header);
workers are diversified by injecting per-worker output noise into a shared
training split.

The truth systems shipped here are stand-ins with the qualitative features
the experiments need: the single-input system has a transmission zero, and
the second multi-input system has a deliberately weakly controllable second
input channel so canonical transforms built from that channel alone become
badly conditioned.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CsvFormatError,
    DegenerateChannelError,
    DimensionError,
    UnstableTruthError,
)
from .ssm import StateSpaceModel, companion_matrix, is_stable
from .sysid import TimeSeriesDataset

TRUTH_SEED = 74123


@dataclass(frozen=True)
class SyntheticSystemSpec:
    """Sampling recipe for one worker's synthetic dataset."""

    truth_model: StateSpaceModel
    K: int
    x1_std: float = 0.1
    u_std: float = 0.1
    w_std: float = 0.0
    v_std: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        for name in ("x1_std", "u_std", "w_std", "v_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not is_stable(self.truth_model):
            raise UnstableTruthError("truth model has spectral radius >= 1")


@dataclass(frozen=True)
class SplitSpec:
    """Half-open [start, stop) sample ranges for train and test slices."""

    train_range: tuple[int, int]
    test_range: tuple[int, int] | None = None


def generate_worker_dataset(spec: SyntheticSystemSpec, rng: np.random.Generator) -> TimeSeriesDataset:
    """Simulate the truth system under freshly drawn noise and inputs.

    x[0] ~ N(0, x1_std^2 I); u[k] ~ N(0, u_std^2 I); state noise enters the
    recursion, output noise the measurements.  Draw order is fixed
    (x1, inputs, state noise, output noise) for reproducibility.
    """
    m = spec.truth_model
    K = spec.K
    x = rng.normal(scale=spec.x1_std, size=m.nx) if spec.x1_std > 0 else np.zeros(m.nx)
    U = rng.normal(scale=spec.u_std, size=(K, m.nu))
    W = rng.normal(scale=spec.w_std, size=(K, m.nx)) if spec.w_std > 0 else None
    V = rng.normal(scale=spec.v_std, size=(K, m.ny)) if spec.v_std > 0 else None
    Y = np.empty((K, m.ny))
    for k in range(K):
        Y[k] = m.C @ x + m.D @ U[k]
        x = m.A @ x + m.B @ U[k]
        if W is not None:
            x = x + W[k]
    if V is not None:
        Y = Y + V
    return TimeSeriesDataset(U, Y)


def _parse_float(token: str, path, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise CsvFormatError(f"{path}:{line_no}: cannot parse {token!r} as a number") from None


def load_csv(path, nu: int, ny: int) -> TimeSeriesDataset:
    """Read a dataset file: columns 1..nu are inputs, the next ny outputs.

    A non-numeric first row is treated as a header and skipped.
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if line_no == 1:
                try:
                    float(row[0])
                except ValueError:
                    continue
            if len(row) != nu + ny:
                raise CsvFormatError(
                    f"{path}:{line_no}: expected {nu + ny} columns, found {len(row)}"
                )
            rows.append([_parse_float(tok, path, line_no) for tok in row])
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    return TimeSeriesDataset(arr[:, :nu], arr[:, nu:])


def save_csv(data: TimeSeriesDataset, path) -> None:
    path = Path(path)
    header = [f"u{i + 1}" for i in range(data.nu)] + [f"y{i + 1}" for i in range(data.ny)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for u_row, y_row in zip(data.inputs, data.outputs):
            writer.writerow([repr(v) for v in u_row] + [repr(v) for v in y_row])


def detrend(data: TimeSeriesDataset) -> TimeSeriesDataset:
    """Remove the per-channel mean from inputs and outputs."""
    return TimeSeriesDataset(
        data.inputs - data.inputs.mean(axis=0),
        data.outputs - data.outputs.mean(axis=0),
    )


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel means and population stds, input channels then outputs."""

    mean: np.ndarray
    std: np.ndarray
    nu: int

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    def denormalize(self, data: TimeSeriesDataset) -> TimeSeriesDataset:
        return TimeSeriesDataset(
            data.inputs * self.std[: self.nu] + self.mean[: self.nu],
            data.outputs * self.std[self.nu :] + self.mean[self.nu :],
        )


def normalize(data: TimeSeriesDataset) -> tuple[TimeSeriesDataset, NormalizationStats]:
    """Scale every channel to zero mean, unit variance (divisor K)."""
    stacked = np.hstack([data.inputs, data.outputs])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    if np.any(std == 0.0):
        ch = int(np.argmin(std))
        raise DegenerateChannelError(f"channel {ch} has zero variance")
    stats = NormalizationStats(mean, std, data.nu)
    return (
        TimeSeriesDataset(
            (data.inputs - mean[: data.nu]) / std[: data.nu],
            (data.outputs - mean[data.nu :]) / std[data.nu :],
        ),
        stats,
    )


def add_output_noise(data: TimeSeriesDataset, v_std, rng: np.random.Generator) -> TimeSeriesDataset:
    """Add i.i.d. Gaussian noise to output channels; inputs are untouched."""
    v_std = np.broadcast_to(np.asarray(v_std, dtype=float), (data.ny,))
    if np.any(v_std < 0):
        raise ValueError("noise std must be nonnegative")
    if np.all(v_std == 0):
        return data
    noise = rng.normal(size=(data.K, data.ny)) * v_std
    return TimeSeriesDataset(data.inputs, data.outputs + noise)


def split(data: TimeSeriesDataset, spec: SplitSpec) -> tuple[TimeSeriesDataset, TimeSeriesDataset | None]:
    def slice_range(rng_pair, label):
        start, stop = rng_pair
        if not (0 <= start < stop <= data.K):
            raise DimensionError(
                f"{label} range [{start}, {stop}) out of bounds for K={data.K}"
            )
        return TimeSeriesDataset(data.inputs[start:stop], data.outputs[start:stop])

    train = slice_range(spec.train_range, "train")
    test = slice_range(spec.test_range, "test") if spec.test_range is not None else None
    return train, test


def siso_truth_model() -> StateSpaceModel:
    """Third-order single-input truth system with one transmission zero.

    Poles drawn once from a fixed seed inside (0.3, 0.9); realized in
    companion form with a first-degree numerator, so the transfer function
    has exactly one zero (at 0.5).
    """
    rng = np.random.default_rng(TRUTH_SEED)
    poles = np.sort(rng.uniform(0.3, 0.9, size=3))
    a1 = -(poles[0] + poles[1] + poles[2])
    a2 = poles[0] * poles[1] + poles[0] * poles[2] + poles[1] * poles[2]
    a3 = -poles[0] * poles[1] * poles[2]
    A = companion_matrix([a1, a2, a3])
    B = np.array([[0.0], [0.0], [1.0]])
    C = np.array([[-0.5, 1.0, 0.0]])  # numerator z - 0.5
    D = np.zeros((1, 1))
    return StateSpaceModel(A, B, C, D)


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def mimo1_truth_model() -> StateSpaceModel:
    """Fourth-order 2x2 system with both inputs well coupled to all modes."""
    rng = np.random.default_rng(TRUTH_SEED + 1)
    A = np.zeros((4, 4))
    A[:2, :2] = 0.8 * _rotation(0.4)
    A[2:, 2:] = 0.6 * _rotation(1.1)
    B = rng.uniform(-1.0, 1.0, size=(4, 2))
    C = rng.uniform(-1.0, 1.0, size=(2, 4))
    D = np.zeros((2, 2))
    return StateSpaceModel(A, B, C, D)


def mimo2_truth_model() -> StateSpaceModel:
    """Fourth-order 2x2 system whose second input barely excites two modes.

    Canonical transforms built from the second input channel alone are
    ill-conditioned for this system, while balanced column selections stay
    benign; the first input covers all modes, so the pair (A, B) is jointly
    well controllable.
    """
    rng = np.random.default_rng(TRUTH_SEED + 2)
    modes = np.diag([0.9, 0.7, 0.5, 0.3])
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    A = Q @ modes @ Q.T
    weak = 1e-4
    b1 = np.array([0.4, 0.7, 1.0, 0.8])
    b2 = np.array([1.0, -0.6, weak, weak])
    B = Q @ np.column_stack([b1, b2])
    C = rng.uniform(-1.0, 1.0, size=(2, 4))
    D = np.zeros((2, 2))
    return StateSpaceModel(A, B, C, D)


TRUTH_MODELS = {
    "siso": siso_truth_model,
    "mimo1": mimo1_truth_model,
    "mimo2": mimo2_truth_model,
}


def resolve_truth_model(ref: str) -> StateSpaceModel:
    """Map a config reference to a truth system: a shipped name or a JSON path."""
    if ref in TRUTH_MODELS:
        return TRUTH_MODELS[ref]()
    from .ssm import model_from_json

    return model_from_json(Path(ref).read_text(encoding="utf-8"))
