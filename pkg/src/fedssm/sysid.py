"""Local system identification: prediction error minimization for one worker.

Training minimizes the free-run simulation error

    J(theta) = sum_k || y[k] - yhat[k] ||^2,   yhat from x[0] = 0,

over all entries of (A, B, C, D) with a Levenberg-Marquardt loop.  One
"iteration" is one *accepted* LM step, so a budget of 1 really means a single
parameter update, which is what the round-based federation layer relies on.

The Jacobian of the predicted outputs is computed by forward sensitivity
recursion (differentiating the state recursion with respect to each
parameter entry), exact to machine precision; no finite differencing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .ssm import StateSpaceModel, simulate_outputs

_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e12


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """Paired input/output sequences; inputs (K, nu), outputs (K, ny)."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if np.asarray(self.inputs).ndim == 1:
            u = u.T
        if np.asarray(self.outputs).ndim == 1:
            y = y.T
        if u.shape[0] != y.shape[0]:
            raise DimensionError(
                f"inputs have {u.shape[0]} samples, outputs {y.shape[0]}"
            )
        if u.shape[0] == 0:
            raise DimensionError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise DimensionError("dataset contains non-finite entries")
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)

    @property
    def K(self) -> int:
        return self.inputs.shape[0]

    @property
    def nu(self) -> int:
        return self.inputs.shape[1]

    @property
    def ny(self) -> int:
        return self.outputs.shape[1]


@dataclass(frozen=True)
class PemSettings:
    """Levenberg-Marquardt schedule for :func:`local_update`.

    ``iterations`` counts accepted steps.  ``min_step_decrease`` stops the
    loop early once the relative cost improvement of an accepted step falls
    to or below it (0 disables early stopping).
    """

    iterations: int = 1
    damping_init: float = 1e-3
    damping_scale: float = 10.0
    min_step_decrease: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.damping_init <= 0:
            raise ValueError("damping_init must be positive")
        if self.damping_scale <= 1:
            raise ValueError("damping_scale must be > 1")
        if self.min_step_decrease < 0:
            raise ValueError("min_step_decrease must be nonnegative")


@dataclass(frozen=True)
class FitResult:
    model: StateSpaceModel
    cost_initial: float
    cost_final: float
    accepted_steps: int
    stalled: bool


def _check_dims(model: StateSpaceModel, data: TimeSeriesDataset):
    if data.nu != model.nu or data.ny != model.ny:
        raise DimensionError(
            f"dataset is ({data.nu} in, {data.ny} out), model is "
            f"({model.nu} in, {model.ny} out)"
        )


def simulation_cost(model: StateSpaceModel, data: TimeSeriesDataset) -> float:
    """Sum of squared free-run output errors; +inf if simulation overflows."""
    _check_dims(model, data)
    Y = simulate_outputs(model, data.inputs)
    if not np.all(np.isfinite(Y)):
        return np.inf
    return float(np.sum((data.outputs - Y) ** 2))


def _pack(model: StateSpaceModel) -> np.ndarray:
    return np.concatenate(
        [model.A.ravel(), model.B.ravel(), model.C.ravel(), model.D.ravel()]
    )


def _unpack(theta: np.ndarray, nx: int, nu: int, ny: int) -> StateSpaceModel:
    nA, nB, nC = nx * nx, nx * nu, ny * nx
    A = theta[:nA].reshape(nx, nx)
    B = theta[nA : nA + nB].reshape(nx, nu)
    C = theta[nA + nB : nA + nB + nC].reshape(ny, nx)
    D = theta[nA + nB + nC :].reshape(ny, nu)
    return StateSpaceModel(A, B, C, D)


def residual_jacobian(model: StateSpaceModel, data: TimeSeriesDataset):
    """Residuals r = y - yhat (flattened) and S = d yhat / d theta.

    theta orders the row-major entries of A, then B, then C, then D.  The
    state sensitivity matrix is propagated alongside the simulation, so S is
    exact for the free-run predictor started at x[0] = 0.
    """
    _check_dims(model, data)
    A, B, C, D = model.A, model.B, model.C, model.D
    nx, nu, ny = model.nx, model.nu, model.ny
    u, y = data.inputs, data.outputs
    K = data.K
    nA, nB = nx * nx, nx * nu
    nP = nA + nB
    nC = ny * nx
    ntheta = nP + nC + ny * nu

    S = np.zeros((nx, nP))
    J = np.zeros((K, ny, ntheta))
    Y = np.empty((K, ny))
    x = np.zeros(nx)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            uk = u[k]
            Y[k] = C @ x + D @ uk
            J[k, :, :nP] = C @ S
            for p in range(ny):
                J[k, p, nP + p * nx : nP + (p + 1) * nx] = x
                J[k, p, nP + nC + p * nu : nP + nC + (p + 1) * nu] = uk
            S = A @ S
            for i in range(nx):
                S[i, i * nx : (i + 1) * nx] += x
                S[i, nA + i * nu : nA + (i + 1) * nu] += uk
            x = A @ x + B @ uk
    return (y - Y).ravel(), J.reshape(K * ny, ntheta)


def pem_fit(model: StateSpaceModel, data: TimeSeriesDataset, settings: PemSettings) -> FitResult:
    """Run the LM loop and report what happened.

    The returned cost never exceeds the input model's cost: trial steps that
    would increase it (or that overflow) are rejected with a damping
    increase, and if damping saturates before any trial is accepted the
    input model comes back with ``stalled`` set.
    """
    _check_dims(model, data)
    if data.K < model.nx * (model.nu + model.ny):
        warnings.warn(
            f"dataset length {data.K} is below the recommended "
            f"nx*(nu+ny) = {model.nx * (model.nu + model.ny)} samples",
            stacklevel=2,
        )
    nx, nu, ny = model.nx, model.nu, model.ny
    theta = _pack(model)
    current = model
    cost = simulation_cost(model, data)
    cost_initial = cost
    lam = settings.damping_init
    accepted = 0
    stalled = False

    while accepted < settings.iterations:
        if not np.isfinite(cost):
            stalled = True
            break
        r, S = residual_jacobian(current, data)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(S))):
            stalled = True
            break
        grad = S.T @ r
        if np.max(np.abs(grad)) <= 1e-12 * (1.0 + cost):
            break
        H = S.T @ S
        diag = np.diag(H).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1.0))

        step_taken = False
        while lam <= _LAMBDA_MAX:
            try:
                delta = np.linalg.solve(H + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                delta, *_ = np.linalg.lstsq(H + lam * np.diag(diag), grad, rcond=None)
            trial_theta = theta + delta
            if np.all(np.isfinite(trial_theta)):
                trial = _unpack(trial_theta, nx, nu, ny)
                trial_cost = simulation_cost(trial, data)
                if trial_cost < cost:
                    improvement = cost - trial_cost
                    theta, current, prev = trial_theta, trial, cost
                    cost = trial_cost
                    lam = max(lam / settings.damping_scale, _LAMBDA_MIN)
                    accepted += 1
                    step_taken = True
                    if improvement <= settings.min_step_decrease * prev:
                        return FitResult(current, cost_initial, cost, accepted, False)
                    break
            lam *= settings.damping_scale
        if not step_taken:
            stalled = accepted == 0
            break

    return FitResult(current, cost_initial, cost, accepted, stalled)


def local_update(model: StateSpaceModel, data: TimeSeriesDataset, settings: PemSettings) -> StateSpaceModel:
    """One worker's local training pass; see :func:`pem_fit` for details."""
    return pem_fit(model, data, settings).model


def init_model(nx: int, nu: int, ny: int, rng: np.random.Generator) -> StateSpaceModel:
    """Random initial model: small B/C/D, A rescaled to spectral radius 0.5.

    Draw order (A, B, C, D) is fixed so a given generator state always
    produces the same model.
    """
    if min(nx, nu, ny) < 1:
        raise ValueError("nx, nu, ny must be positive")
    while True:
        A = rng.normal(size=(nx, nx))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        if rho > 0:
            break
    A *= 0.5 / rho
    B = rng.normal(scale=0.1, size=(nx, nu))
    C = rng.normal(scale=0.1, size=(ny, nx))
    D = rng.normal(scale=0.1, size=(ny, nu))
    return StateSpaceModel(A, B, C, D)
