"""Discrete-time linear state-space models and similarity transformations.

A model is the matrix quadruple (A, B, C, D) driving the recursion

    x[k+1] = A x[k] + B u[k]
    y[k]   = C x[k] + D u[k]

All values here are immutable after construction (arrays are marked
read-only), so they can be shared freely between concurrent tasks.

A change of state coordinates x = T x' with nonsingular T maps the model to
the equivalent realization (T^-1 A T, T^-1 B, C T, D); eigenvalues and the
input-output map are preserved.  ``apply_similarity`` moves a model into the
primed basis, ``apply_inverse_similarity`` moves it back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SimulationOverflowError, SingularTransformError

DEFAULT_KAPPA_LIMIT = 1e12


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """The quadruple (A, B, C, D) with dimensions (nx, nu, ny)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            arr = _frozen(getattr(self, name))
            if arr.ndim != 2:
                raise DimensionError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        nx, nu, ny = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        expected = {"A": (nx, nx), "B": (nx, nu), "C": (ny, nx), "D": (ny, nu)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class AlignmentTransform:
    """A nonsingular state-coordinate change T with cached inverse.

    ``kappa`` is the 2-norm condition number (ratio of extreme singular
    values).  ``ill_conditioned`` marks transforms whose kappa exceeded the
    limit they were built with; such transforms are still usable — callers
    record the flag rather than abort.
    """

    T: np.ndarray
    T_inv: np.ndarray
    kappa: float
    ill_conditioned: bool = field(default=False)

    def __post_init__(self):
        T = _frozen(self.T)
        T_inv = _frozen(self.T_inv)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise DimensionError(f"T must be square, got shape {T.shape}")
        if T_inv.shape != T.shape:
            raise DimensionError("T_inv shape does not match T")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(T_inv))):
            raise DimensionError("transform contains non-finite entries")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "T_inv", T_inv)
        object.__setattr__(self, "kappa", max(float(self.kappa), 1.0))

    @property
    def nx(self) -> int:
        return self.T.shape[0]


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Simulated states (K, nx) and outputs (K, ny); row k is time step k."""

    states: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states)
        outputs = _frozen(self.outputs)
        if states.shape[0] != outputs.shape[0]:
            raise DimensionError("states and outputs must have equal length")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outputs", outputs)

    def __len__(self) -> int:
        return self.states.shape[0]


def _as_input_matrix(inputs, nu: int) -> np.ndarray:
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != nu:
        raise DimensionError(f"inputs must have shape (K, {nu}), got {u.shape}")
    if u.shape[0] == 0:
        raise DimensionError("inputs must be nonempty")
    return u


def simulate_outputs(model: StateSpaceModel, inputs: np.ndarray, x1=None) -> np.ndarray:
    """Free-run outputs only, shape (K, ny); NaN/Inf rows flag overflow.

    Hot path shared by simulation-error costs and metrics; callers wanting
    overflow *errors* should use :func:`simulate`.
    """
    u = _as_input_matrix(inputs, model.nu)
    A, B, C, D = model.A, model.B, model.C, model.D
    x = np.zeros(model.nx) if x1 is None else np.asarray(x1, dtype=float)
    if x.shape != (model.nx,):
        raise DimensionError(f"x1 must have shape ({model.nx},), got {x.shape}")
    K = u.shape[0]
    Y = np.empty((K, model.ny))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            uk = u[k]
            Y[k] = C @ x + D @ uk
            x = A @ x + B @ uk
    return Y


def simulate(model: StateSpaceModel, inputs, x1=None) -> StateTrajectory:
    """Run the state recursion over an input sequence.

    ``states[0]`` is the initial state x1 (zero when omitted); outputs are
    aligned with states, so ``outputs[k] = C states[k] + D inputs[k]``.

    Raises
    ------
    DimensionError
        If shapes are inconsistent with the model.
    SimulationOverflowError
        If any state or output entry becomes non-finite; carries the first
        offending step index.
    """
    u = _as_input_matrix(inputs, model.nu)
    A, B, C, D = model.A, model.B, model.C, model.D
    x = np.zeros(model.nx) if x1 is None else np.asarray(x1, dtype=float)
    if x.shape != (model.nx,):
        raise DimensionError(f"x1 must have shape ({model.nx},), got {x.shape}")
    K = u.shape[0]
    X = np.empty((K, model.nx))
    Y = np.empty((K, model.ny))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            uk = u[k]
            X[k] = x
            Y[k] = C @ x + D @ uk
            x = A @ x + B @ uk
    finite = np.isfinite(X).all(axis=1) & np.isfinite(Y).all(axis=1)
    if not finite.all():
        raise SimulationOverflowError(int(np.argmin(finite)))
    return StateTrajectory(X, Y)


def eigenvalues(model: StateSpaceModel) -> np.ndarray:
    """Eigenvalues of the state matrix (complex, any order)."""
    return np.linalg.eigvals(model.A)


def char_poly_coeffs(model: StateSpaceModel) -> np.ndarray:
    """Coefficients (a1, ..., a_nx) of det(lambda I - A), monic.

    Computed with the Faddeev-LeVerrier trace recursion: deterministic real
    coefficients, no eigen-solver involved.  Intended for the small system
    orders this package targets (nx <= 10 or so).
    """
    A = model.A
    n = model.nx
    coeffs = np.empty(n)
    Mk = np.zeros((n, n))
    ck = 1.0
    for k in range(1, n + 1):
        Mk = A @ Mk + ck * A
        ck = -np.trace(Mk) / k
        coeffs[k - 1] = ck
    return coeffs


def companion_matrix(coeffs) -> np.ndarray:
    """Bottom-row companion matrix of lambda^n + a1 lambda^(n-1) + ... + an.

    Rows 1..n-1 are the shifted identity; the last row is (-an, ..., -a1).
    """
    a = np.asarray(coeffs, dtype=float)
    n = a.shape[0]
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -a[::-1]
    return A


def spectral_radius(model: StateSpaceModel) -> float:
    return float(np.max(np.abs(eigenvalues(model))))


def is_stable(model: StateSpaceModel, margin: float = 0.0) -> bool:
    """True iff every eigenvalue satisfies |lambda| < 1 - margin (strict)."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return spectral_radius(model) < 1.0 - margin


def make_transform(T, kappa_limit: float = DEFAULT_KAPPA_LIMIT) -> AlignmentTransform:
    """Build an AlignmentTransform from a square matrix.

    Singular-to-machine-precision matrices raise; condition numbers beyond
    ``kappa_limit`` only set the ``ill_conditioned`` flag, since downstream
    aggregation applies such transforms and records the damage instead of
    aborting.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionError(f"T must be square, got shape {T.shape}")
    if not np.all(np.isfinite(T)):
        raise SingularTransformError("transform contains non-finite entries")
    s = np.linalg.svd(T, compute_uv=False)
    n = T.shape[0]
    if s[0] == 0.0 or s[-1] <= n * np.finfo(float).eps * s[0]:
        raise SingularTransformError(
            f"matrix is singular to machine precision (sigma_min={s[-1]:.3e})"
        )
    kappa = float(s[0] / s[-1])
    return AlignmentTransform(T, np.linalg.inv(T), kappa, ill_conditioned=kappa > kappa_limit)


def identity_transform(nx: int) -> AlignmentTransform:
    eye = np.eye(nx)
    return AlignmentTransform(eye, eye, 1.0)


def _check_transform_dims(model: StateSpaceModel, t: AlignmentTransform):
    if t.nx != model.nx:
        raise DimensionError(f"transform is {t.nx}x{t.nx}, model has nx={model.nx}")


def apply_similarity(model: StateSpaceModel, t: AlignmentTransform) -> StateSpaceModel:
    """Re-express the model in the basis x = T x'.

    Returns (T^-1 A T, T^-1 B, C T, D).  If the original state trajectory is
    x[k], the transformed model reproduces the same outputs from the initial
    state T^-1 x[0].
    """
    _check_transform_dims(model, t)
    return StateSpaceModel(
        t.T_inv @ model.A @ t.T, t.T_inv @ model.B, model.C @ t.T, model.D
    )


def apply_inverse_similarity(model: StateSpaceModel, t: AlignmentTransform) -> StateSpaceModel:
    """Inverse of :func:`apply_similarity`: returns (T A T^-1, T B, C T^-1, D)."""
    _check_transform_dims(model, t)
    return StateSpaceModel(
        t.T @ model.A @ t.T_inv, t.T @ model.B, model.C @ t.T_inv, model.D
    )


def model_to_json(model: StateSpaceModel) -> str:
    """Serialize to the canonical JSON object (row-major nested arrays)."""
    payload = {
        "nx": model.nx,
        "nu": model.nu,
        "ny": model.ny,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
    }
    return json.dumps(payload)


def model_from_json(text: str) -> StateSpaceModel:
    obj = json.loads(text)
    model = StateSpaceModel(
        np.array(obj["A"], dtype=float),
        np.array(obj["B"], dtype=float),
        np.array(obj["C"], dtype=float),
        np.array(obj["D"], dtype=float),
    )
    declared = (obj["nx"], obj["nu"], obj["ny"])
    if declared != (model.nx, model.nu, model.ny):
        raise DimensionError(
            f"declared dims {declared} do not match matrices "
            f"({model.nx}, {model.nu}, {model.ny})"
        )
    return model
