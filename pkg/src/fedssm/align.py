"""Construction of state-alignment transforms.

Two families:

* Analytical: map a model to its controllable canonical form (CCF), either
  through the classical Hankel product T = P W for single-input systems or
  through the partitioned Krylov construction for multi-input systems.
* Optimization-based: simulate every model under one shared pseudo-input and
  least-squares fit, per worker, the matrix mapping a reference worker's
  pseudo-states onto that worker's pseudo-states.

Orientation convention, used consistently everywhere: a transform T encodes
the coordinate change x = T x', and ``apply_similarity(model, T)`` yields the
model in the primed (aligned) basis.  For the least-squares family this
means the fitted T_i satisfies x_i ~= T_i x_ref.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneratePseudoDataError,
    DimensionError,
    InvalidMuError,
    SingularTransformError,
    UncontrollableModelError,
)
from .ssm import (
    DEFAULT_KAPPA_LIMIT,
    AlignmentTransform,
    StateSpaceModel,
    char_poly_coeffs,
    identity_transform,
    make_transform,
)


@dataclass(frozen=True)
class MuSpec:
    """How many Krylov columns to take from each input channel.

    The entries must sum to the model order; that is checked where the model
    is available (:func:`to_ccf_mimo`).
    """

    mu: tuple[int, ...]

    def __post_init__(self):
        mu = tuple(int(m) for m in self.mu)
        if len(mu) == 0 or any(m < 0 for m in mu):
            raise ValueError("mu must be a nonempty tuple of nonnegative integers")
        object.__setattr__(self, "mu", mu)

    @property
    def total(self) -> int:
        return sum(self.mu)


@dataclass(frozen=True)
class PseudoDataSpec:
    """Shared excitation used to fit least-squares alignment transforms.

    Either ``inputs`` holds an explicit (K, nu) sequence, or ``length``
    samples are drawn i.i.d. Normal(0, input_std^2) from the caller's
    generator.  Pseudo simulations always start from the zero state.
    """

    length: int | None = None
    input_std: float = 1.0
    inputs: np.ndarray | None = None

    def __post_init__(self):
        if self.inputs is not None:
            arr = np.asarray(self.inputs, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, "inputs", arr)
            object.__setattr__(self, "length", arr.shape[0])
        elif self.length is None or self.length < 1:
            raise ValueError("length must be positive when no inputs are supplied")
        if self.input_std <= 0:
            raise ValueError("input_std must be positive")

    def materialize(self, nu: int, rng: np.random.Generator) -> np.ndarray:
        if self.inputs is not None:
            if self.inputs.shape[1] != nu:
                raise DimensionError(
                    f"pseudo inputs have {self.inputs.shape[1]} channels, expected {nu}"
                )
            return self.inputs
        return rng.normal(scale=self.input_std, size=(self.length, nu))


def controllability_matrix(model: StateSpaceModel) -> np.ndarray:
    """[B, AB, ..., A^(nx-1) B], shape (nx, nx*nu)."""
    blocks = [model.B]
    for _ in range(model.nx - 1):
        blocks.append(model.A @ blocks[-1])
    return np.hstack(blocks)


def _numerical_rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    tol = max(M.shape) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


def _hankel_coeff_matrix(coeffs: np.ndarray) -> np.ndarray:
    # W[i, j] = a_{n-1-i-j} with a_0 := 1; zero below the anti-diagonal.
    n = coeffs.shape[0]
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n - i):
            k = n - 1 - i - j
            W[i, j] = 1.0 if k == 0 else coeffs[k - 1]
    return W


def to_ccf_siso(model: StateSpaceModel, kappa_limit: float = DEFAULT_KAPPA_LIMIT) -> AlignmentTransform:
    """Transform aligning a single-input model with its CCF.

    T = P W, with P the controllability matrix and W the Hankel matrix of
    characteristic coefficients.  For a model already in CCF, P W is the
    identity, so the construction is idempotent.
    """
    if model.nu != 1:
        raise DimensionError(f"single-input construction requires nu=1, got nu={model.nu}")
    P = controllability_matrix(model)
    rank = _numerical_rank(P)
    if rank < model.nx:
        raise UncontrollableModelError(rank, model.nx)
    W = _hankel_coeff_matrix(char_poly_coeffs(model))
    return make_transform(P @ W, kappa_limit)


def to_ccf_mimo(
    model: StateSpaceModel, mu: MuSpec, kappa_limit: float = DEFAULT_KAPPA_LIMIT
) -> AlignmentTransform:
    """Multi-input canonical transform for a given column selection.

    Stacks, per input channel l with mu_l > 0, the Krylov columns
    b_l, A b_l, ..., A^(mu_l - 1) b_l into M; takes the last row of each
    partition of M^-1; restacks those rows propagated through A; and inverts
    the stack.  Ill-conditioned selections are flagged, not rejected.
    """
    if len(mu.mu) != model.nu:
        raise DimensionError(f"mu has {len(mu.mu)} entries, model has nu={model.nu}")
    if mu.total != model.nx:
        raise InvalidMuError(f"mu entries sum to {mu.total}, expected nx={model.nx}")
    A = model.A
    cols = []
    for ell, m in enumerate(mu.mu):
        v = model.B[:, ell]
        for _ in range(m):
            cols.append(v)
            v = A @ v
    M = np.column_stack(cols)
    if _numerical_rank(M) < model.nx:
        raise InvalidMuError(
            f"selected controllability columns are dependent for mu={mu.mu}"
        )
    M_inv = np.linalg.inv(M)
    rows = []
    offset = 0
    for m in mu.mu:
        if m == 0:
            continue
        q = M_inv[offset + m - 1]
        for _ in range(m):
            rows.append(q)
            q = q @ A
        offset += m
    stack = np.vstack(rows)
    if _numerical_rank(stack) < model.nx:
        raise InvalidMuError(f"canonical row stack is singular for mu={mu.mu}")
    transform = make_transform(np.linalg.inv(stack), kappa_limit)
    if float(np.linalg.cond(M)) > kappa_limit and not transform.ill_conditioned:
        transform = AlignmentTransform(
            transform.T, transform.T_inv, transform.kappa, ill_conditioned=True
        )
    return transform


def _pseudo_states(model: StateSpaceModel, inputs: np.ndarray) -> np.ndarray:
    # States reached after each input, columns x_1..x_K from x_0 = 0; the
    # zero start state itself is excluded so K = nx already spans generically.
    A, B = model.A, model.B
    x = np.zeros(model.nx)
    X = np.empty((model.nx, inputs.shape[0]))
    for k in range(inputs.shape[0]):
        x = A @ x + B @ inputs[k]
        X[:, k] = x
    return X


def align_optimize(
    models: list[StateSpaceModel],
    reference_index: int,
    spec: PseudoDataSpec,
    rng: np.random.Generator,
    kappa_limit: float = DEFAULT_KAPPA_LIMIT,
) -> list[AlignmentTransform]:
    """Least-squares alignment of every model to one reference worker.

    One pseudo-input sequence is generated (or taken from ``spec``) and
    simulated through every model from the zero state.  The reference worker
    (0-based ``reference_index``) keeps the identity; every other worker i
    gets the closed-form least-squares solution of  x_i ~= T x_ref :

        T_i = X_i X_ref^T (X_ref X_ref^T)^-1.
    """
    if not models:
        raise DimensionError("models must be nonempty")
    nx, nu = models[0].nx, models[0].nu
    for m in models:
        if (m.nx, m.nu, m.ny) != (nx, models[0].nu, models[0].ny):
            raise DimensionError("all models must share (nx, nu, ny)")
    if not 0 <= reference_index < len(models):
        raise IndexError(f"reference index {reference_index} out of range")
    inputs = spec.materialize(nu, rng)
    if inputs.shape[0] < nx:
        raise DegeneratePseudoDataError(
            f"pseudo sequence of length {inputs.shape[0]} underdetermines an "
            f"order-{nx} alignment"
        )

    X_ref = _pseudo_states(models[reference_index], inputs)
    G = X_ref @ X_ref.T
    if _numerical_rank(G) < nx:
        raise DegeneratePseudoDataError(
            "reference pseudo-states are not persistently exciting"
        )
    G_inv = np.linalg.inv(G)

    transforms = []
    for i, model in enumerate(models):
        if i == reference_index:
            transforms.append(identity_transform(nx))
            continue
        X_i = _pseudo_states(model, inputs)
        T = X_i @ X_ref.T @ G_inv
        transforms.append(make_transform(T, kappa_limit))
    return transforms


def ccf_structure_error(model: StateSpaceModel) -> float:
    """Max deviation of (A, B) from the single-input CCF pattern.

    Checks the shifted-identity upper block of A and B = e_nx; the last row
    of A is free and does not contribute.
    """
    if model.nu != 1:
        raise DimensionError("structure check applies to single-input models")
    nx = model.nx
    err = 0.0
    if nx > 1:
        upper_target = np.zeros((nx - 1, nx))
        upper_target[:, 1:] = np.eye(nx - 1)
        err = float(np.max(np.abs(model.A[:-1, :] - upper_target)))
    b_target = np.zeros((nx, 1))
    b_target[-1, 0] = 1.0
    return max(err, float(np.max(np.abs(model.B - b_target))))
