"""Dense operators, Lindblad models and the algebra shared by all engines.

Conventions: hbar = 1, states are 1-D ``complex128`` arrays, operators and
density matrices are 2-D ``complex128`` arrays. Batches of states are 2-D
arrays with one trajectory per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
UNITARY_TOL = 1e-10
NORM_TOL = 1e-10


class DimensionError(ValueError):
    """Operator or state dimensions do not agree."""


def _as_operator(a, name: str) -> np.ndarray:
    op = np.array(a, dtype=np.complex128)
    if op.ndim != 2 or op.shape[0] != op.shape[1] or op.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {op.shape}")
    op.setflags(write=False)
    return op


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """System Hamiltonian plus an ordered list of jump operators.

    Channel order is part of the model's identity: jump events refer to
    channels by their index in ``jump_ops``.
    """

    hamiltonian: np.ndarray
    jump_ops: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        h = _as_operator(self.hamiltonian, "hamiltonian")
        if not is_hermitian(h):
            raise ValueError("hamiltonian not Hermitian")
        ops = tuple(_as_operator(c, f"jump_ops[{m}]") for m, c in enumerate(self.jump_ops))
        for m, c in enumerate(ops):
            if c.shape != h.shape:
                raise DimensionError(
                    f"jump_ops[{m}] has shape {c.shape}, hamiltonian has shape {h.shape}"
                )
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jump_ops", ops)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.jump_ops)

    @cached_property
    def decay_ops(self) -> tuple[np.ndarray, ...]:
        """C_m^dagger C_m for every channel."""
        return tuple(dagger(c) @ c for c in self.jump_ops)

    @cached_property
    def heff(self) -> np.ndarray:
        return effective_hamiltonian(self)

    def __getstate__(self):
        # cached arrays are cheap to rebuild; keep pickles small for worker pools
        return {"hamiltonian": self.hamiltonian, "jump_ops": self.jump_ops}

    def __setstate__(self, state):
        object.__setattr__(self, "hamiltonian", state["hamiltonian"])
        object.__setattr__(self, "jump_ops", state["jump_ops"])


def effective_hamiltonian(model: LindbladModel) -> np.ndarray:
    """H_S - (i/2) sum_m C_m^dagger C_m, the generator of no-jump evolution."""
    h = np.array(model.hamiltonian)
    for c in model.jump_ops:
        if c.shape != h.shape:
            raise DimensionError("jump operator and hamiltonian dimensions differ")
        h = h - 0.5j * (dagger(c) @ c)
    return h


def _check_square(rho: np.ndarray, dim: int, name: str = "rho") -> np.ndarray:
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (dim, dim):
        raise DimensionError(f"{name} has shape {rho.shape}, expected {(dim, dim)}")
    return rho


def lindblad_rhs(model: LindbladModel, rho: np.ndarray) -> np.ndarray:
    """Time derivative of rho under the master equation.

    Computed as ``-i (H rho - rho H^dagger) + sum_m C_m rho C_m^dagger`` with
    the effective Hamiltonian H, which is algebraically identical to
    ``i[rho, H_S] + L_relax(rho)``.
    """
    rho = _check_square(rho, model.dim)
    h = model.heff
    out = -1j * (h @ rho - rho @ dagger(h))
    for c in model.jump_ops:
        out += c @ rho @ dagger(c)
    return out


def expectation(phi: np.ndarray, op: np.ndarray) -> complex:
    """<phi|op|phi> for a single normalized state."""
    phi = np.asarray(phi, dtype=np.complex128)
    op = np.asarray(op)
    if op.shape != (phi.shape[0], phi.shape[0]):
        raise DimensionError(f"operator shape {op.shape} does not match state of length {phi.shape[0]}")
    return complex(np.vdot(phi, op @ phi))


def unfold_transform(model: LindbladModel, mixing) -> LindbladModel:
    """Replace channels by unitary linear combinations C'_m = sum_n U[m, n] C_n.

    The master equation is invariant under this change; the jump records of
    an unraveling are not.
    """
    u = np.asarray(mixing, dtype=np.complex128)
    m = model.n_channels
    if u.shape != (m, m):
        raise DimensionError(f"mixing matrix has shape {u.shape}, model has {m} channels")
    if m and np.max(np.abs(dagger(u) @ u - np.eye(m))) > UNITARY_TOL:
        raise ValueError("mixing matrix is not unitary")
    if m == 0:
        return LindbladModel(model.hamiltonian, ())
    stacked = np.stack(model.jump_ops)
    new_ops = np.einsum("mn,nij->mij", u, stacked)
    return LindbladModel(model.hamiltonian, tuple(new_ops))


HOMODYNE_SCHEMES = {
    "two_phase": ((1.0, -1.0), np.sqrt(2.0)),
    "four_phase": ((1.0, -1.0, 1j, -1j), 2.0),
}


def homodyne_channels(model: LindbladModel, mu: float, scheme: str = "two_phase") -> LindbladModel:
    """Channels D_{m,eps} = (mu*1 + eps*C_m)/d mixing each C_m with a reference field.

    ``two_phase`` uses eps = +1, -1 and d = sqrt(2); ``four_phase`` uses
    eps = +1, -1, +i, -i and d = 2. Channels are ordered m-major, then by
    eps in the order listed. The relaxation superoperator is unchanged for
    any ``mu > 0``.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    try:
        phases, divisor = HOMODYNE_SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown homodyne scheme {scheme!r}") from None
    ident = np.eye(model.dim, dtype=np.complex128)
    ops = [(mu * ident + eps * c) / divisor for c in model.jump_ops for eps in phases]
    return LindbladModel(model.hamiltonian, tuple(ops))


def stability_bound(model: LindbladModel) -> float:
    """Infinity norm of the effective Hamiltonian; bounds every |eigenvalue|."""
    return float(np.max(np.sum(np.abs(model.heff), axis=1)))


def suggest_dt(model: LindbladModel, safety: float = 0.05) -> float:
    eta = stability_bound(model)
    return safety / eta if eta > 0 else np.inf


# -- states ------------------------------------------------------------------

def basis_state(dim: int, k: int) -> np.ndarray:
    if not 0 <= k < dim:
        raise IndexError(f"basis index {k} out of range for dimension {dim}")
    v = np.zeros(dim, dtype=np.complex128)
    v[k] = 1.0
    return v


def normalize(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.complex128)
    n = np.linalg.norm(phi)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return phi / n


def projector(dim: int, k: int) -> np.ndarray:
    """|k><k|."""
    p = np.zeros((dim, dim), dtype=np.complex128)
    p[k, k] = 1.0
    return p


def check_state(phi: np.ndarray, dim: int | None = None, tol: float = NORM_TOL) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.complex128)
    if phi.ndim != 1 or phi.shape[0] < 1:
        raise DimensionError(f"state must be a non-empty vector, got shape {phi.shape}")
    if dim is not None and phi.shape[0] != dim:
        raise DimensionError(f"state has length {phi.shape[0]}, expected {dim}")
    if abs(np.vdot(phi, phi).real - 1.0) > tol:
        raise ValueError("state is not normalized")
    return phi


def check_density_matrix(rho: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Validate Hermiticity (1e-10), unit trace (1e-8) and positivity (-1e-8)."""
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got shape {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise DimensionError(f"density matrix has dimension {rho.shape[0]}, expected {dim}")
    if not is_hermitian(rho):
        raise ValueError("density matrix not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-8:
        raise ValueError(f"density matrix trace is {np.trace(rho).real}, expected 1")
    if np.linalg.eigvalsh(rho).min() < -1e-8:
        raise ValueError("density matrix is not positive semidefinite")
    return rho


def pure_density(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.complex128)
    return np.outer(phi, phi.conj())


def operators_from(ops: Sequence) -> list[np.ndarray]:
    return [_as_operator(o, "operator") for o in ops]


# -- batched kernels ----------------------------------------------------------
# Batches are stored column-wise: shape (N, B), one trajectory per column.
# Every output element is produced by the same fixed sequence of elementwise
# operations whatever B is, so a trajectory's bits do not depend on which
# batch it ran in. BLAS matmul does not give that guarantee.

class BatchOperator:
    """Dense operator applied to column-stacked states.

    Exact zeros are skipped and unit entries are not multiplied; the
    summation order over columns is fixed by the operator alone.
    """

    def __init__(self, op: np.ndarray):
        op = np.asarray(op, dtype=np.complex128)
        self.shape = op.shape
        self._rows = [
            [(j, complex(op[i, j])) for j in range(op.shape[1]) if op[i, j] != 0]
            for i in range(op.shape[0])
        ]

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        out = np.zeros((self.shape[0],) + psi.shape[1:], dtype=np.complex128)
        for i, terms in enumerate(self._rows):
            acc = None
            for j, v in terms:
                term = psi[j] if v == 1 else v * psi[j]
                acc = term if acc is None else acc + term
            if acc is not None:
                out[i] = acc
        return out


def sqnorm_cols(psi: np.ndarray) -> np.ndarray:
    """Squared norm along the first (state) axis, summed in a fixed order."""
    re = psi.real
    im = psi.imag
    acc = re[0] * re[0] + im[0] * im[0]
    for j in range(1, psi.shape[0]):
        acc = acc + (re[j] * re[j] + im[j] * im[j])
    return acc


def vdot_cols(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """<a|b> for every column, summed in a fixed order."""
    acc = np.conj(a[0]) * b[0]
    for j in range(1, a.shape[0]):
        acc = acc + np.conj(a[j]) * b[j]
    return acc


def normalize_cols(psi: np.ndarray) -> np.ndarray:
    return psi / np.sqrt(sqnorm_cols(psi))
