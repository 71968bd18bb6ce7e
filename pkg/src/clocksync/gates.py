"""Named states, unitaries and measurement bases.

Anything that is not a recognized name is taken as an explicit array:
a state vector or density matrix, a unitary, or a matrix whose columns
are the basis vectors.
"""
import numpy as np

from .hilbert import StateError, is_unitary

_S2 = 1 / np.sqrt(2)

QUBIT_STATES = {
    "zero": [1, 0],
    "one": [0, 1],
    "plus": [_S2, _S2],
    "minus": [_S2, -_S2],
    "plus_i": [_S2, 1j * _S2],
    "minus_i": [_S2, -1j * _S2],
}

GATES = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]),
    "H": np.array([[1, 1], [1, -1]]) * _S2,
    "S": np.diag([1, 1j]),
    "SDG": np.diag([1, -1j]),
    "T": np.diag([1, np.exp(1j * np.pi / 4)]),
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]),
    "CZ": np.diag([1, 1, 1, -1]),
    "SWAP": np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]),
}

# columns are the basis vectors; outcome k is column k
BASES = {
    "X": np.array([[1, 1], [1, -1]]) * _S2,
    "Y": np.array([[1, 1], [1j, -1j]]) * _S2,
}


def resolve_state(spec, dim: int) -> np.ndarray:
    """Density matrix for a named state, a vector or a matrix."""
    if isinstance(spec, str):
        if spec in ("ground", "zero") or (spec.startswith("basis") and spec[5:].isdigit()):
            k = 0 if spec in ("ground", "zero") else int(spec[5:])
            if k >= dim:
                raise StateError(f"basis index {k} out of range for dimension {dim}")
            psi = np.zeros(dim, dtype=complex)
            psi[k] = 1
        elif spec == "maximally_mixed":
            return np.eye(dim, dtype=complex) / dim
        elif spec in QUBIT_STATES:
            if dim != 2:
                raise StateError(f"state {spec!r} needs a qubit, target dimension is {dim}")
            psi = np.array(QUBIT_STATES[spec], dtype=complex)
        else:
            raise StateError(f"unknown state name {spec!r}")
        return np.outer(psi, psi.conj())
    vec_or_mat = np.asarray(spec, dtype=complex)
    if vec_or_mat.ndim == 1:
        if vec_or_mat.shape != (dim,):
            raise StateError(f"state vector has length {len(vec_or_mat)}, expected {dim}")
        norm = np.linalg.norm(vec_or_mat)
        if norm == 0:
            raise StateError("zero state vector")
        psi = vec_or_mat / norm
        return np.outer(psi, psi.conj())
    if vec_or_mat.shape != (dim, dim):
        raise StateError(f"state matrix has shape {vec_or_mat.shape}, expected {(dim, dim)}")
    return vec_or_mat


def resolve_unitary(spec, dim: int) -> np.ndarray:
    if isinstance(spec, str):
        name = spec.upper()
        if name.startswith("PHASE(") and name.endswith(")"):
            theta = float(name[6:-1])
            u = np.diag([1, np.exp(1j * theta)])
        elif name in GATES:
            u = GATES[name]
        else:
            raise StateError(f"unknown gate {spec!r}")
        u = np.asarray(u, dtype=complex)
    else:
        u = np.asarray(spec, dtype=complex)
    if u.shape != (dim, dim):
        raise StateError(f"unitary has shape {u.shape}, target dimension is {dim}")
    if not is_unitary(u):
        raise StateError("operator is not unitary within 1e-10")
    return u


def resolve_basis(spec, dim: int):
    """Return ``(name, columns)`` for a basis spec; ``Z`` is the energy basis."""
    if isinstance(spec, str):
        if spec in ("Z", "energy"):
            return "Z", np.eye(dim, dtype=complex)
        if spec in BASES:
            if dim != 2:
                raise StateError(f"basis {spec!r} needs a qubit, target dimension is {dim}")
            return spec, BASES[spec].astype(complex)
        raise StateError(f"unknown basis {spec!r}")
    cols = np.asarray(spec, dtype=complex)
    if cols.shape != (dim, dim) or not is_unitary(cols):
        raise StateError("custom basis must be a unitary matrix of basis columns")
    return "B", cols


def basis_projectors(cols: np.ndarray) -> list:
    return [np.outer(cols[:, k], cols[:, k].conj()) for k in range(cols.shape[1])]
