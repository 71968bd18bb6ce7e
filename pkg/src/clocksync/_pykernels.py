"""Pure numpy versions of the hot kernels.

Signatures and in-place semantics match the compiled ``_ckernels`` module
exactly; ``clocksync.kernels`` picks one of the two at import.
"""
import numpy as np


def phase_conjugate(rho, phases):
    """In place: ``rho[b, i, j] *= exp(-1j * (phases[b, i] - phases[b, j]))``."""
    v = np.exp(-1j * phases)
    rho *= v[:, :, None] * v.conj()[:, None, :]


def scale_axis(rho, factor, left, dim, right):
    """In place: scale one tensor factor of every ``rho[b]`` by ``factor[i, j]``.

    ``rho`` has shape (B, D, D) with ``D = left * dim * right`` and the scaled
    factor sits in the middle of that split, on both row and column indices.
    """
    b = rho.shape[0]
    view = rho.reshape(b, left, dim, right, left, dim, right)
    view *= factor[None, None, :, None, None, :, None]


def coherence_mean(phases):
    """Mean over rows of ``exp(-1j * (phases[n, e] - phases[n, f]))``."""
    v = np.exp(-1j * phases)
    return np.einsum("ne,nf->ef", v, v.conj()) / phases.shape[0]


def categorical_sample(probs, u):
    """Inverse-CDF draw per row; ``u`` holds one uniform in [0, 1) per row.

    Rows need not be normalized. Rounding at the top end is clamped to the
    last outcome with nonzero weight.
    """
    cdf = np.cumsum(probs, axis=1)
    target = u * cdf[:, -1]
    idx = (cdf <= target[:, None]).sum(axis=1)
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last).astype(np.int64)
