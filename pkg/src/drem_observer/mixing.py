"""Determinant, adjugate and the mixing-step update laws.

All matrix routines accept stacks: an array of shape ``(..., p, p)`` is treated
as a batch of ``p x p`` matrices. Determinants are computed by cofactor
(Laplace) expansion along the first row, which is exact arithmetic with no
pivoting and gives the adjugate for free. That is fine up to ``p = 5``.
"""
from __future__ import annotations

import enum

import numpy as np

from .errors import ConfigError, IntegrityError
from .model import MAX_PARAMS

SYMMETRY_RTOL = 1e-9


class MixingMode(enum.Enum):
    """Gain shape applied to the residual ``Yscript - Phi theta_hat``."""

    Adjugate = "adj"
    DeltaAdjugate = "delta-adj"
    Identity = "identity"

    @classmethod
    def parse(cls, value) -> "MixingMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value in (mode.value, mode.name):
                return mode
        raise ConfigError(f"unknown mixing mode {value!r}; expected one of {[m.value for m in cls]}")

    @property
    def code(self) -> int:
        return list(MixingMode).index(self)


def _square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ConfigError(f"expected square matrices, got shape {M.shape}")
    if M.shape[-1] > MAX_PARAMS:
        raise ConfigError(f"cofactor expansion is limited to p <= {MAX_PARAMS}")
    return M


def _minor(M: np.ndarray, i: int, j: int) -> np.ndarray:
    rows = [r for r in range(M.shape[-2]) if r != i]
    cols = [c for c in range(M.shape[-1]) if c != j]
    return M[..., rows, :][..., :, cols]


def _det(M: np.ndarray) -> np.ndarray:
    p = M.shape[-1]
    if p == 1:
        return M[..., 0, 0]
    if p == 2:
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    total = np.zeros(M.shape[:-2])
    for j in range(p):
        sign = 1.0 if j % 2 == 0 else -1.0
        total = total + sign * M[..., 0, j] * _det(_minor(M, 0, j))
    return total


def determinant(M):
    """Cofactor-expansion determinant of one matrix or a stack of them."""
    M = _square(M)
    d = _det(M)
    return float(d) if M.ndim == 2 else d


def adjugate(M) -> np.ndarray:
    """Transposed cofactor matrix, so that ``adjugate(M) @ M == determinant(M) * I``.

    The adjugate of a 1x1 matrix is ``[[1]]`` (including ``[[0]]``), which keeps
    the identity above valid in every dimension.
    """
    M = _square(M)
    p = M.shape[-1]
    if p == 1:
        return np.ones_like(M)
    adj = np.empty_like(M)
    for i in range(p):
        for j in range(p):
            sign = 1.0 if (i + j) % 2 == 0 else -1.0
            adj[..., j, i] = sign * _det(_minor(M, i, j))
    return adj


def check_symmetric(Phi, rtol: float = SYMMETRY_RTOL) -> None:
    Phi = np.asarray(Phi, dtype=float)
    asym = np.abs(Phi - np.swapaxes(Phi, -1, -2)).max(axis=(-1, -2))
    scale = np.abs(Phi).max(axis=(-1, -2))
    bad = asym > rtol * scale
    if np.any(bad):
        worst = float(np.max(np.where(bad, asym, 0.0)))
        raise IntegrityError(f"Phi lost symmetry (max |Phi - Phi'| = {worst:.3e}); integrator fault")


def delta(Phi):
    """Excitation scalar ``sqrt(det Phi)``, with slightly negative determinants clamped to 0."""
    Phi = _square(Phi)
    check_symmetric(Phi)
    d = np.sqrt(np.maximum(_det(Phi), 0.0))
    return float(d) if Phi.ndim == 2 else d


def theta_dot(Phi, Yscript, theta_hat, lam: float, mode=MixingMode.Adjugate) -> np.ndarray:
    """Parameter update ``lam * G(Phi) @ (Yscript - Phi @ theta_hat)``.

    ``G`` is ``adj(Phi)``, ``delta(Phi) * adj(Phi)`` or the identity depending on
    ``mode``. A singular ``Phi`` simply stalls the adjugate modes.
    """
    if not lam > 0:
        raise ConfigError("adaptation gain lambda must be > 0")
    mode = MixingMode.parse(mode)
    Phi = _square(Phi)
    residual = np.asarray(Yscript, dtype=float) - Phi @ np.asarray(theta_hat, dtype=float)
    if mode is MixingMode.Identity:
        return lam * residual
    out = adjugate(Phi) @ residual
    if mode is MixingMode.DeltaAdjugate:
        out = delta(Phi) * out
    return lam * out
