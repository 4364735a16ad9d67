"""Singular value spectra and rank-utilization metrics.

Provides a deterministic one-sided Jacobi SVD for small dense matrices and
the derived diagnostics used to compare adapters: effective rank (the
exponential of the Shannon entropy of the normalized spectrum), cumulative
spectral energy, and the AUC-90 index (components needed for 90% energy).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, ShapeError

_JACOBI_REL_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 60


def _as_matrix(m) -> np.ndarray:
    data = m.data if hasattr(m, "data") and isinstance(getattr(m, "data"), np.ndarray) else m
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def svd_values(m, with_vectors: bool = False):
    """Descending singular values of a dense matrix via one-sided Jacobi.

    Rotations stop once every off-diagonal Gram entry is below 1e-12
    relative to the corresponding column norms; more than 60 sweeps raises
    ConvergenceError. With `with_vectors`, returns (u, sv, v) such that
    u @ diag(sv) @ v.T reconstructs the input.
    """
    a = _as_matrix(m)
    if not np.all(np.isfinite(a)):
        raise DomainError("svd_values requires finite entries")
    transposed = a.shape[0] < a.shape[1]
    w = a.T.copy() if transposed else a.copy()
    n = w.shape[1]
    v = np.eye(n)
    # columns whose mass is below roundoff of the whole matrix are dead;
    # rotating them against live columns never converges
    dead = (np.finfo(np.float64).eps * np.linalg.norm(w)) ** 2
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                cp, cq = w[:, p], w[:, q]
                app = cp @ cp
                aqq = cq @ cq
                apq = cp @ cq
                if app <= dead or aqq <= dead:
                    continue
                if abs(apq) <= _JACOBI_REL_TOL * np.sqrt(app * aqq):
                    continue
                rotated = True
                zeta = (aqq - app) / (2.0 * apq)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                rot = np.array([[c, s], [-s, c]])
                w[:, [p, q]] = w[:, [p, q]] @ rot
                v[:, [p, q]] = v[:, [p, q]] @ rot
        if not rotated:
            break
    else:
        raise ConvergenceError(
            f"one-sided Jacobi did not converge in {_JACOBI_MAX_SWEEPS} sweeps")
    norms = np.sqrt((w * w).sum(axis=0))
    order = np.argsort(-norms, kind="stable")
    sv = norms[order]
    if not with_vectors:
        return sv
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    nz = sv > 0.0
    u[:, nz] = w[:, nz] / sv[nz]
    if transposed:
        return v, sv, u
    return u, sv, v


def effective_rank(sv) -> float:
    """exp(-sum p_i ln p_i) with p_i = sigma_i / sum(sigma); 0 ln 0 := 0.

    The all-zero spectrum maps to 0.0, distinct from the rank-1 value 1.0.
    """
    sv = np.asarray(sv, dtype=np.float64).reshape(-1)
    if sv.size and sv.min() < 0.0:
        raise DomainError("singular values must be non-negative")
    total = sv.sum()
    if total == 0.0:
        return 0.0
    p = sv / total
    p = p[p > 0.0]
    return float(np.exp(-(p * np.log(p)).sum()))


def energy_curve(sv, exponent: int = 1) -> np.ndarray:
    """Normalized cumulative sums of sigma^exponent; ends exactly at 1."""
    sv = np.asarray(sv, dtype=np.float64).reshape(-1)
    if exponent not in (1, 2):
        raise DomainError(f"energy exponent must be 1 or 2, got {exponent}")
    if sv.size == 0 or sv.min() < 0.0:
        raise DomainError("spectrum must be non-empty and non-negative")
    if np.any(np.diff(sv) > 0.0):
        raise DomainError("singular values must be sorted descending")
    powered = sv ** exponent
    cum = np.cumsum(powered)
    if cum[-1] == 0.0:
        raise DomainError("energy curve of an all-zero spectrum is undefined")
    return cum / cum[-1]


def auc90(sv, exponent: int = 1) -> int:
    """Smallest k (1-based) whose cumulative energy share reaches 0.9."""
    curve = energy_curve(sv, exponent)
    return int(np.argmax(curve >= 0.9)) + 1


def delta_w_linear(a, b, alpha: float, r: int):
    """Materialize the mergeable linear update (alpha/r) * B @ A."""
    a_m, b_m = _as_matrix(a), _as_matrix(b)
    if r < 1:
        raise DomainError(f"rank must be >= 1, got {r}")
    if a_m.shape[0] != r or b_m.shape[1] != r:
        raise ShapeError(
            f"expected A ({r} x k) and B (d x {r}), got {a_m.shape} and {b_m.shape}")
    return (alpha / r) * (b_m @ a_m)


@dataclass
class SpectralReport:
    """Spectrum of one analyzed matrix plus its derived metrics.

    For an all-zero matrix the effective rank is 0, auc90_index is 0, and
    the energy curve is empty (the normalized distribution is undefined).
    """

    source_label: str
    singular_values: list[float]
    effective_rank: float
    auc90_index: int
    energy_curve: list[float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SpectralReport":
        return cls(**json.loads(text))


def activation_spectrum(h, source_label: str = "H",
                        exponent: int = 1) -> SpectralReport:
    """Spectral report over the rows-by-features activation matrix `h`."""
    mat = _as_matrix(h)
    if mat.shape[0] < mat.shape[1]:
        warnings.warn(
            f"activation matrix has fewer samples ({mat.shape[0]}) than "
            f"dimensions ({mat.shape[1]}); the spectrum may be sample-limited",
            stacklevel=2)
    sv = svd_values(mat)
    if sv.sum() == 0.0:
        return SpectralReport(source_label, sv.tolist(), 0.0, 0, [])
    return SpectralReport(
        source_label=source_label,
        singular_values=sv.tolist(),
        effective_rank=effective_rank(sv),
        auc90_index=auc90(sv, exponent),
        energy_curve=energy_curve(sv, exponent).tolist(),
    )
