"""Beamformer containers and the two projection modules.

A learned or optimized equivalent beamformer V_e lives in C^{N_t x K} but
the hardware only realizes M_p @ V for a digital beamformer V in C^{L x K}.
project_to_range maps V_e to the least-squares digital beamformer and
normalize_power rescales it so the transmit power constraint holds with
equality under the current holographic amplitudes.
"""

import numpy as np
from dataclasses import dataclass

RANK_TOL = 1e-9


@dataclass(frozen=True)
class BeamformerSet:
    """Holographic amplitudes a, digital beamformer V, equivalent V_e = M_p V."""

    a: np.ndarray = None
    V: np.ndarray = None
    V_e: np.ndarray = None

    def __post_init__(self):
        if self.a is not None:
            a = np.asarray(self.a, dtype=float)
            if np.any(a < -1e-12) or np.any(a > 1.0 + 1e-12):
                raise ValueError("holographic amplitudes must lie in [0, 1]")
            object.__setattr__(self, "a", a)
        if self.V is not None:
            object.__setattr__(self, "V", np.asarray(self.V, dtype=complex))
        if self.V_e is not None:
            object.__setattr__(self, "V_e", np.asarray(self.V_e, dtype=complex))


def effective_channel(H, a):
    """Channels seen through the amplitude mask, diag(a) H."""
    return np.asarray(a, dtype=float)[:, None] * np.asarray(H)


def project_to_range(M_p, V_e):
    """Least-squares digital beamformer: argmin_V ||M_p V - V_e||_F.

    Solved through a QR factorization rather than forming the Gram matrix;
    equal to (M_p^H M_p)^{-1} M_p^H V_e when M_p has full column rank, which
    is required (relative rank tolerance 1e-9).
    """
    M = np.asarray(M_p)
    V_e = np.asarray(V_e)
    if M.shape[0] != V_e.shape[0]:
        raise ValueError("pattern and equivalent beamformer row counts disagree")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise ValueError("phase pattern is rank deficient; projection undefined")
    q, r = np.linalg.qr(M)
    return np.linalg.solve(r, q.conj().T @ V_e)


def normalize_power(V_tilde, a, M_p, p_max):
    """Scale V_tilde so ||diag(a) M_p V_tilde||_F^2 equals p_max exactly."""
    V_tilde = np.asarray(V_tilde)
    a = np.asarray(a, dtype=float)
    radiated = a[:, None] * (np.asarray(M_p) @ V_tilde)
    nrm = np.linalg.norm(radiated)
    if nrm <= 0 or not np.isfinite(nrm):
        raise ValueError("beamformer radiates no power; cannot normalize")
    if p_max <= 0:
        raise ValueError("power budget must be positive")
    return V_tilde * (np.sqrt(p_max) / nrm)
