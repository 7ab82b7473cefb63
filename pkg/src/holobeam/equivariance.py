"""Executable permutation-property checks for the beamforming pipeline.

Three symmetries are checked.  Relabeling users and surface elements (and,
for pipelines that output a digital beamformer, feeds) must commute with the
whole pipeline.  The network half must be equivariant to element and user
relabeling and entirely invariant to feed relabeling, because the phase
pattern enters it only through a feed-averaged row feature.  The projection
and normalization modules must commute with all three relabelings in closed
form.  Permutations are index vectors applied by gather: row i of the
permuted object is row perm[i] of the original.
"""

import numpy as np
from dataclasses import dataclass

from .precoding import project_to_range, normalize_power


@dataclass(frozen=True)
class PermTriple:
    """Index-vector permutations for elements, users, and feeds."""

    elements: np.ndarray
    users: np.ndarray
    feeds: np.ndarray

    def __post_init__(self):
        for name in ("elements", "users", "feeds"):
            p = np.asarray(getattr(self, name), dtype=int)
            if sorted(p.tolist()) != list(range(p.size)):
                raise ValueError(f"{name} permutation is not a bijection")
            object.__setattr__(self, name, p)

    @classmethod
    def identity(cls, n_t, n_users, n_feeds):
        return cls(np.arange(n_t), np.arange(n_users), np.arange(n_feeds))

    @classmethod
    def random(cls, n_t, n_users, n_feeds, rng):
        return cls(rng.permutation(n_t), rng.permutation(n_users),
                   rng.permutation(n_feeds))


def permute_inputs(H, M_p, perms):
    """Relabeled channel and phase pattern for a PermTriple."""
    H = np.asarray(H)
    M = np.asarray(M_p)
    h_perm = H[np.ix_(perms.elements, perms.users)]
    m_perm = M[np.ix_(perms.elements, perms.feeds)]
    return h_perm, m_perm


@dataclass(frozen=True)
class EquivarianceReport:
    max_discrepancy: float
    tol: float
    details: dict

    @property
    def passed(self):
        return self.max_discrepancy <= self.tol


def check_pipeline_equivariance(pipeline, H, M_p, perms, tol=1e-6):
    """End-to-end check: pipeline(H, M_p) -> (a, V).

    Relabeling elements, users, and feeds on the input must reorder the
    outputs the same way: a by elements, V rows by feeds and columns by
    users.
    """
    a, V = pipeline(H, M_p)
    h_perm, m_perm = permute_inputs(H, M_p, perms)
    a_p, V_p = pipeline(h_perm, m_perm)
    d_a = np.max(np.abs(a_p - np.asarray(a)[perms.elements]))
    d_v = np.max(np.abs(V_p - np.asarray(V)[np.ix_(perms.feeds, perms.users)]))
    disc = float(max(d_a, d_v))
    return EquivarianceReport(max_discrepancy=disc, tol=tol,
                              details={"amplitudes": float(d_a),
                                       "beamformer": float(d_v)})


def check_network_equivariance(network, H, M_p, perms, tol=1e-9):
    """Network half check: network(H, M_p) -> (a, V_e_raw).

    Element and user relabelings act on the outputs; a feed relabeling must
    leave them untouched entirely (it is bundled into the same comparison).
    """
    a, V_e = network(H, M_p)
    h_perm, m_perm = permute_inputs(H, M_p, perms)
    a_p, V_e_p = network(h_perm, m_perm)
    d_a = np.max(np.abs(a_p - np.asarray(a)[perms.elements]))
    d_v = np.max(np.abs(V_e_p - np.asarray(V_e)[np.ix_(perms.elements, perms.users)]))
    disc = float(max(d_a, d_v))
    return EquivarianceReport(max_discrepancy=disc, tol=tol,
                              details={"amplitudes": float(d_a),
                                       "equivalent_beamformer": float(d_v)})


def check_projection_equivariance(M_p, V_e, a, p_max, perms, tol=1e-9):
    """Closed-form modules: range projection and power normalization.

    Both maps must commute with the relabelings: permuted inputs give the
    correspondingly permuted digital beamformer.
    """
    M = np.asarray(M_p)
    V_e = np.asarray(V_e)
    a = np.asarray(a, dtype=float)
    v_tilde = project_to_range(M, V_e)
    v_norm = normalize_power(v_tilde, a, M, p_max)

    h_elems, h_users, h_feeds = perms.elements, perms.users, perms.feeds
    m_perm = M[np.ix_(h_elems, h_feeds)]
    ve_perm = V_e[np.ix_(h_elems, h_users)]
    a_perm = a[h_elems]
    vt_perm = project_to_range(m_perm, ve_perm)
    vn_perm = normalize_power(vt_perm, a_perm, m_perm, p_max)

    d_proj = np.max(np.abs(vt_perm - v_tilde[np.ix_(h_feeds, h_users)]))
    d_norm = np.max(np.abs(vn_perm - v_norm[np.ix_(h_feeds, h_users)]))
    disc = float(max(d_proj, d_norm))
    return EquivarianceReport(max_discrepancy=disc, tol=tol,
                              details={"projection": float(d_proj),
                                       "normalization": float(d_norm)})
