"""Holographic surface geometry, phase pattern, channel model, and sum rate.

The surface is a uniform planar array of n_x * n_y radiating elements in the
z = 0 plane, fed by a small number of RF chains whose reference waves travel
in-plane from the feed points to each element.  Element (m, n), with m along
x and n along y (both 1-based), sits at ((m-1)*d_x, (n-1)*d_y) and owns the
flattened index i = (m-1)*n_y + n, i.e. rows of every (N_t, ...) array are
x-major.  All geometry is in meters, frequencies in Hz, angles in radians.
"""

import numpy as np
from dataclasses import dataclass, field

SPEED_OF_LIGHT = 299_792_458.0

# canonical defaults used when a dataset only records element counts
DEFAULT_SPACING = 0.0025
DEFAULT_CARRIER_HZ = 30e9
DEFAULT_SLOWDOWN = np.sqrt(3.0)


def free_space_wavenumber(carrier_freq):
    return 2.0 * np.pi * carrier_freq / SPEED_OF_LIGHT


@dataclass(frozen=True)
class SurfaceConfig:
    """Geometry of the radiating surface and its feed network.

    feed_positions holds one (x, y) pair per RF chain; ks_mag is the
    wavenumber of the reference wave inside the surface, at least the
    free-space wavenumber k_f because the guided medium is denser.
    """

    n_x: int
    n_y: int
    d_x: float
    d_y: float
    feed_positions: np.ndarray
    carrier_freq: float = DEFAULT_CARRIER_HZ
    ks_mag: float = field(default=0.0)

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("element grid must have at least one element per axis")
        if self.d_x <= 0 or self.d_y <= 0:
            raise ValueError("element spacing must be positive")
        if self.carrier_freq <= 0:
            raise ValueError("carrier frequency must be positive")
        feeds = np.asarray(self.feed_positions, dtype=float)
        if feeds.ndim != 2 or feeds.shape[1] != 2 or feeds.shape[0] < 1:
            raise ValueError("feed_positions must be an (L, 2) array with L >= 1")
        if not np.all(np.isfinite(feeds)):
            raise ValueError("feed positions must be finite")
        object.__setattr__(self, "feed_positions", feeds)
        ks = self.ks_mag if self.ks_mag > 0 else DEFAULT_SLOWDOWN * self.k_f
        if ks < self.k_f - 1e-9 * self.k_f:
            raise ValueError("surface wavenumber cannot be below the free-space one")
        object.__setattr__(self, "ks_mag", float(ks))

    @property
    def n_t(self):
        return self.n_x * self.n_y

    @property
    def n_feeds(self):
        return self.feed_positions.shape[0]

    @property
    def k_f(self):
        return free_space_wavenumber(self.carrier_freq)


def edge_feed_positions(n_x, d_x, n_feeds):
    """Feed points spread evenly along the y = 0 edge of the aperture.

    Feed l (1-based) sits at x = (l - 1/2) * (n_x * d_x) / L so the feeds
    partition the edge into equal segments with one feed per midpoint.
    """
    if n_feeds < 1:
        raise ValueError("need at least one feed")
    width = n_x * d_x
    xs = (np.arange(1, n_feeds + 1) - 0.5) * width / n_feeds
    return np.column_stack([xs, np.zeros(n_feeds)])


def canonical_surface(n_x, n_y, n_feeds, spacing=DEFAULT_SPACING,
                      carrier_freq=DEFAULT_CARRIER_HZ):
    """Surface with the default pitch, carrier, guided wavenumber, and edge feeds."""
    feeds = edge_feed_positions(n_x, spacing, n_feeds)
    return SurfaceConfig(n_x=n_x, n_y=n_y, d_x=spacing, d_y=spacing,
                         feed_positions=feeds, carrier_freq=carrier_freq)


def element_positions(cfg):
    """(N_t, 2) in-plane element coordinates in flattened (x-major) order."""
    mm, nn = np.meshgrid(np.arange(cfg.n_x), np.arange(cfg.n_y), indexing="ij")
    return np.column_stack([(mm * cfg.d_x).ravel(), (nn * cfg.d_y).ravel()])


@dataclass(frozen=True)
class PhasePattern:
    """Unit-modulus feed-to-element response of the surface, shape (N_t, L)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2:
            raise ValueError("phase pattern must be a matrix")
        if not np.all(np.isfinite(m)):
            raise ValueError("phase pattern entries must be finite")
        if not np.allclose(np.abs(m), 1.0, atol=1e-12):
            raise ValueError("phase pattern entries must have unit modulus")
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.matrix
        return self.matrix.astype(dtype)


def build_phase_pattern(cfg):
    """Phase accumulated by the reference wave from each feed to each element.

    Entry (i, l) is exp(-j * ks_mag * r_il) with r_il the in-plane Euclidean
    distance between element i and feed l.
    """
    elems = element_positions(cfg)
    diffs = elems[:, None, :] - cfg.feed_positions[None, :, :]
    dist = np.linalg.norm(diffs, axis=2)
    return PhasePattern(np.exp(-1j * cfg.ks_mag * dist))


def steering_vector(cfg, theta, phi):
    """Unit-norm planar steering vector for azimuth theta, elevation phi.

    The per-element delay is d_mn = (m-1)*d_x*sin(theta)*cos(phi)
    + (n-1)*d_y*sin(theta)*sin(phi); entries are exp(j*k_f*d_mn)/sqrt(N_t).
    """
    pos = element_positions(cfg)
    proj = pos[:, 0] * np.sin(theta) * np.cos(phi) + pos[:, 1] * np.sin(theta) * np.sin(phi)
    return np.exp(1j * cfg.k_f * proj) / np.sqrt(cfg.n_t)


@dataclass(frozen=True)
class PathSet:
    """Per-user propagation paths: complex gains and arrival angles, (K, I)."""

    gains: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex)
        az = np.asarray(self.azimuth, dtype=float)
        el = np.asarray(self.elevation, dtype=float)
        if g.ndim != 2 or g.shape[1] < 1:
            raise ValueError("gains must be (K, I) with I >= 1")
        if az.shape != g.shape or el.shape != g.shape:
            raise ValueError("angle arrays must match the gain array shape")
        for arr in (g, az, el):
            if not np.all(np.isfinite(arr)):
                raise ValueError("path parameters must be finite")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)

    @property
    def n_users(self):
        return self.gains.shape[0]

    @property
    def n_paths(self):
        return self.gains.shape[1]


def sample_paths(cfg, n_users, n_paths, gain_variances, rng):
    """Draw a PathSet: circular Gaussian gains, angles uniform on (-pi/2, pi/2).

    gain_variances gives one variance per path index, shared by all users;
    classic two-path use is [1.0, 0.01] for a strong direct path plus a
    weak scattered one.
    """
    var = np.asarray(gain_variances, dtype=float)
    if var.ndim != 1 or var.size != n_paths:
        raise ValueError("need one gain variance per path")
    if np.any(var <= 0):
        raise ValueError("gain variances must be positive")
    scale = np.sqrt(var / 2.0)
    shape = (n_users, n_paths)
    gains = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    azimuth = rng.uniform(-np.pi / 2, np.pi / 2, size=shape)
    elevation = rng.uniform(-np.pi / 2, np.pi / 2, size=shape)
    return PathSet(gains=gains, azimuth=azimuth, elevation=elevation)


def assemble_channel(cfg, paths):
    """Stack per-user channels into H of shape (N_t, K).

    h_k = sqrt(N_t / I) * sum_i gains[k, i] * b(azimuth[k, i], elevation[k, i]).
    """
    pos = element_positions(cfg)
    st = np.sin(paths.azimuth)
    proj = (pos[:, 0][:, None, None] * st * np.cos(paths.elevation)
            + pos[:, 1][:, None, None] * st * np.sin(paths.elevation))
    basis = np.exp(1j * cfg.k_f * proj) / np.sqrt(cfg.n_t)
    scale = np.sqrt(cfg.n_t / paths.n_paths)
    return scale * np.einsum("nki,ki->nk", basis, paths.gains)


@dataclass(frozen=True)
class ChannelSample:
    """One downlink realization: channels plus the power/noise operating point."""

    channel: np.ndarray
    noise_var: float
    p_max: float = 1.0
    paths: PathSet = None

    def __post_init__(self):
        h = np.asarray(self.channel, dtype=complex)
        if h.ndim != 2:
            raise ValueError("channel must be an (N_t, K) matrix")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        if self.noise_var <= 0:
            raise ValueError("noise variance must be positive")
        if self.p_max <= 0:
            raise ValueError("power budget must be positive")
        object.__setattr__(self, "channel", h)


def noise_variance(snr_db, p_max=1.0):
    """Noise power for a given SNR in dB at transmit budget p_max."""
    return p_max * 10.0 ** (-snr_db / 10.0)


def sum_rate_equiv(H, a, V_e, noise_var):
    """Sum spectral efficiency given the equivalent beamformer V_e = M_p V.

    User k receives through diag(a) h_k; beam j interferes.  Returns
    sum_k log2(1 + |s_kk|^2 / (sum_{j!=k} |s_kj|^2 + noise_var)) with
    s_kj = (diag(a) h_k)^H v_e,j.
    """
    H = np.asarray(H)
    V_e = np.asarray(V_e)
    a = np.asarray(a, dtype=float)
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    if H.shape[0] != V_e.shape[0] or H.shape[1] != V_e.shape[1]:
        raise ValueError("channel and beamformer shapes disagree")
    if a.shape != (H.shape[0],):
        raise ValueError("amplitude vector must have one entry per element")
    s = (a[:, None] * H).conj().T @ V_e
    p = np.abs(s) ** 2
    sig = np.diag(p)
    interf = p.sum(axis=1) - sig
    return float(np.sum(np.log2(1.0 + sig / (interf + noise_var))))


def sum_rate(H, a, M_p, V, noise_var):
    """Sum spectral efficiency of the digital beamformer V behind pattern M_p."""
    return sum_rate_equiv(H, a, np.asarray(M_p) @ np.asarray(V), noise_var)
