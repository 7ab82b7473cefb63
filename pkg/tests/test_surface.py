import numpy as np
import pytest

from holobeam.surface import (SPEED_OF_LIGHT, SurfaceConfig, PhasePattern,
                              PathSet, ChannelSample, canonical_surface,
                              edge_feed_positions, element_positions,
                              build_phase_pattern, steering_vector,
                              sample_paths, assemble_channel, sum_rate,
                              sum_rate_equiv, noise_variance,
                              free_space_wavenumber)


def test_config_rejects_bad_geometry():
    feeds = np.array([[0.0, 0.0]])
    with pytest.raises(ValueError):
        SurfaceConfig(n_x=0, n_y=2, d_x=0.01, d_y=0.01, feed_positions=feeds)
    with pytest.raises(ValueError):
        SurfaceConfig(n_x=2, n_y=2, d_x=-1.0, d_y=0.01, feed_positions=feeds)
    with pytest.raises(ValueError):
        SurfaceConfig(n_x=2, n_y=2, d_x=0.01, d_y=0.01,
                      feed_positions=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SurfaceConfig(n_x=2, n_y=2, d_x=0.01, d_y=0.01,
                      feed_positions=np.array([[np.inf, 0.0]]))


def test_config_rejects_subluminal_surface_wavenumber():
    feeds = np.array([[0.0, 0.0]])
    cfg = canonical_surface(2, 2, 1)
    with pytest.raises(ValueError):
        SurfaceConfig(n_x=2, n_y=2, d_x=0.01, d_y=0.01, feed_positions=feeds,
                      ks_mag=0.5 * cfg.k_f)


def test_config_defaults():
    cfg = canonical_surface(4, 3, 2)
    assert cfg.n_t == 12
    assert cfg.n_feeds == 2
    assert np.isclose(cfg.k_f, 2 * np.pi * 30e9 / SPEED_OF_LIGHT)
    assert np.isclose(cfg.ks_mag, np.sqrt(3.0) * cfg.k_f)


def test_edge_feed_positions_midpoints():
    # feed l sits at the midpoint of its 1/L slice of the x edge
    pos = edge_feed_positions(4, 0.0025, 2)
    width = 4 * 0.0025
    assert np.allclose(pos[:, 0], [width / 4, 3 * width / 4])
    assert np.all(pos[:, 1] == 0)
    with pytest.raises(ValueError):
        edge_feed_positions(4, 0.0025, 0)


def test_element_positions_index_order():
    cfg = canonical_surface(3, 2, 1)
    pos = element_positions(cfg)
    # flattened index i = (m-1)*n_y + n, x-major
    assert np.allclose(pos[0], [0.0, 0.0])
    assert np.allclose(pos[1], [0.0, cfg.d_y])
    assert np.allclose(pos[2], [cfg.d_x, 0.0])


def test_phase_pattern_zero_distance_entry():
    feeds = np.array([[0.0, 0.0]])
    cfg = SurfaceConfig(n_x=2, n_y=1, d_x=0.0025, d_y=0.0025,
                        feed_positions=feeds)
    m = build_phase_pattern(cfg).matrix
    assert m[0, 0] == pytest.approx(1.0 + 0j)


def test_phase_pattern_single_distance():
    d = 0.004
    feeds = np.array([[0.0, 0.0]])
    cfg = SurfaceConfig(n_x=2, n_y=1, d_x=d, d_y=d, feed_positions=feeds)
    m = build_phase_pattern(cfg).matrix
    expect = np.exp(-1j * np.sqrt(3.0) * cfg.k_f * d)
    assert abs(m[1, 0] - expect) < 1e-12


def test_phase_pattern_unit_modulus_and_rank():
    cfg = canonical_surface(5, 3, 3)
    m = build_phase_pattern(cfg).matrix
    assert np.max(np.abs(np.abs(m) - 1.0)) <= 1e-12
    sv = np.linalg.svd(m, compute_uv=False)
    assert sv[-1] > 0


def test_phase_pattern_type_validation():
    with pytest.raises(ValueError):
        PhasePattern(np.array([[2.0 + 0j]]))
    with pytest.raises(ValueError):
        PhasePattern(np.array([1.0 + 0j]))


def test_steering_vector_broadside():
    cfg = canonical_surface(3, 3, 1)
    for phi in (0.0, 0.7, -1.2):
        b = steering_vector(cfg, 0.0, phi)
        assert np.allclose(b, 1.0 / 3.0)


def test_steering_vector_single_element():
    cfg = canonical_surface(1, 1, 1)
    assert np.allclose(steering_vector(cfg, 0.3, -0.4), [1.0])


def test_steering_vector_half_wavelength_endfire():
    lam = SPEED_OF_LIGHT / 30e9
    feeds = np.array([[0.0, 0.0]])
    cfg = SurfaceConfig(n_x=2, n_y=1, d_x=lam / 2, d_y=lam / 2,
                        feed_positions=feeds)
    b = steering_vector(cfg, np.pi / 2, 0.0)
    assert np.allclose(b, np.array([1.0, -1.0]) / np.sqrt(2.0), atol=1e-12)


def test_steering_vector_unit_norm():
    cfg = canonical_surface(4, 4, 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta, phi = rng.uniform(-np.pi / 2, np.pi / 2, 2)
        assert abs(np.linalg.norm(steering_vector(cfg, theta, phi)) - 1) <= 1e-12


def test_sample_paths_gain_variances():
    cfg = canonical_surface(2, 2, 1)
    rng = np.random.default_rng(7)
    paths = sample_paths(cfg, 100_000, 2, [1.0, 0.01], rng)
    emp = np.mean(np.abs(paths.gains) ** 2, axis=0)
    assert abs(emp[0] - 1.0) < 0.05
    assert abs(emp[1] - 0.01) < 0.0005


def test_sample_paths_deterministic():
    cfg = canonical_surface(2, 2, 1)
    a = sample_paths(cfg, 5, 2, [1.0, 0.01], np.random.default_rng(11))
    b = sample_paths(cfg, 5, 2, [1.0, 0.01], np.random.default_rng(11))
    assert np.array_equal(a.gains, b.gains)
    assert np.array_equal(a.azimuth, b.azimuth)
    assert np.array_equal(a.elevation, b.elevation)


def test_sample_paths_angle_support():
    cfg = canonical_surface(2, 2, 1)
    paths = sample_paths(cfg, 100_000, 1, [1.0], np.random.default_rng(3))
    for arr in (paths.azimuth, paths.elevation):
        assert arr.min() > -np.pi / 2
        assert arr.max() < np.pi / 2


def test_sample_paths_rejects_bad_variances():
    cfg = canonical_surface(2, 2, 1)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_paths(cfg, 2, 2, [1.0, -0.01], rng)
    with pytest.raises(ValueError):
        sample_paths(cfg, 2, 2, [1.0], rng)


def test_pathset_validation():
    g = np.ones((2, 2), dtype=complex)
    ang = np.zeros((2, 2))
    with pytest.raises(ValueError):
        PathSet(gains=g, azimuth=np.zeros((2, 1)), elevation=ang)
    with pytest.raises(ValueError):
        PathSet(gains=g * np.nan, azimuth=ang, elevation=ang)


def test_assemble_channel_single_broadside_path():
    cfg = canonical_surface(2, 2, 1)
    paths = PathSet(gains=np.array([[1.0 + 0j]]),
                    azimuth=np.zeros((1, 1)), elevation=np.zeros((1, 1)))
    h = assemble_channel(cfg, paths)
    # sqrt(N_t/1) * b(0, 0) with b = ones/sqrt(N_t)
    assert np.allclose(h, np.ones((4, 1)))


def test_assemble_channel_linearity():
    cfg = canonical_surface(3, 2, 1)
    rng = np.random.default_rng(4)
    paths = sample_paths(cfg, 3, 2, [1.0, 0.01], rng)
    doubled = PathSet(gains=2 * paths.gains, azimuth=paths.azimuth,
                      elevation=paths.elevation)
    assert np.allclose(assemble_channel(cfg, doubled),
                       2 * assemble_channel(cfg, paths))


def test_assemble_channel_loop_oracle():
    cfg = canonical_surface(3, 2, 1)
    rng = np.random.default_rng(5)
    paths = sample_paths(cfg, 2, 2, [1.0, 0.01], rng)
    h = assemble_channel(cfg, paths)
    want = np.zeros((cfg.n_t, 2), dtype=complex)
    for k in range(2):
        for i in range(2):
            b = steering_vector(cfg, paths.azimuth[k, i], paths.elevation[k, i])
            want[:, k] += paths.gains[k, i] * b
    want *= np.sqrt(cfg.n_t / 2)
    assert np.max(np.abs(h - want)) <= 1e-12


def test_channel_sample_validation():
    h = np.ones((4, 2), dtype=complex)
    with pytest.raises(ValueError):
        ChannelSample(channel=h, noise_var=0.0)
    with pytest.raises(ValueError):
        ChannelSample(channel=h, noise_var=0.1, p_max=0.0)
    bad = h.copy()
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        ChannelSample(channel=bad, noise_var=0.1)
    with pytest.raises(ValueError):
        ChannelSample(channel=np.ones(4, dtype=complex), noise_var=0.1)


def test_noise_variance_convention():
    assert noise_variance(0.0) == pytest.approx(1.0)
    assert noise_variance(10.0) == pytest.approx(0.1)
    assert noise_variance(20.0) == pytest.approx(0.01)
    assert noise_variance(10.0, p_max=2.0) == pytest.approx(0.2)


def _rand_setting(seed, n_t=4, k=2, l=2):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((n_t, k)) + 1j * rng.standard_normal((n_t, k))
    a = rng.uniform(0, 1, n_t)
    v = rng.standard_normal((l, k)) + 1j * rng.standard_normal((l, k))
    m = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_t, l)))
    return h, a, m, v


def test_sum_rate_zero_beamformer():
    h, a, m, v = _rand_setting(0)
    assert sum_rate(h, a, m, np.zeros_like(v), 0.1) == 0.0
    assert sum_rate_equiv(h, a, np.zeros((4, 2), dtype=complex), 0.1) == 0.0


def test_sum_rate_scalar_case():
    val = sum_rate(np.array([[1.0 + 0j]]), np.array([1.0]),
                   np.array([[1.0 + 0j]]), np.array([[1.0 + 0j]]), 1.0)
    assert val == pytest.approx(1.0)


def test_sum_rate_scalar_loop_oracle():
    h, a, m, v = _rand_setting(1, n_t=5, k=3, l=3)
    v_e = m @ v
    got = sum_rate_equiv(h, a, v_e, 0.25)
    want = 0.0
    for k in range(3):
        sig = abs(np.vdot(a * h[:, k], v_e[:, k])) ** 2
        interf = sum(abs(np.vdot(a * h[:, k], v_e[:, j])) ** 2
                     for j in range(3) if j != k)
        want += np.log2(1 + sig / (interf + 0.25))
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


def test_sum_rate_matches_equiv_form():
    for seed in range(5):
        h, a, m, v = _rand_setting(seed, n_t=6, k=3, l=2)
        direct = sum_rate(h, a, m, v, 0.1)
        equiv = sum_rate_equiv(h, a, m @ v, 0.1)
        assert direct == equiv


def test_sum_rate_permutation_consistency():
    h, a, m, v = _rand_setting(2, n_t=6, k=3, l=3)
    base = sum_rate(h, a, m, v, 0.1)
    rng = np.random.default_rng(9)
    pe = rng.permutation(6)
    pk = rng.permutation(3)
    elem = sum_rate(h[pe], a[pe], m[pe], v, 0.1)
    user = sum_rate(h[:, pk], a, m, v[:, pk], 0.1)
    assert abs(elem - base) <= 1e-12 * max(1.0, abs(base))
    assert abs(user - base) <= 1e-12 * max(1.0, abs(base))


def test_sum_rate_monotone_in_noise():
    h, a, m, v = _rand_setting(3)
    rates = [sum_rate(h, a, m, v, nv) for nv in (0.01, 0.1, 1.0, 10.0)]
    assert all(r1 >= r2 for r1, r2 in zip(rates, rates[1:]))


def test_sum_rate_input_validation():
    h, a, m, v = _rand_setting(4)
    with pytest.raises(ValueError):
        sum_rate(h, a, m, v, 0.0)
    with pytest.raises(ValueError):
        sum_rate_equiv(h, a[:3], m @ v, 0.1)
    with pytest.raises(ValueError):
        sum_rate_equiv(h, a, (m @ v)[:, :1], 0.1)


def test_free_space_wavenumber():
    assert free_space_wavenumber(SPEED_OF_LIGHT) == pytest.approx(2 * np.pi)
