import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fdmimo.array import ArrayConfig
from fdmimo.channel import (
    NetworkLayout,
    _geometry,
    build_layout,
    drop_users,
    hexagon_distance_cdf,
    large_scale_gain_db,
    pathloss,
    serving_cell,
    small_scale_channel,
)
from fdmimo.errors import InvalidConfigurationError, InvalidInputError

# 39.08*log10(2) and 20*log10(2), frozen from mpmath.
NLOS_DOUBLING_DB = 11.7642522305484
FC_DOUBLING_DB = 6.02059991327962


def test_19_site_layout_has_57_cells():
    lay = build_layout(19, 500.0)
    assert lay.n_cells == 57
    assert lay.isd == 500.0
    assert lay.wraparound
    nearest = np.sort(np.linalg.norm(lay.site_xy[1:] - lay.site_xy[0], axis=1))[:6]
    np.testing.assert_allclose(nearest, 500.0)


def test_single_site_layout_has_no_interferer_sites():
    lay = build_layout(1, 500.0)
    assert lay.n_cells == 3
    assert not lay.wraparound


@pytest.mark.parametrize("n", [0, 2, 20])
def test_unsupported_site_count(n):
    with pytest.raises(InvalidConfigurationError):
        build_layout(n, 500.0)


@pytest.mark.parametrize("n_sites", [7, 19])
def test_wraparound_distance_never_exceeds_direct(n_sites):
    lay = build_layout(n_sites, 500.0)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1500, 1500, size=(2000, 2))
    _, wrapped = lay.site_images(pts)
    direct = np.linalg.norm(pts[None, :, :] - lay.site_xy[:, None, :], axis=-1)
    assert np.all(wrapped <= direct + 1e-9)


def test_wraparound_invariant_under_mirror_relabeling():
    lay = build_layout(19, 500.0)
    perm = np.concatenate([[0], 1 + np.random.default_rng(3).permutation(6)])
    shuffled = NetworkLayout(lay.n_sites, lay.isd, lay.site_xy, lay.wrap_vectors[perm])
    pts = np.random.default_rng(4).uniform(-800, 800, size=(500, 2))
    np.testing.assert_allclose(lay.site_images(pts)[1], shuffled.site_images(pts)[1])


def test_full_drop_assigns_strongest_cell():
    lay = build_layout(19, 500.0)
    drop = drop_users(lay, 10, np.random.default_rng(0))
    assert drop.n_users == 570
    np.testing.assert_array_equal(drop.serving, np.argmax(drop.gain_db, axis=0))
    assert np.all((drop.positions[:, 2] >= 1.5) & (drop.positions[:, 2] <= 22.5))


def test_single_site_one_user_per_cell():
    drop = drop_users(build_layout(1, 500.0), 1, np.random.default_rng(0))
    assert drop.n_users == 3


def test_drop_requires_a_user():
    with pytest.raises(InvalidInputError):
        drop_users(build_layout(1, 500.0), 0, np.random.default_rng(0))


def test_user_distance_matches_uniform_hexagon():
    lay = build_layout(1, 500.0)
    drop = drop_users(lay, 3334, np.random.default_rng(11))
    d = drop.d2d[0]
    p = stats.kstest(d, lambda r: hexagon_distance_cdf(r, lay.isd / 2)).pvalue
    assert p > 0.01


def test_shadowing_is_zero_mean():
    drop = drop_users(build_layout(7, 500.0), 500, np.random.default_rng(5))
    sf = drop.shadowing_db.ravel()
    assert sf.size >= 10**5
    assert abs(sf.mean()) < 0.1
    assert sf.std() == pytest.approx(6.0, rel=0.02)


def test_nlos_distance_doubling():
    a = pathloss(200.0, 2e9, False)
    b = pathloss(400.0, 2e9, False)
    assert b - a == pytest.approx(NLOS_DOUBLING_DB, abs=1e-9)


def test_los_frequency_doubling():
    assert pathloss(100.0, 4e9, True) - pathloss(100.0, 2e9, True) == pytest.approx(
        FC_DOUBLING_DB, abs=1e-9)


def test_short_distance_is_clamped():
    assert pathloss(5.0, 2e9, False) == pathloss(10.0, 2e9, False)


@given(st.floats(10, 5000), st.floats(10, 5000), st.booleans())
def test_pathloss_monotone(d1, d2, los):
    lo, hi = sorted((d1, d2))
    assert pathloss(lo, 2e9, los) <= pathloss(hi, 2e9, los) + 1e-9


@given(st.floats(-200, 200))
def test_serving_invariant_under_common_offset(offset):
    g = np.random.default_rng(2).normal(-100, 10, size=(21, 50))
    np.testing.assert_array_equal(serving_cell(g), serving_cell(g + offset))


def test_serving_tie_goes_to_lowest_cell():
    g = np.array([[-80.0], [-70.0], [-70.0]])
    assert serving_cell(g)[0] == 1


def test_user_on_boresight_near_site_is_served_by_that_sector():
    lay = build_layout(1, 500.0)
    drop = drop_users(lay, 1, np.random.default_rng(0), shadow_std_db=0.0)
    # hand-placed user on the boresight of sector 1
    drop_pos = np.array([[50.0 * math.cos(math.radians(120)), 50.0 * math.sin(math.radians(120)), 1.5]])
    az, el, d2d, d3d = _geometry(lay, drop_pos)
    drop.azimuth_deg, drop.pathloss_db = az, pathloss(d3d, 2e9, True)
    drop.shadowing_db = np.zeros_like(az)
    assert serving_cell(large_scale_gain_db(drop))[0] == 1


def _nlos_drop(per_cell, seed):
    lay = build_layout(1, 500.0)
    drop = drop_users(lay, per_cell, np.random.default_rng(seed))
    drop.los[:] = False
    return lay, drop


def test_single_cluster_is_rank_one_per_polarization():
    lay, drop = _nlos_drop(2, 0)
    cfg = ArrayConfig(4, 4, 2)
    H = small_scale_channel(lay, drop, cfg, 1, np.random.default_rng(1)).H
    for pol in range(2):
        block = H[..., pol * 16:(pol + 1) * 16]
        s = np.linalg.svd(block, compute_uv=False)
        assert np.all(s[..., 1] <= 1e-12 * s[..., 0])


def test_many_clusters_give_rayleigh_envelope_and_unit_mean_power():
    lay, drop = _nlos_drop(3334, 3)
    cfg = ArrayConfig(2, 2, 1)
    ch = small_scale_channel(lay, drop, cfg, 20, np.random.default_rng(9))
    amp = 10 ** (ch.gain_db / 20)
    h = ch.H[0, :, 0, 0] / amp[0]
    env = np.abs(h)
    assert stats.kstest(env, "rayleigh", args=(0, math.sqrt(0.5))).pvalue > 0.01
    norm = ch.H / amp[:, :, None, None]
    mean_pw = np.mean(np.abs(norm) ** 2)
    assert abs(10 * math.log10(mean_pw)) < 0.3


def test_large_scale_gain_preserved_with_los():
    lay = build_layout(1, 500.0)
    drop = drop_users(lay, 3334, np.random.default_rng(8))
    drop.los[:] = True
    ch = small_scale_channel(lay, drop, ArrayConfig(2, 2, 1), 20, np.random.default_rng(2))
    norm = ch.H / (10 ** (ch.gain_db / 20))[:, :, None, None]
    assert abs(10 * math.log10(np.mean(np.abs(norm) ** 2))) < 0.3


def test_cells_are_uncorrelated():
    lay, drop = _nlos_drop(3334, 4)
    ch = small_scale_channel(lay, drop, ArrayConfig(1, 1, 1), 20, np.random.default_rng(6))
    amp = 10 ** (ch.gain_db / 20)
    a = ch.H[0, :, 0, 0] / amp[0]
    b = ch.H[1, :, 0, 0] / amp[1]
    rho = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert rho < 0.05


def test_channel_needs_a_cluster():
    lay, drop = _nlos_drop(1, 0)
    with pytest.raises(InvalidInputError):
        small_scale_channel(lay, drop, ArrayConfig(), 0, np.random.default_rng(0))
