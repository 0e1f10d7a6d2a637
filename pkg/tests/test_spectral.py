import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freqsplat import spectral as sp
from freqsplat.errors import ParameterError, ShapeError
from oracles import (central_difference, direct_dft, direct_radius, freq_kink_free,
                     ref_discrepancies, ref_freq_loss, rel_err)


def sched(dims, t0=10, t_end=50, d0_frac=0.3, w_low=1.0, w_high=1.0):
    return sp.AnnealSchedule.for_dims(dims, t0, t_end, d0_frac, w_low, w_high)


# ---------------------------------------------------------------- transform

def test_constant_2x2():
    f = sp.dft2(np.ones((2, 2)))
    expected = np.zeros((2, 2))
    expected[1, 1] = 4.0
    np.testing.assert_allclose(f[:, :, 0], expected, atol=1e-15)


def test_delta_has_flat_amplitude():
    img = np.zeros((6, 7))
    img[0, 0] = 1.0
    np.testing.assert_allclose(sp.amplitude(sp.dft2(img)), 1.0, atol=1e-15)


@pytest.mark.parametrize("h,w", [(2, 2), (3, 5), (8, 8), (16, 16), (9, 12), (15, 2)])
def test_matches_direct_sum(h, w):
    img = np.random.default_rng(h * 31 + w).uniform(size=(h, w, 3))
    assert np.abs(sp.dft2(img) - direct_dft(img)).max() < 1e-9


def test_degenerate_dims():
    with pytest.raises(ParameterError):
        sp.dft2(np.ones((1, 8)))
    with pytest.raises(ShapeError):
        sp.dft2(np.ones((2, 2, 2, 2)))


@settings(max_examples=50, deadline=None)
@given(h=st.integers(2, 20), w=st.integers(2, 20), seed=st.integers(0, 2**31))
def test_conjugate_symmetry_and_parseval(h, w, seed):
    img = np.random.default_rng(seed).uniform(size=(h, w))
    raw = np.fft.ifftshift(sp.dft2(img)[:, :, 0])
    mirrored = raw[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
    assert np.abs(raw - np.conj(mirrored)).max() < 1e-10
    assert np.sum(np.abs(raw) ** 2) == pytest.approx(h * w * np.sum(img**2), rel=1e-9)


# ---------------------------------------------------------------- amplitude / phase

def test_amplitude_and_phase_examples():
    assert sp.amplitude(np.array([3 + 4j]))[0] == 5.0
    assert sp.phase(np.array([1j]))[0] == pytest.approx(math.pi / 2)
    assert sp.phase(np.array([-1 + 0j]))[0] == math.pi
    assert sp.phase(np.array([complex(-1.0, -0.0)]))[0] == math.pi
    assert sp.phase(np.array([0j, 1e-13 - 1e-13j]))[1] == 0.0


@settings(max_examples=200, deadline=None)
@given(re=st.floats(-1e6, 1e6), im=st.floats(-1e6, 1e6))
def test_phase_range(re, im):
    p = sp.phase(np.array([complex(re, im)]))[0]
    assert -math.pi < p <= math.pi


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-100, 100))
def test_wrap_angle(x):
    y = float(sp.wrap_angle(np.array(x)))
    assert -math.pi < y <= math.pi + 1e-12
    assert math.isclose(math.remainder(x - y, 2 * math.pi), 0.0, abs_tol=1e-9)


# ---------------------------------------------------------------- discrepancies

def test_identical_spectra_zero():
    f = sp.dft2(np.random.default_rng(0).uniform(size=(8, 8, 3)))
    assert sp.amp_discrepancy(f, f) == 0.0 and sp.phase_discrepancy(f, f) == 0.0


def test_constant_images_amplitude_gap():
    a, b = np.ones((4, 4)), np.zeros((4, 4))
    assert abs(sp.amp_discrepancy(sp.dft2(a), sp.dft2(b)) - 4.0) < 1e-9
    assert abs(sp.amp_discrepancy(direct_dft(a), direct_dft(b)) - 4.0) < 1e-9
    a, b = np.full((6, 10, 3), 0.7), np.full((6, 10, 3), 0.2)
    assert abs(sp.amp_discrepancy(sp.dft2(a), sp.dft2(b)) - math.sqrt(60) * 0.5) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_discrepancies_match_reference(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    fa, fb = direct_dft(a), direct_dft(b)
    da, dp = ref_discrepancies(fa, fb)
    assert abs(sp.amp_discrepancy(sp.dft2(a), sp.dft2(b)) - da) < 1e-9
    assert abs(sp.phase_discrepancy(sp.dft2(a), sp.dft2(b)) - dp) < 1e-9


def test_discrepancy_shape_mismatch():
    with pytest.raises(ShapeError):
        sp.amp_discrepancy(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        sp.phase_discrepancy(np.zeros((4, 4)), np.zeros((5, 4)))


# ---------------------------------------------------------------- masks and schedule

def test_mask_extremes():
    dims = (8, 10)
    d = sp.max_radius(dims)
    assert sp.make_lowpass(d, dims).mask.all()
    assert not sp.make_highpass(3.0, 3.0, dims).mask.any()


def test_lowpass_count_matches_scan():
    m = sp.make_lowpass(2.0, (8, 8)).mask
    r = direct_radius(8, 8)
    assert m.sum() == (r <= 2.0).sum() == 13
    assert m[4, 4] == 1 and m[4, 6] == 1 and m[4, 7] == 0


@pytest.mark.parametrize("dims", [(8, 8), (9, 14), (16, 5)])
def test_masks_complementary_and_radial(dims):
    d = sp.max_radius(dims)
    for d0 in (0.5, 1.0, 2.0, 3.5):
        low = sp.make_lowpass(d0, dims).mask
        high = sp.make_highpass(d, d0, dims).mask
        np.testing.assert_array_equal(low + high, np.ones(dims))
    r = direct_radius(*dims)
    m = sp.make_lowpass(2.5, dims).mask
    for val in np.unique(r):
        assert len(np.unique(m[r == val])) == 1


def test_mask_ordering_errors():
    with pytest.raises(ParameterError):
        sp.make_lowpass(0.0, (8, 8))
    with pytest.raises(ParameterError):
        sp.make_lowpass(100.0, (8, 8))
    with pytest.raises(ParameterError):
        sp.make_highpass(1.0, 2.0, (8, 8))
    with pytest.raises(ParameterError):
        sp.make_highpass(10.0, 2.0, (8, 8))


def test_band_radius_examples():
    s = sched((16, 16), t0=20, t_end=100, d0_frac=0.25)
    assert sp.band_radius(0, s) == s.d0 and sp.band_radius(20, s) == s.d0
    assert sp.band_radius(100, s) == s.d_max
    assert sp.band_radius(60, s) == pytest.approx((s.d0 + s.d_max) / 2)
    assert sp.band_radius(10**6, s) == s.d_max


@settings(max_examples=100, deadline=None)
@given(t0=st.integers(1, 100), span=st.integers(1, 500), frac=st.floats(0.01, 0.99),
       ts=st.lists(st.integers(0, 1000), min_size=2, max_size=20))
def test_band_radius_monotone(t0, span, frac, ts):
    s = sched((32, 24), t0, t0 + span, frac)
    radii = [sp.band_radius(t, s) for t in sorted(ts)]
    assert all(b >= a for a, b in zip(radii, radii[1:]))
    assert all(s.d0 <= r <= s.d_max for r in radii)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        sp.AnnealSchedule(5, 5, 1.0, 2.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        sp.AnnealSchedule(0, 5, 1.0, 2.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        sp.AnnealSchedule(1, 5, 3.0, 2.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        sp.AnnealSchedule(1, 5, 1.0, 2.0, -1.0, 1.0)


# ---------------------------------------------------------------- loss

def test_loss_zero_for_identical():
    img = np.random.default_rng(3).uniform(size=(8, 8, 3))
    s = sched((8, 8))
    for t in (1, 10, 11, 50, 80):
        loss, parts = sp.freq_loss(img, img, t, s)
        assert loss == 0.0
        assert not np.any(sp.freq_loss_backward(img, img, t, s))


def test_high_band_inactive_until_t0():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    lo, _ = sp.freq_loss(a, b, 10, sched((8, 8), w_high=0.0))
    hi, parts = sp.freq_loss(a, b, 10, sched((8, 8), w_high=1e6))
    assert lo == hi
    assert not parts.high_active and parts.d_ha == 0.0 and parts.d_hp == 0.0


@pytest.mark.parametrize("t", [5, 10, 11, 30, 50, 70])
def test_loss_matches_reference(t):
    rng = np.random.default_rng(t)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    s = sched((8, 8), 10, 50, 0.3, 0.7, 1.3)
    loss, parts = sp.freq_loss(a, b, t, s)
    ref, ref_parts = ref_freq_loss(a, b, t, 10, 50, s.d0, 0.7, 1.3)
    assert abs(loss - ref) < 1e-9
    np.testing.assert_allclose([parts.d_la, parts.d_lp, parts.d_ha, parts.d_hp], ref_parts,
                               atol=1e-9)
    assert parts.high_active == (t > 10)


def test_loss_accepts_cached_target_and_checks_shape():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    s = sched((8, 8))
    assert sp.freq_loss(a, sp.SpectralTarget(b), 30, s) == sp.freq_loss(a, b, 30, s)
    with pytest.raises(ShapeError):
        sp.freq_loss(a, b[:, :7], 30, s)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("t", [5, 30, 60])
def test_gradient_matches_finite_differences(seed, t):
    rng = np.random.default_rng(seed)
    b = rng.uniform(size=(6, 6, 3))
    a = np.clip(b + rng.normal(scale=0.2, size=b.shape), 0, 1)
    s = sched((6, 6), 10, 50, 0.4, 0.8, 1.1)
    h = 1e-5
    assert freq_kink_free(a, b, t, s, h)
    analytic = sp.freq_loss_backward(a, b, t, s)
    numeric = central_difference(lambda x: sp.freq_loss(x, b, t, s)[0], a, h)
    assert rel_err(analytic, numeric, floor=1e-6).max() < 1e-4


def test_gradient_grayscale_shape():
    rng = np.random.default_rng(8)
    a, b = rng.uniform(size=(6, 7)), rng.uniform(size=(6, 7))
    g = sp.freq_loss_backward(a, b, 30, sched((6, 7)))
    assert g.shape == (6, 7)
    numeric = central_difference(lambda x: sp.freq_loss(x, b, 30, sched((6, 7)))[0], a, 1e-5)
    assert rel_err(g, numeric, floor=1e-6).max() < 1e-4


def test_doubling_low_weight_doubles_low_gradient():
    rng = np.random.default_rng(9)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    g1 = sp.freq_loss_backward(a, b, 5, sched((8, 8), w_low=0.5, w_high=0.0))
    g2 = sp.freq_loss_backward(a, b, 5, sched((8, 8), w_low=1.0, w_high=0.0))
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-15)


def test_log_amplitude_image_peak():
    img = np.full((9, 12, 3), 0.5)
    heat = sp.log_amplitude_image(img)
    assert heat.shape == (9, 12)
    assert np.unravel_index(np.argmax(heat), heat.shape) == (4, 6)
