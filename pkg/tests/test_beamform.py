import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pahrcf.beamform import (
    METHODS,
    CovarianceEstimate,
    MVParams,
    beamform_components,
    beamform_image,
    beamform_images,
    coherence_factor,
    das,
    delay_and_align,
    estimate_covariance,
    hrcf,
    loaded_covariance,
    mv_output,
    mv_weights,
    smoothed_covariance,
)
from pahrcf.dsp import envelope
from pahrcf.geometry import AcquisitionParams, ArrayGeometry, ImagingGrid, compute_delay_table
from pahrcf.phantom import ChannelFrame, NoiseSpec, Phantom, PointSource, simulate_channels


def naive_covariance(block, sub_len):
    t, m = block.shape
    nsub = m - sub_len + 1
    r = np.zeros((sub_len, sub_len), dtype=complex)
    for n in range(t):
        for l in range(nsub):
            for p in range(sub_len):
                for q in range(sub_len):
                    r[p, q] += block[n, l + p] * np.conj(block[n, l + q])
    r /= t * nsub
    return r if np.iscomplexobj(block) else r.real


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * 1e-3 * np.eye(n)


def _cov(matrix, dl=1e-2):
    return loaded_covariance(matrix, MVParams(matrix.shape[0], 0, dl))


# ---------------------------------------------------------------- small fixture

GEOM = ArrayGeometry(16, 0.1e-3)
ACQ = AcquisitionParams(num_samples=1200)
GRID = ImagingGrid(-0.6e-3, 0.6e-3, 14.6e-3, 15.4e-3, 0.1e-3, 0.1e-3)
SOURCE = PointSource(0.2e-3, 15.0e-3)


@pytest.fixture(scope="module")
def frame():
    return simulate_channels(Phantom((SOURCE,)), GEOM, ACQ, NoiseSpec(30.0, 2))


@pytest.fixture(scope="module")
def delays():
    return compute_delay_table(GEOM, ACQ, GRID)


# ---------------------------------------------------------------- snapshot ops


def test_delay_and_align_node_and_midpoint():
    s = np.zeros((2, 1100))
    s[:, 1000], s[:, 1001] = 2.0, 4.0
    frame = ChannelFrame(s, AcquisitionParams(num_samples=1100))

    class T:
        pass

    t = T()
    t.delays = np.array([[[1000.0, 1000.5]]])
    t.valid_mask = np.array([[[True, True]]])
    t.pixel_samples = np.array([1000])
    np.testing.assert_array_equal(delay_and_align(frame, t, (0, 0)).values, [2.0, 3.0])
    t.delays = np.array([[[1099.5, 5000.0]]])
    t.valid_mask = np.array([[[True, False]]])
    np.testing.assert_array_equal(delay_and_align(frame, t, (0, 0)).values, [0.0, 0.0])


def test_das_examples():
    assert das(np.zeros(5)) == 0.0
    assert das(np.full(7, 2.5)) == pytest.approx(17.5)
    assert das(np.array([1.0, -2.0, 3.0])) == 2.0


def test_cf_examples():
    assert coherence_factor(np.full(9, -3.0)) == pytest.approx(1.0)
    x = np.zeros(12)
    x[4] = 7.0
    assert coherence_factor(x) == pytest.approx(1 / 12)
    assert coherence_factor(np.zeros(4)) == 0.0


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-1e6, 1e6)))
def test_cf_bounded_real(x):
    cf = coherence_factor(x)
    assert 0.0 <= cf <= 1.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64))
def test_cf_bounded_complex(seed, m):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=m) + 1j * rng.normal(size=m)
    assert 0.0 <= coherence_factor(x) <= 1.0 + 1e-12


# ---------------------------------------------------------------- covariance


def test_covariance_worked_example():
    r = smoothed_covariance(np.array([[1.0, 2.0, 3.0, 4.0]]), 2)
    np.testing.assert_allclose(r, [[14 / 3, 20 / 3], [20 / 3, 29 / 3]], rtol=1e-14)


def test_covariance_full_aperture_is_outer_product():
    x = np.random.default_rng(1).normal(size=6)
    np.testing.assert_allclose(smoothed_covariance(x[None], 6), np.outer(x, x), rtol=1e-14)


@pytest.mark.parametrize("kind", ["real", "complex"])
def test_covariance_matches_naive_loop(kind):
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = int(rng.integers(2, 17))
        L = int(rng.integers(1, min(8, m) + 1))
        t = 2 * int(rng.integers(0, 4)) + 1
        block = rng.normal(size=(t, m))
        if kind == "complex":
            block = block + 1j * rng.normal(size=(t, m))
        fast = smoothed_covariance(block, L)
        ref = naive_covariance(block, L)
        assert np.max(np.abs(fast - ref)) <= 1e-12 * np.max(np.abs(ref))
        np.testing.assert_allclose(fast, fast.conj().T, rtol=1e-12, atol=0)


def test_loaded_trace():
    r = random_spd(np.random.default_rng(2), 5)
    c = loaded_covariance(r, MVParams(5, 0, 0.07))
    assert np.trace(c.loaded) == pytest.approx((1 + 0.07 * 5) * np.trace(r), rel=1e-13)
    assert np.all(np.linalg.eigvalsh(c.loaded) > 0)


def test_window_clipped_at_record_start():
    # pixel two samples into the record: the window holds n = -2..5 (8 samples)
    s = np.random.default_rng(3).normal(size=(4, 64))
    frame = ChannelFrame(s, AcquisitionParams(num_samples=64))
    geom = ArrayGeometry(4, 1e-6)
    grid = ImagingGrid(0.0, 0.5e-7, 2 * 1540 / 50e6, 2.1 * 1540 / 50e6, 1e-7, 1e-7)
    t = compute_delay_table(geom, frame.acq, grid)
    t.delays[:] = 2.0
    cov = estimate_covariance(frame, t, (0, 0), MVParams(2, 5, 0.1))
    np.testing.assert_allclose(cov.matrix, naive_covariance(s[:, 0:8].T, 2), rtol=1e-13)


# ---------------------------------------------------------------- MV weights


def test_mv_weights_identity_and_diagonal():
    np.testing.assert_allclose(mv_weights(_cov(np.eye(4) * 0.5, 1.0)), 0.25, rtol=1e-14)
    c = CovarianceEstimate(np.diag([1.0, 3.0]), np.diag([1.0, 3.0]), 0.0)
    np.testing.assert_allclose(mv_weights(c), [0.75, 0.25], rtol=1e-14)


def test_mv_weights_optimal_against_feasible_perturbations():
    rng = np.random.default_rng(4)
    c = _cov(random_spd(rng, 8))
    w = mv_weights(c)
    assert abs(w.sum() - 1) < 1e-12
    base = w @ c.loaded @ w
    d = rng.normal(size=(10_000, 8))
    d -= d.mean(axis=1, keepdims=True)  # keeps sum(w + d) = 1
    d *= rng.uniform(1e-6, 1.0, size=(10_000, 1))
    v = w + d
    assert np.all(np.einsum("ij,jk,ik->i", v, c.loaded, v) >= base * (1 - 1e-12))


def test_mv_weights_degenerate():
    assert mv_weights(_cov(np.zeros((3, 3)))) is None


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_loading_moves_weights_toward_uniform(seed, n):
    r = random_spd(np.random.default_rng(seed), n)
    dist = [np.linalg.norm(mv_weights(_cov(r, dl)) - 1 / n) for dl in (1e-4, 1e-2, 1.0, 1e2, 1e4)]
    assert all(b <= a + 1e-12 for a, b in zip(dist, dist[1:]))


# ---------------------------------------------------------------- MV output, HRCF


def _flat_frame(values):
    m = len(values)
    s = np.zeros((m, 128))
    s[:, 50] = values
    frame = ChannelFrame(s, AcquisitionParams(num_samples=128))

    class T:
        pass

    t = T()
    t.delays = np.full((1, 1, m), 50.0)
    t.valid_mask = np.ones((1, 1, m), dtype=bool)
    t.pixel_samples = np.array([50])
    return frame, t


@pytest.mark.parametrize("L", [1, 3, 8])
def test_mv_output_constant_channels(L):
    frame, t = _flat_frame(np.full(8, 1.7))
    p = MVParams(L, 0)
    assert mv_output(frame, t, (0, 0), p) == pytest.approx(1.7, rel=1e-12)
    assert hrcf(frame, t, (0, 0), p) == pytest.approx(1.0, rel=1e-12)


def test_mv_output_zero():
    frame, t = _flat_frame(np.zeros(8))
    p = MVParams(4, 2)
    assert mv_output(frame, t, (0, 0), p) == 0.0
    assert hrcf(frame, t, (0, 0), p) == 0.0


def test_uniform_weights_collapse_to_das_and_cf():
    rng = np.random.default_rng(5)
    for _ in range(200):
        x = rng.normal(size=8)
        frame, t = _flat_frame(x)
        p = MVParams(8, 0)
        u = np.full(8, 1 / 8)
        assert mv_output(frame, t, (0, 0), p, weights=u) == pytest.approx(das(x) / 8, rel=1e-12)
        assert hrcf(frame, t, (0, 0), p, weights=u) == pytest.approx(coherence_factor(x), rel=1e-12)


def test_mvparams_defaults_and_validation():
    p = MVParams.default(128)
    assert (p.subarray_length, p.temporal_half_window, p.loading_constant) == (64, 5, 1 / 6400)
    for bad in (dict(subarray_length=0), dict(subarray_length=2, temporal_half_window=-1),
                dict(subarray_length=2, loading_constant=0.0)):
        with pytest.raises(ValueError):
            MVParams(**bad)
    with pytest.raises(ValueError):
        MVParams(9).check(8)


# ---------------------------------------------------------------- images


def test_zero_frame_gives_zero_images(delays):
    frame = ChannelFrame(np.zeros((16, 1200)), ACQ)
    for analytic in (False, True):
        for img in beamform_images(frame, delays, METHODS, MVParams(8), analytic).values():
            assert np.all(img.values == 0)


@pytest.mark.parametrize("analytic", [False, True])
def test_image_path_matches_pixel_functions(frame, delays, analytic):
    params = MVParams(6, 3)
    comps = beamform_components(frame, delays, params, analytic)
    f = frame.analytic() if analytic else frame
    for pix in [(0, 0), (4, 8), (4, 6), (7, 12), (2, 3)]:
        snap = delay_and_align(f, delays, pix)
        y_mv = mv_output(f, delays, pix, params)
        assert comps["das"][pix] == pytest.approx(das(snap), rel=1e-10, abs=1e-12)
        assert comps["cf"][pix] == pytest.approx(coherence_factor(snap), rel=1e-10, abs=1e-14)
        assert comps["mv"][pix] == pytest.approx(y_mv, rel=1e-8, abs=1e-12)
        assert comps["hrcf"][pix] == pytest.approx(hrcf(f, delays, pix, params), rel=1e-8, abs=1e-14)


@pytest.mark.parametrize("analytic", [False, True])
def test_single_source_argmax(analytic):
    geom = ArrayGeometry(64, 0.1e-3)
    grid = ImagingGrid(-2e-3, 2e-3, 13e-3, 17e-3, 0.1e-3, 0.1e-3)
    t = compute_delay_table(geom, ACQ, grid)
    frame = simulate_channels(Phantom((SOURCE,)), geom, ACQ, NoiseSpec())
    for m, img in beamform_images(frame, t, METHODS, MVParams(32), analytic).items():
        env = envelope(img).values
        iz, ix = np.unravel_index(np.argmax(env), env.shape)
        assert abs(grid.x[ix] - SOURCE.lateral) <= 2 * grid.lateral_step + 1e-12, m
        assert abs(grid.z[iz] - SOURCE.axial) <= 2 * grid.axial_step + 1e-12, m


@pytest.mark.parametrize("analytic", [False, True])
def test_das_linearity(frame, delays, analytic):
    other = simulate_channels(Phantom((PointSource(-0.3e-3, 14.8e-3),)), GEOM, ACQ, NoiseSpec(10.0, 9))
    mix = ChannelFrame(2.0 * frame.samples - 0.5 * other.samples, ACQ)
    img = lambda f: beamform_image(f, delays, "DAS", MVParams(8), analytic).values
    np.testing.assert_allclose(img(mix), 2.0 * img(frame) - 0.5 * img(other), atol=1e-10 * np.abs(img(frame)).max())


def test_cf_weighting_never_amplifies(frame, delays):
    imgs = beamform_images(frame, delays, ["DAS", "DAS+CF"], MVParams(8))
    assert np.all(np.abs(imgs["DAS+CF"].values) <= np.abs(imgs["DAS"].values) + 1e-15)


def test_unknown_method_rejected(frame, delays):
    with pytest.raises(ValueError):
        beamform_image(frame, delays, "MVDR", MVParams(8))
