import math

import numpy as np
import pytest

from pahrcf.geometry import AcquisitionParams, ArrayGeometry, build_geometry
from pahrcf.phantom import (
    ChannelFrame,
    Cyst,
    NoiseSpec,
    Phantom,
    PointSource,
    build_scenario,
    clean_channels,
    pulse_tau,
    read_frame,
    simulate_channels,
    synthesize_pulse,
    write_frame,
)

ACQ = AcquisitionParams(num_samples=2048)
GEOM = ArrayGeometry(32, 0.1e-3)


def test_pulse_zero_and_odd():
    assert synthesize_pulse(ACQ, 0.0) == 0.0
    t = np.linspace(-200e-9, 200e-9, 41)
    np.testing.assert_allclose(synthesize_pulse(ACQ, -t), -synthesize_pulse(ACQ, t), atol=0)


def test_pulse_peak_by_grid_search():
    tau = pulse_tau(ACQ)
    t = np.linspace(-5 * tau, 5 * tau, 2_000_001)
    p = synthesize_pulse(ACQ, t)
    i = np.argmax(np.abs(p))
    assert abs(abs(t[i]) - tau) < 1e-5 * tau
    assert abs(p[i]) == pytest.approx(math.exp(-0.5) / tau, rel=1e-9)


def test_pulse_half_amplitude_band():
    # half-amplitude spectral width of the pulse equals bw * f0
    fs = 1e9
    t = np.arange(-4096, 4096) / fs
    mag = np.abs(np.fft.rfft(synthesize_pulse(ACQ, t), 1 << 20))
    f = np.fft.rfftfreq(1 << 20, 1 / fs)
    band = f[mag >= mag.max() / 2]
    assert band.max() - band.min() == pytest.approx(0.77 * 7e6, rel=1e-3)


def test_single_source_arrival_times():
    src = PointSource(0.7e-3, 20e-3)
    frame = simulate_channels(Phantom((src,)), GEOM, ACQ, NoiseSpec())
    arrival = np.hypot(GEOM.element_positions - src.lateral, src.axial) / ACQ.sound_speed * ACQ.sampling_frequency
    # the pulse is odd: its zero crossing sits between the two lobes at the arrival
    lobes = np.argmax(frame.samples, axis=1), np.argmin(frame.samples, axis=1)
    mid = (lobes[0] + lobes[1]) / 2
    assert np.all(np.abs(mid - arrival) <= 1.0)


def test_mirrored_sources_give_flipped_frame():
    ph = Phantom((PointSource(-1.3e-3, 18e-3), PointSource(1.3e-3, 18e-3)))
    s = simulate_channels(ph, GEOM, ACQ, NoiseSpec()).samples
    np.testing.assert_allclose(s, s[::-1], atol=1e-9 * np.abs(s).max())


def test_superposition():
    a, b = PointSource(0.0, 15e-3), PointSource(1e-3, 22e-3, amplitude=0.3)
    f = lambda *s: simulate_channels(Phantom(s), GEOM, ACQ, NoiseSpec()).samples
    np.testing.assert_allclose(f(a, b), f(a) + f(b), atol=1e-12 * np.abs(f(a)).max())


def test_amplitude_decays_as_one_over_r():
    peaks = []
    depths = np.array([10e-3, 20e-3, 40e-3])
    geom = ArrayGeometry(2, 0.1e-3)
    acq = AcquisitionParams(num_samples=4096)
    for z in depths:
        s = simulate_channels(Phantom((PointSource(geom.element_positions[0], z),)), geom, acq, NoiseSpec()).samples
        peaks.append(np.abs(s[0]).max())
    np.testing.assert_allclose(np.array(peaks) * depths, peaks[0] * depths[0], rtol=0.02)


def test_noise_std_calibration_0db():
    ph = Phantom((PointSource(0.0, 20e-3),))
    geom = ArrayGeometry(64, 0.1e-3)
    clean = simulate_channels(ph, geom, ACQ, NoiseSpec()).samples
    noisy = simulate_channels(ph, geom, ACQ, NoiseSpec(snr_db=0.0, seed=4))
    rms = np.sqrt(np.mean(clean**2))
    added = noisy.samples - clean
    assert added.size >= 1e5
    assert noisy.noise_std == pytest.approx(rms, rel=1e-12)
    assert np.std(added) == pytest.approx(rms, rel=0.02)


def test_determinism_and_seed_dependence():
    ph = Phantom(cysts=(Cyst(0.0, 15e-3, 1e-3),))
    f = lambda seed: simulate_channels(ph, GEOM, ACQ, NoiseSpec(40.0, seed)).samples
    assert np.array_equal(f(5), f(5))
    assert not np.array_equal(f(5), f(6))


def test_cyst_realisation_inside_disk():
    c = Cyst(1e-3, 12e-3, 2e-3)
    xs, zs, amps = Phantom(cysts=(c,)).realize(np.random.default_rng(0))
    assert len(xs) == math.ceil(50 * math.pi * 4)
    assert np.all(np.hypot(xs - 1e-3, zs - 12e-3) <= 2e-3)
    assert np.all(amps == 1.0)


@pytest.mark.parametrize(
    "bad",
    [PointSource(0, 10e-3, radius=0), PointSource(0, 10e-3, amplitude=-1), PointSource(0, -1e-3)],
)
def test_phantom_validation(bad):
    with pytest.raises(ValueError):
        Phantom((bad,))


def test_empty_phantom_rejected():
    with pytest.raises(ValueError):
        simulate_channels(Phantom(), GEOM, ACQ, NoiseSpec())


def test_frame_validation():
    with pytest.raises(ValueError):
        ChannelFrame(np.zeros((4, 10)), ACQ)
    bad = np.zeros((4, ACQ.num_samples))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ChannelFrame(bad, ACQ)


def test_scenarios():
    ph, noise, f = build_scenario("points-40db")
    z = [s.axial for s in ph.point_sources]
    assert len(z) == 11 and z[0] == pytest.approx(25e-3)
    np.testing.assert_allclose(np.diff(z), 5e-3)
    assert noise.snr_db == 40.0 and f == 1.0
    assert build_scenario("points-sos-error")[2] == 1.05
    assert build_scenario("points-0db")[1].snr_db == 0.0
    cy = build_scenario("cysts-40db")[0].cysts
    assert [c.radius for c in cy] == [4e-3, 4e-3]
    assert [c.axial for c in cy] == [20e-3, 29e-3]
    with pytest.raises(ValueError):
        build_scenario("nope")


def test_frame_roundtrip(tmp_path):
    frame = simulate_channels(Phantom((PointSource(0, 15e-3),)), GEOM, ACQ, NoiseSpec(20.0, 1))
    write_frame(frame, tmp_path / "f.bin")
    back = read_frame(tmp_path / "f.bin", template=ACQ)
    assert np.array_equal(back.samples, frame.samples)
    assert back.acq == ACQ
    (tmp_path / "g.bin").write_bytes((tmp_path / "f.bin").read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_frame(tmp_path / "g.bin")


def test_analytic_frame_real_part():
    frame = simulate_channels(Phantom((PointSource(0, 15e-3),)), GEOM, ACQ, NoiseSpec())
    a = frame.analytic()
    assert a.is_analytic
    np.testing.assert_allclose(a.samples.real, frame.samples, atol=1e-12 * np.abs(frame.samples).max())


def test_clean_channels_clips_at_record_end():
    acq = AcquisitionParams(num_samples=300)
    out = clean_channels(np.array([0.0]), np.array([9.2e-3]), np.array([1.0]), GEOM, acq)
    assert out.shape == (32, 300) and np.all(np.isfinite(out))
