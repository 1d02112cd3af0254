import numpy as np
import pytest

from memsid.plate_model import MembraneGeometry, StressState, modal_frequencies
from memsid.response_synth import (
    AcquisitionSpec,
    DefectKind,
    DefectSpec,
    DieTruth,
    effective_geometry,
    in_band_modes,
    lorentzian,
    synthesize,
)

GEOM = MembraneGeometry()


def truth(defect=DefectSpec(), seed=1, z=15e-6):
    return DieTruth(GEOM.with_thickness(z), StressState(50e6), defect, rng_seed=seed)


def test_asymmetry_is_area_preserving():
    g = effective_geometry(truth(DefectSpec.asymmetry(0.01)))
    assert g.side_a * 1e6 == pytest.approx(1313.0)
    assert g.side_b * 1e6 == pytest.approx(1287.1, abs=0.05)
    assert g.side_a * g.side_b == pytest.approx(GEOM.side_a * GEOM.side_b, rel=1e-14)


def test_effective_geometry_identity_and_missing():
    assert effective_geometry(truth()) == GEOM
    assert effective_geometry(truth(DefectSpec.no_membrane())) is None


def test_defect_spec_validation():
    with pytest.raises(ValueError):
        DefectSpec.asymmetry(-0.1)
    assert DefectSpec.no_membrane().is_defect and not DefectSpec().is_defect
    assert DefectSpec(DefectKind("asymmetry"), 0.02).ratio == 0.02


def test_single_noiseless_mode_peaks_at_nearest_bin():
    f11 = modal_frequencies(GEOM, truth().material, StressState(50e6), 1)[0][1]
    acq = AcquisitionSpec(f_min=20e3, f_max=120e3, bin_count=2001).noiseless()
    assert len(in_band_modes(truth(), acq)) == 1
    resp = synthesize(truth(), acq)
    for channel in resp.amplitude:
        assert np.argmax(channel) == np.argmin(np.abs(acq.freqs - f11))


def test_electrode_at_centre_suppresses_antisymmetric_modes():
    f12 = modal_frequencies(GEOM, truth().material, StressState(50e6), 2)[1][1]
    kw = dict(f_min=120e3, f_max=200e3, bin_count=801)
    near = np.abs(np.linspace(120e3, 200e3, 801) - f12) < 2e3
    centred = synthesize(truth(), AcquisitionSpec(electrode_position=(0.5, 0.5), **kw).noiseless())
    # only far tails of (1,1) and (2,2) remain
    assert centred.amplitude[:, near].max() < 1e-4
    off = synthesize(truth(), AcquisitionSpec(**kw).noiseless())
    assert off.amplitude[:, near].max() > 0.1


def test_determinism_and_seed_sensitivity():
    acq = AcquisitionSpec()
    a = synthesize(truth(seed=5), acq)
    b = synthesize(truth(seed=5), acq)
    c = synthesize(truth(seed=6), acq)
    np.testing.assert_array_equal(a.amplitude, b.amplitude)
    assert not np.array_equal(a.amplitude, c.amplitude)


def test_no_membrane_is_noise_only():
    acq = AcquisitionSpec()
    resp = synthesize(truth(DefectSpec.no_membrane()), acq)
    assert resp.amplitude.max() <= acq.noise_floor
    assert resp.amplitude.shape == (3, acq.bin_count)


def test_degenerate_partners_share_jitter():
    acq = AcquisitionSpec(f_min=120e3, f_max=220e3, bin_count=4001, spurious_peak_rate=0.0, noise_floor=0.0)
    resp = synthesize(truth(seed=9), acq)
    y = resp.combined()
    interior = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])) + 1
    assert interior.size == 1  # one merged peak, not two jittered apart


def test_lorentzian_half_width():
    assert lorentzian(1.0 + 0.1, 1.0, 0.1) == pytest.approx(0.5)
    assert lorentzian(1.0, 1.0, 0.1, 3.0) == 3.0


def test_csv_export(tmp_path):
    acq = AcquisitionSpec(bin_count=16)
    path = tmp_path / "r.csv"
    synthesize(truth(), acq).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "freq_hz,amp_point1,amp_point2,amp_point3"
    assert len(lines) == 17


@pytest.mark.parametrize(
    "kw",
    [dict(f_min=2e5, f_max=1e5), dict(bin_count=1), dict(quality_factor=0), dict(electrode_position=(1.2, 0.5))],
)
def test_invalid_acquisition(kw):
    with pytest.raises(ValueError):
        AcquisitionSpec(**kw)
