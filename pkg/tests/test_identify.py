import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsid.identify import (
    Classification,
    ConfigMismatchError,
    IdentificationConfig,
    IdentificationResult,
    assign_and_identify,
    characterize,
    classify,
    eie,
)
from memsid.peak_detect import Peak, find_peaks, refine_lorentzian
from memsid.plate_model import StressState, modal_frequencies
from memsid.response_synth import AcquisitionSpec, DefectSpec, DieTruth, synthesize
from memsid.surrogate import evaluate

WT = IdentificationConfig.wafer_test()
CH = IdentificationConfig.characterization()


def forward(design, z, s, k):
    return [f for _, f in modal_frequencies(design.geometry.with_thickness(z), design.material, StressState(s), k)]


def peaks_at(freqs):
    return [Peak(f, 1.0) for f in sorted(set(freqs))]


# ---- EIE arithmetic


def test_eie_example_set():
    p = [[15.0e-6], [15.2e-6], [14.9e-6], [15.1e-6], [15.05e-6], [14.95e-6]]
    spread, normed = eie(p)
    assert spread[0] == pytest.approx(0.3e-6, rel=1e-12)
    assert normed[0] == pytest.approx(0.3 / 15.033333, rel=1e-6)
    assert normed[0] == pytest.approx(0.01996, abs=1e-5)


def test_eie_identical_and_zero_mean():
    assert eie([[1.0, 2.0]] * 4) == ((0.0, 0.0), (0.0, 0.0))
    spread, normed = eie([[-1.0], [1.0]])
    assert spread == (2.0,) and normed == (None,)
    with pytest.raises(ValueError):
        eie([[1.0]])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8), st.floats(-1e3, 1e3))
def test_eie_translation_consistent(values, c):
    a, na = eie([[v] for v in values])
    b, nb = eie([[v + c] for v in values])
    assert b[0] == pytest.approx(a[0], abs=1e-9)
    mean = np.mean(values) + c
    if nb[0] is not None:
        assert nb[0] == pytest.approx(b[0] / mean, rel=1e-9, abs=1e-12)


# ---- assignment


def test_noiseless_closed_loop_two_parameters(design, surrogate2):
    f = forward(design, 15.3e-6, 42e6, 4)
    res = assign_and_identify(peaks_at(f), surrogate2, CH)
    assert res.classification is Classification.VALID and not res.failure_bit
    assert res.param("z") == pytest.approx(15.3e-6, rel=1e-3)
    assert abs(res.param("s") - 42e6) <= 1e-3 * surrogate2.full_scale["s"]
    assert res.eie_of("z") < 0.01e-6
    assert res.assignment[1] == res.assignment[2]  # degenerate pair shares its peak


def test_spurious_peaks_are_skipped(design, surrogate2):
    f = forward(design, 15.3e-6, 42e6, 4)
    clean = assign_and_identify(peaks_at(f), surrogate2, CH)
    spurious = [0.5 * (f[0] + f[1]), 0.5 * (f[2] + f[3])]
    res = assign_and_identify(peaks_at(f + spurious), surrogate2, CH)
    assert res.n_peaks == 5
    assert res.assigned_freqs == clean.assigned_freqs
    assert res.mean_params == pytest.approx(clean.mean_params, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(12.5e-6, 17.5e-6))
def test_noiseless_closed_loop_thickness(design, surrogate1, z):
    res = assign_and_identify(peaks_at(forward(design, z, 50e6, 3)), surrogate1, WT)
    assert res.classification is Classification.VALID
    assert abs(res.param("z") - z) <= 1e-3 * z


def test_zero_peaks_type1(surrogate1):
    res = assign_and_identify([], surrogate1, WT)
    assert res.classification is Classification.TYPE1_NO_MEMBRANE
    assert res.failure_bit and not res.feasible


def test_config_mismatch(surrogate1, surrogate2):
    with pytest.raises(ConfigMismatchError):
        assign_and_identify([], surrogate1, CH)
    with pytest.raises(ConfigMismatchError):
        assign_and_identify([], surrogate2, WT)


def brute_force_best(peaks, sur, cfg):
    """Enumerate every order-preserving assignment directly."""
    f = np.array(sorted(p.frequency for p in peaks))
    K = cfg.mode_count_K
    group_partner = {m: g[0] for g in sur.degenerate_groups for m in g[1:]}
    best = np.inf
    for assign in itertools.product(range(len(f)), repeat=K):
        ok = all(
            assign[j] == assign[j - 1] if j in group_partner else assign[j] > assign[j - 1] for j in range(1, K)
        )
        if not ok:
            continue
        est = []
        for c in sur.combos:
            vals = evaluate(sur, c.index, [f[assign[m]] for m in c.modes]).values
            if any(not lo <= v <= hi for v, (lo, hi) in zip(vals, (cfg.parameter_ranges[n] for n in sur.params))):
                break
            est.append(vals)
        else:
            est = np.array(est)
            best = min(best, float(np.sum((est.max(0) - est.min(0)) / np.abs(est.mean(0)))))
    return best


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_selected_assignment_is_optimal(design, surrogate1, seed):
    rng = np.random.default_rng(seed)
    f = forward(design, rng.uniform(12.5e-6, 17.5e-6), 50e6, 3)
    f = [x * (1 + 2e-3 * rng.standard_normal()) for x in f]
    extra = list(rng.uniform(50e3, 400e3, rng.integers(0, 4)))
    peaks = peaks_at(f + extra)
    res = assign_and_identify(peaks, surrogate1, WT)
    ref = brute_force_best(peaks, surrogate1, WT)
    if not np.isfinite(ref):
        assert not res.feasible
        return
    p = np.array(res.per_combo_params)
    score = float(np.sum((p.max(0) - p.min(0)) / np.abs(p.mean(0))))
    assert score == pytest.approx(ref, rel=1e-9, abs=1e-15)


# ---- classification


def _result(eie_z, mean_z=15e-6):
    return IdentificationResult(
        params=("z",),
        n_peaks=3,
        assignment=(0, 1, 1),
        per_combo_params=((mean_z,),) * 3,
        mean_params=(mean_z,),
        eie=(eie_z,),
        eie_n=(eie_z / mean_z,),
    )


def test_eie_above_limit_is_type2_failure():
    peaks = [Peak(1.0, 1.0)] * 3
    assert classify(_result(0.3e-6), peaks, WT) is Classification.TYPE2_ASYMMETRIC
    assert classify(_result(0.2e-6), peaks, WT) is Classification.VALID
    assert classify(_result(0.2e-6, mean_z=19e-6), peaks, WT) is Classification.OUT_OF_RANGE


def test_asymmetric_die_flagged(design, surrogate1):
    f12 = forward(design, 15e-6, 50e6, 2)[1]
    t = DieTruth(design.geometry, StressState(50e6), DefectSpec.asymmetry(0.02), rng_seed=3)
    peaks = find_peaks(synthesize(t, AcquisitionSpec()))
    pair = [p.frequency for p in peaks if abs(p.frequency - f12) < 0.1 * f12]
    assert len(pair) == 2 and (max(pair) - min(pair)) / np.mean(pair) > 0.02
    res = assign_and_identify(peaks, surrogate1, WT)
    assert res.classification is Classification.TYPE2_ASYMMETRIC and res.failure_bit


def test_clean_die_valid(design, surrogate1):
    t = DieTruth(design.geometry, StressState(50e6), rng_seed=3)
    res = assign_and_identify(find_peaks(synthesize(t, AcquisitionSpec())), surrogate1, WT)
    assert res.classification is Classification.VALID and not res.failure_bit


def test_split_pair_assigned_apart_is_type2():
    peaks = [Peak(1.0, 1.0)] * 3
    r = _result(0.01e-6)
    assert classify(replace(r, split=0.02), peaks, WT) is Classification.TYPE2_ASYMMETRIC
    assert classify(replace(r, split=0.004), peaks, WT) is Classification.VALID


def test_shared_peak_with_strong_neighbour_is_split(design, surrogate1):
    f = forward(design, 15e-6, 50e6, 4)
    del f[2]  # f11, the degenerate f12 = f21, f22
    partner = f[1] * 1.012
    strong = [Peak(f[0], 1.0), Peak(f[1], 0.8), Peak(partner, 0.6), Peak(f[2], 0.5)]
    res = assign_and_identify(strong, surrogate1, WT)
    assert res.split == pytest.approx(0.012, rel=0.01)
    assert res.classification is Classification.TYPE2_ASYMMETRIC
    # a weak spurious line next to the pair is not a split partner
    weak = [Peak(f[0], 1.0), Peak(f[1], 0.8), Peak(partner, 0.05), Peak(f[2], 0.5)]
    res = assign_and_identify(weak, surrogate1, WT)
    assert res.split is None and res.classification is Classification.VALID
    # nor is a strong line outside the split window
    far = [Peak(f[0], 1.0), Peak(f[1], 0.8), Peak(f[1] * 1.08, 0.8), Peak(f[2], 0.5)]
    assert assign_and_identify(far, surrogate1, WT).split is None


def test_failure_bit_iff_invalid_or_limit(design, surrogate1):
    rng = np.random.default_rng(11)
    seen = set()
    for k in range(40):
        defect = [DefectSpec(), DefectSpec.asymmetry(0.01), DefectSpec.no_membrane()][k % 3]
        z = rng.uniform(11e-6, 19e-6)
        t = DieTruth(design.geometry.with_thickness(z), StressState(50e6), defect, rng_seed=k)
        res = assign_and_identify(find_peaks(synthesize(t, AcquisitionSpec())), surrogate1, WT)
        limit = any(e > WT.max_eie[n] for n, e in zip(res.params, res.eie))
        assert res.failure_bit == (res.classification is not Classification.VALID or limit)
        seen.add(res.classification)
    assert len(seen) >= 3


def test_mean_eie_grows_with_jitter(design, surrogate1):
    # sub-bin refinement: with bare local maxima the 244 Hz bins, not the
    # jitter, dominate the spread at sigma = 1e-4
    means = []
    for sigma in (1e-4, 5e-4, 2e-3):
        acq = AcquisitionSpec(freq_jitter_sigma=sigma)
        vals = []
        for seed in range(100):
            t = DieTruth(design.geometry, StressState(50e6), rng_seed=seed)
            resp = synthesize(t, acq)
            peaks = [refine_lorentzian(resp, p) for p in find_peaks(resp)]
            vals.append(assign_and_identify(peaks, surrogate1, WT).eie_of("z"))
        means.append(np.mean(vals))
    assert means[0] <= means[1] <= means[2]


# ---- characterization


def test_characterization_recovers_stress(design, surrogate2):
    results = []
    rng = np.random.default_rng(2)
    for seed in range(24):
        z = 15e-6 * (1 + 0.01 * rng.standard_normal())
        t = DieTruth(design.geometry.with_thickness(z), StressState(50e6), rng_seed=seed)
        results.append(assign_and_identify(find_peaks(synthesize(t, AcquisitionSpec())), surrogate2, CH))
    rep = characterize(results, CH)
    assert rep.calibrated_stress == pytest.approx(50e6, rel=0.02)
    assert rep.n_used >= 20


def test_identical_noiseless_dies_give_zero_limit(design, surrogate2):
    res = assign_and_identify(peaks_at(forward(design, 15e-6, 50e6, 4)), surrogate2, CH)
    rep = characterize([res] * 12, CH)
    assert rep.recommended_max_eie["z"] < 0.01e-6


def test_characterization_median_robust_to_outlier(design, surrogate2):
    good = assign_and_identify(peaks_at(forward(design, 15e-6, 50e6, 4)), surrogate2, CH)
    bad = assign_and_identify(peaks_at(forward(design, 15e-6, 90e6, 4)), surrogate2, CH)
    rep = characterize([good] * 19 + [bad], CH)
    assert rep.calibrated_stress == good.param("s")


def test_characterization_requires_enough_dies(design, surrogate2):
    res = assign_and_identify(peaks_at(forward(design, 15e-6, 50e6, 4)), surrogate2, CH)
    with pytest.raises(ValueError):
        characterize([res] * 11, CH)
    with pytest.raises(ConfigMismatchError):
        characterize([res] * 12, WT)


@pytest.mark.parametrize(
    "kw",
    [
        dict(parameter_ranges={"z": (2.0, 1.0)}),
        dict(max_eie={"z": 0.0}),
        dict(max_eie_n=-1.0),
        dict(mode_count_K=0),
        dict(degenerate_split_window=0.004),
        dict(degenerate_split_min_ratio=0.0),
    ],
)
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        IdentificationConfig(**kw)
