import math

import numpy as np
import pytest

from owsm_kit.features import (
    CmvnStats,
    FeatureMatrix,
    accumulate_cmvn,
    apply_cmvn,
    invert_cmvn,
    log_mel,
    mel_center_frequencies,
    mel_filterbank,
    num_frames,
    reduce_time_resolution,
    spec_augment,
)


def closed_form_centres(n=80, rate=16000):
    # equally spaced on the mel scale between 0 and Nyquist, endpoints excluded
    top = 2595 * math.log10(1 + (rate / 2) / 700)
    return [700 * (10 ** (top * (i + 1) / (n + 1) / 2595) - 1) for i in range(n)]


def tone(freq, seconds=1.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return 0.5 * np.sin(2 * np.pi * freq * t)


def test_thirty_seconds_gives_2998_frames():
    f = log_mel(np.zeros(480_000))
    assert f.frames.shape == (2998, 80)
    assert f.frame_shift == 0.01


def test_silence_is_log_floor():
    f = log_mel(np.zeros(1600))
    assert np.all(f.frames == np.log(1e-10))


def test_frame_count_formula(rng):
    for n in rng.integers(400, 50_000, size=100):
        assert log_mel(rng.normal(size=int(n))).num_frames == 1 + (int(n) - 400) // 160 == num_frames(int(n))


def test_too_short():
    with pytest.raises(ValueError):
        log_mel(np.zeros(399))


def test_centres_match_closed_form():
    assert np.allclose(mel_center_frequencies(), closed_form_centres(), rtol=0, atol=1e-9)


def test_filterbank_unit_peak_and_coverage():
    fb = mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb <= 1.0 + 1e-12)
    # the lowest triangles are narrower than one FFT bin but none is empty
    assert np.all(fb.max(axis=1) > 0.3)


@pytest.mark.parametrize("freq", [1000.0, 440.0, 3000.0])
def test_tone_peaks_in_predicted_bin(freq):
    centres = np.array(closed_form_centres())
    expected = int(np.argmin(np.abs(centres - freq)))
    energy = log_mel(tone(freq)).frames.mean(axis=0)
    assert int(np.argmax(energy)) == expected


def test_scaling_shifts_by_two_log_c(rng):
    audio = rng.normal(size=8000)
    base = log_mel(audio).frames
    scaled = log_mel(3.0 * audio).frames
    assert np.allclose(scaled - base, 2 * np.log(3.0), atol=1e-9)


def test_cmvn_pooled_mean_zero_var_one(rng):
    mats = [log_mel(rng.normal(scale=s, size=int(n))) for s, n in [(0.1, 4000), (1.0, 9000), (0.01, 2000)]]
    stats = accumulate_cmvn(mats)
    pooled = np.vstack([apply_cmvn(m, stats).frames for m in mats])
    assert np.allclose(pooled.mean(axis=0), 0, atol=1e-6)
    assert np.allclose(pooled.var(axis=0), 1, atol=1e-6)


def test_cmvn_merge_is_exact(rng):
    a = FeatureMatrix(rng.normal(size=(7, 80)))
    b = FeatureMatrix(rng.normal(size=(5, 80)))
    joined = CmvnStats.of(FeatureMatrix(np.vstack([a.frames, b.frames])))
    merged = CmvnStats.of(a) + CmvnStats.of(b)
    assert merged.count == joined.count
    assert np.allclose(merged.sum, joined.sum, rtol=0, atol=1e-12)
    assert np.allclose(merged.sum_sq, joined.sum_sq, rtol=0, atol=1e-12)


def test_cmvn_round_trip_and_json(rng):
    f = FeatureMatrix(rng.normal(loc=-5, scale=2, size=(50, 80)))
    s = accumulate_cmvn([f])
    assert np.allclose(invert_cmvn(apply_cmvn(f, s), s).frames, f.frames, atol=1e-6)
    s2 = CmvnStats.from_json(s.to_json())
    assert np.array_equal(s2.sum, s.sum) and s2.count == s.count


def test_constant_column_clamped(caplog):
    x = np.ones((10, 80))
    x[:, 1] = np.arange(10)
    out = apply_cmvn(FeatureMatrix(x), accumulate_cmvn([FeatureMatrix(x)]))
    assert np.all(out.frames[:, 0] == 0)
    assert "clamping" in caplog.text


def test_spec_augment(rng):
    f = FeatureMatrix(rng.normal(size=(200, 80)) + 5)
    assert np.array_equal(spec_augment(f, 0, 0, 0, 0).frames, f.frames)
    a, b = spec_augment(f, seed=3), spec_augment(f, seed=3)
    assert np.array_equal(a.frames, b.frames)
    untouched = a.frames != 0
    assert np.array_equal(a.frames[untouched], f.frames[untouched])

    one = spec_augment(f, n_time_masks=0, max_time_width=0, n_freq_masks=1, max_freq_width=10, seed=5).frames
    zero_cols = np.flatnonzero(np.all(one == 0, axis=0))
    assert len(zero_cols) <= 10
    if len(zero_cols):
        assert np.all(np.diff(zero_cols) == 1)
    assert np.array_equal(one != 0, np.broadcast_to(~np.isin(np.arange(80), zero_cols), one.shape))

    with pytest.raises(ValueError):
        spec_augment(f, max_freq_width=81)


def test_reduction():
    f = log_mel(np.zeros(480_000))
    r4 = reduce_time_resolution(f, 4)
    assert r4.frames.shape == (749, 320)
    assert math.isclose(r4.frame_shift, 0.040)
    assert math.isclose(reduce_time_resolution(f, 2).frame_shift, 0.020)
    assert np.array_equal(reduce_time_resolution(f, 1).frames, f.frames)
    with pytest.raises(ValueError):
        reduce_time_resolution(f, 0)


def test_reduction_preserves_retained_energy(rng):
    f = FeatureMatrix(rng.normal(size=(103, 80)))
    r = reduce_time_resolution(f, 4)
    assert r.frames.sum() == pytest.approx(f.frames[:100].sum(), abs=1e-9)
    assert np.array_equal(r.frames[1, :80], f.frames[4])


@pytest.mark.parametrize("binary", [False, True])
def test_feature_files(tmp_path, rng, binary):
    f = FeatureMatrix(rng.normal(size=(6, 80)).astype(np.float32).astype(np.float64))
    path = tmp_path / ("f.bin" if binary else "f.json")
    f.save(path, binary=binary)
    g = FeatureMatrix.load(path)
    assert np.array_equal(g.frames, f.frames)
    if binary:
        raw = path.read_bytes()
        assert raw[:4] == b"OWFM" and len(raw) == 12 + 6 * 80 * 4
