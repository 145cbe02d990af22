# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest
from scipy import signal

from asdl.exceptions import BadRequest, ConfigError, ParseError, SizeError, UnknownType
from asdl.features import (GCC_PHAT, LOGMEL_1, LOGMEL_2, LOGMEL_16, SALSA_LITE, FeatureIndex, FeatureTensor,
                           NormStats, StftConfig, applyNormalization, chunkClip, extractFeatures, featureKind,
                           fitNormalization, gccPhatFeatures, logMel, maxLag, melBasis, numChannels,
                           readFeatureTensor, salsaLiteFeatures, stft, writeFeatureTensor)
from asdl.geometry import CameraModel
from asdl.scene import MultichannelClip, SceneSpec, renderScene

SAMPLE_RATE = 48000


def test_features_featureKind_aliases():
    assert featureKind("gcc-phat") == GCC_PHAT
    assert featureKind("Mono") == LOGMEL_1
    assert featureKind("Stereo") == LOGMEL_2
    assert featureKind("16mics") == LOGMEL_16
    assert featureKind("salsa-lite") == SALSA_LITE
    with pytest.raises(UnknownType):
        featureKind("MFCC")


def test_features_stft_shape_and_zero(stftcfg):
    spec = stft(np.zeros(96000), stftcfg)
    assert spec.shape == (960, 257)
    assert not np.any(spec)
    with pytest.raises(SizeError):
        stft(np.zeros(95999), stftcfg)


def test_features_stft_bin_centered_tone(stftcfg):
    t = np.arange(96000) / SAMPLE_RATE
    spec = stft(np.sin(2 * np.pi * 937.5 * t), stftcfg)
    assert np.all(np.argmax(np.abs(spec), axis=1) == 10)


def test_features_stft_impulse_matches_direct_dft(stftcfg):
    impulse = np.zeros(96000)
    impulse[0] = 1.0
    spec = stft(impulse, stftcfg)
    # Centred framing: the first frame holds the impulse at the window centre
    frame = np.zeros(512)
    frame[256] = 1.0
    direct = np.fft.rfft(signal.get_window("hann", 512) * frame)
    assert np.allclose(np.abs(spec[0]), np.abs(direct), atol=1e-9)


def test_features_stft_parseval(stftcfg):
    noise = np.random.default_rng(1).standard_normal(96000)
    spec = stft(noise, stftcfg)
    power = np.abs(spec) ** 2
    frameEnergy = (power[:, 0] + 2 * power[:, 1:-1].sum(axis=1) + power[:, -1]) / 512
    window = signal.get_window("hann", 512)
    expected = np.sum(noise ** 2) * np.sum(window ** 2) / stftcfg.hop
    assert frameEnergy.sum() == pytest.approx(expected, rel=0.01)


def test_features_logMel_floor_and_scaling(stftcfg):
    assert np.all(logMel(np.zeros((3, 257)), stftcfg) == np.log(1e-10))
    power = np.random.default_rng(2).uniform(0.5, 2.0, (4, 257))
    diff = logMel(2 * power, stftcfg) - logMel(power, stftcfg)
    assert np.allclose(diff, math.log(2.0))
    with pytest.raises(SizeError):
        logMel(np.zeros((3, 256)), stftcfg)


def test_features_logMel_tone_concentrated(stftcfg):
    power = np.zeros(257)
    power[10] = 1.0
    out = logMel(power, stftcfg)
    covering = np.flatnonzero(melBasis(SAMPLE_RATE, 512, 64)[:, 10] > 0)
    assert 1 <= len(covering) <= 2
    assert set(np.flatnonzero(out > math.log(1e-10))) == set(covering)


def test_features_maxLag(geometry, camera, stftcfg):
    assert maxLag(geometry, camera, stftcfg) == 29
    assert 2 * 29 + 1 <= 64
    assert maxLag(geometry, CameraModel(fov=0.0), stftcfg) == 0
    with pytest.raises(ConfigError):
        maxLag(geometry, camera, stftcfg, fullSphere=True)


def test_features_gccphat_broadside_peaks_at_zero_lag(broadside_clip, geometry, stftcfg):
    tensor = gccPhatFeatures(broadside_clip, geometry, stftcfg)
    assert tensor.shape == (16, 960, 64)
    assert tensor.kind == GCC_PHAT
    assert np.all(np.argmax(tensor.data[1:], axis=-1) == 32)
    assert np.all(np.abs(tensor.data[1:]) <= 1.0 + 1e-6)


def test_features_gccphat_lag_matches_tdoa(angled_clip, geometry, stftcfg):
    tensor = gccPhatFeatures(angled_clip, geometry, stftcfg)
    expected = 32 + round(geometry.tdoa(15.0, 8, 0) * SAMPLE_RATE)
    # Channel 8 pairs the reference with mic 8, the far end of the baseline
    lags = np.argmax(tensor.data[8], axis=-1)
    assert np.mean(lags == expected) >= 0.95


def test_features_gccphat_silent_frames(geometry, stftcfg):
    spec = SceneSpec(2.0, [(0.0, 10.0)], [(1.0, 2.0)], seed=5)
    tensor = gccPhatFeatures(renderScene(spec, geometry), geometry, stftcfg)
    # Frames 0..470 only see samples before 1 s
    assert np.allclose(tensor.data[1:, :470], 0.0)


def test_features_gccphat_azimuth_monotone(geometry, stftcfg):
    source = np.random.default_rng(7).standard_normal(96000)
    peaks = []
    for az in range(-20, 21, 5):
        clip = renderScene(SceneSpec(2.0, [(0.0, float(az))], [(0.0, 2.0)]), geometry, source)
        lags = np.argmax(gccPhatFeatures(clip, geometry, stftcfg).data[8], axis=-1)
        peaks.append(np.median(lags))
    assert all(a <= b for a, b in zip(peaks, peaks[1:])) or all(a >= b for a, b in zip(peaks, peaks[1:]))
    assert peaks[0] != peaks[-1]


def test_features_salsa_identical_channels(broadside_clip, geometry, stftcfg):
    tensor = salsaLiteFeatures(broadside_clip, geometry, stftcfg)
    assert tensor.shape == (16, 960, 64)
    assert np.all(tensor.data[1:] == 0.0)
    assert stftcfg.bins * stftcfg.binHz == 6000.0


def test_features_salsa_nipd_matches_path_difference(angled_clip, geometry, stftcfg):
    tensor = salsaLiteFeatures(angled_clip, geometry, stftcfg)
    expected = geometry.speedOfSound * geometry.tdoa(15.0, 8, 0)
    measured = np.median(tensor.data[8][:, 2:13])
    assert measured == pytest.approx(expected, rel=0.10)


def test_features_extractFeatures_shape_law(broadside_clip, geometry, stftcfg):
    for kind, channels in [(GCC_PHAT, 16), (SALSA_LITE, 16), (LOGMEL_16, 16), (LOGMEL_2, 2), (LOGMEL_1, 1)]:
        tensor = extractFeatures(broadside_clip, kind, geometry, stftcfg)
        assert tensor.shape == (channels, 960, 64)
        assert numChannels(kind, geometry) == channels
        assert np.all(np.isfinite(tensor.data))


def test_features_logmel_stereo_uses_stereo_mics(geometry, stftcfg):
    samples = np.zeros((16, 96000))
    samples[10] = np.random.default_rng(3).standard_normal(96000)
    clip = MultichannelClip(samples, SAMPLE_RATE, geometry)
    tensor = extractFeatures(clip, LOGMEL_2, geometry, stftcfg)
    assert np.all(tensor.data[0] > math.log(1e-10))
    assert np.all(tensor.data[1] == np.float32(math.log(1e-10)))


def test_features_FeatureTensor_validation():
    with pytest.raises(SizeError):
        FeatureTensor(np.zeros((960, 64)), GCC_PHAT)
    with pytest.raises(BadRequest):
        FeatureTensor(np.full((1, 4, 4), np.nan), LOGMEL_1)


def test_features_normalization_single_tensor():
    data = np.random.default_rng(0).normal(3.0, 2.0, (2, 100, 8))
    tensor = FeatureTensor(data, LOGMEL_2)
    out = applyNormalization(tensor, fitNormalization([tensor])).data.astype(np.float64)
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-5)
    assert np.allclose(out.std(axis=1), 1.0, atol=1e-5)


def test_features_normalization_known_values():
    low = FeatureTensor(np.zeros((1, 4, 2)), LOGMEL_1)
    high = FeatureTensor(np.full((1, 4, 2), 2.0), LOGMEL_1)
    stats = fitNormalization([low, high])
    assert np.all(stats.mean == 1.0)
    assert np.all(stats.std == 1.0)
    assert np.all(applyNormalization(low, stats).data == -1.0)
    assert np.all(applyNormalization(high, stats).data == 1.0)
    # Reduction order does not matter
    reverse = fitNormalization([high, low])
    assert np.array_equal(reverse.mean, stats.mean) and np.array_equal(reverse.std, stats.std)


def test_features_normalization_constant_bin():
    tensor = FeatureTensor(np.full((1, 4, 2), 3.0), LOGMEL_1)
    stats = fitNormalization([tensor])
    assert np.all(stats.std == 1e-8)
    assert np.all(applyNormalization(tensor, stats).data == 0.0)


def test_features_normalization_errors():
    with pytest.raises(BadRequest):
        fitNormalization([])
    with pytest.raises(BadRequest):
        fitNormalization([FeatureTensor(np.zeros((1, 4, 2)), LOGMEL_1), FeatureTensor(np.zeros((2, 4, 2)), LOGMEL_2)])
    stats = fitNormalization([FeatureTensor(np.zeros((1, 4, 2)), LOGMEL_1)])
    with pytest.raises(BadRequest):
        applyNormalization(FeatureTensor(np.zeros((2, 4, 2)), LOGMEL_2), stats)


def test_features_NormStats_save_load(tmp_path):
    stats = NormStats(np.ones((2, 3)), np.full((2, 3), 0.5), LOGMEL_2)
    path = str(tmp_path / "norm.npz")
    stats.save(path)
    loaded = NormStats.load(path)
    assert loaded.kind == LOGMEL_2
    assert np.array_equal(loaded.std, stats.std)


def test_features_chunkClip(geometry):
    cfg = StftConfig()
    clip = MultichannelClip(np.zeros((16, int(5.5 * SAMPLE_RATE))), SAMPLE_RATE, geometry, [(0.0, 5.5)])
    chunks = chunkClip(clip, cfg, hopSeconds=1.0)
    assert [start for start, _ in chunks] == [0.0, 1.0, 2.0, 3.0]
    padded = chunkClip(clip, cfg, hopSeconds=1.0, pad=True)
    assert [start for start, _ in padded] == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert all(chunk.numSamples == 96000 for _, chunk in padded)
    assert padded[-1][1].voiceSegments == [(0.0, 1.5)]
    with pytest.raises(BadRequest):
        chunkClip(clip, cfg, hopSeconds=0.0)


def test_features_feature_file(tmp_path):
    tensor = FeatureTensor(np.arange(24, dtype=np.float32).reshape(2, 3, 4), LOGMEL_2, "c0")
    path = str(tmp_path / "c0.bin")
    writeFeatureTensor(path, tensor)
    loaded = readFeatureTensor(path, sequence="seq000", start=1.0)
    assert loaded.kind == LOGMEL_2
    assert np.array_equal(loaded.data, tensor.data)
    assert (loaded.sequence, loaded.start) == ("seq000", 1.0)
    with open(path, "rb") as handle:
        raw = handle.read()
    with open(path, "wb") as handle:
        handle.write(raw[:-4])
    with pytest.raises(ParseError):
        readFeatureTensor(path)
    with open(path, "wb") as handle:
        handle.write(b"RIFF" + raw[4:])
    with pytest.raises(ParseError):
        readFeatureTensor(path)


def test_features_FeatureIndex(tmp_path):
    path = str(tmp_path / "index.json")
    index = FeatureIndex(path, GCC_PHAT)
    index.add("seq001_000", file="seq001_000.bin", sequence="seq001", start=0.0, split="test")
    index.add("seq000_000", file="seq000_000.bin", sequence="seq000", start=0.0, split="train")
    index.save()
    loaded = FeatureIndex(path)
    assert loaded.kind == GCC_PHAT
    assert len(loaded) == 2
    assert [cid for cid, _ in loaded.filter(split="train")] == ["seq000_000"]
    assert loaded.resolve("x.bin") == str(tmp_path / "x.bin")
