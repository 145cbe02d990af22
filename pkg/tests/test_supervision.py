# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest

from asdl.exceptions import BadRequest, ParseError, SizeError, UnknownType
from asdl.geometry import CameraModel
from asdl.scene import SceneSpec, renderScene
from asdl.supervision import (ASC, ASC_SCREENED, GT, SUPERVISION_NAMES, TALKNET, VAD, EnergyVad, LabelTrack,
                              SupervisionConfig, TrainingTarget, VaTrack, fuse, groundTruthTrack,
                              ingestTeacherTrack, rasterizeVa, readVaTrack, screenFalsePositives, synthTeacher,
                              teacherTrack, writeTrack, writeVaTrack)

from .conftest import dense_track

HEADER = "frame,view,active,x_left_px,x_right_px,confidence\n"


def _write(tmp_path, text, name="teacher.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_supervision_ingest_box_centres(tmp_path):
    path = _write(tmp_path, HEADER + "0,5,1,1100,1348,0.9\n1,5,1,500,556,\n2,5,0,,,0.1\n3,5,1,,,\n")
    track = ingestTeacherTrack(path)
    assert list(track.frames) == [0, 1, 2, 3]
    assert track.xNorm[0] == 0.5
    assert track.xNorm[1] == pytest.approx(0.2157, abs=1e-4)
    assert list(track.active) == [True, True, False, False]
    assert np.isnan(track.xNorm[2]) and np.isnan(track.xNorm[3])
    assert list(track.confidence) == [0.9, 1.0, 0.1, 0.0]
    assert track.rejected == 0


def test_supervision_ingest_empty_file(tmp_path):
    assert len(ingestTeacherTrack(_write(tmp_path, ""))) == 0
    assert len(ingestTeacherTrack(_write(tmp_path, HEADER, "header.csv"))) == 0


def test_supervision_ingest_rejects_outside_image(tmp_path):
    path = _write(tmp_path, HEADER + "0,0,1,2500,2600,1\n1,0,1,100,200,1\n")
    track = ingestTeacherTrack(path)
    assert track.rejected == 1
    assert list(track.frames) == [1]


def test_supervision_ingest_parse_errors(tmp_path):
    with pytest.raises(ParseError) as err:
        ingestTeacherTrack(_write(tmp_path, "frame,x\n0,1\n"))
    assert err.value.lineno == 1
    with pytest.raises(ParseError) as err:
        ingestTeacherTrack(_write(tmp_path, HEADER + "0,0,1,100,200,1\n1,0,1,abc,200,1\n", "bad.csv"))
    assert err.value.lineno == 3
    assert "line 3" in str(err.value)
    with pytest.raises(ParseError):
        ingestTeacherTrack(_write(tmp_path, HEADER + "0,0,1,100,200\n", "short.csv"))
    with pytest.raises(ParseError):
        ingestTeacherTrack(_write(tmp_path, HEADER + "4,0,1,100,200,1\n4,0,0,,,0\n", "dup.csv"))


def test_supervision_writeTrack_ingest(tmp_path):
    track = dense_track([1, 0, 1], [0.25, 0.0, 0.75], view=2)
    path = str(tmp_path / "track.csv")
    writeTrack(path, track)
    loaded = ingestTeacherTrack(path)
    assert list(loaded.views) == [2, 2, 2]
    assert list(loaded.active) == [True, False, True]
    assert np.allclose(loaded.xNorm[[0, 2]], [0.25, 0.75])


def test_supervision_LabelTrack_validation():
    with pytest.raises(BadRequest):
        LabelTrack([0], [0], [False], [0.5])
    with pytest.raises(BadRequest):
        LabelTrack([0], [0], [True], [1.5])
    with pytest.raises(BadRequest):
        LabelTrack([1, 1], [0, 0], [False, False], [math.nan, math.nan])
    with pytest.raises(SizeError):
        LabelTrack([0, 1], [0], [True], [0.5])


def test_supervision_LabelTrack_dense_and_concat():
    left = dense_track([1, 0], [0.2, 0.0], view=3)
    right = dense_track([0, 1], [0.0, 0.8], view=1)
    both = LabelTrack.concat([left, right])
    assert both.viewIndices == [1, 3]
    assert list(both.views) == [1, 1, 3, 3]
    active, xNorm, confidence = both.dense(4, view=3)
    assert list(active) == [True, False, False, False]
    assert xNorm[0] == 0.2 and np.isnan(xNorm[1])
    assert list(confidence) == [1.0, 0.0, 0.0, 0.0]
    with pytest.raises(BadRequest):
        both.dense(4)
    with pytest.raises(SizeError):
        both.dense(1, view=1)


def test_supervision_rasterizeVa():
    assert not np.any(rasterizeVa(VaTrack([]), 30, 60))
    assert np.all(rasterizeVa(VaTrack([(0.0, 2.0)]), 30, 60) == 1)
    va = rasterizeVa(VaTrack([(0.5, 1.0)]), 30, 60)
    assert list(np.flatnonzero(va)) == list(range(15, 30))
    with pytest.raises(BadRequest):
        rasterizeVa(VaTrack([]), 30, 0)


def test_supervision_va_files(tmp_path):
    path = str(tmp_path / "va.csv")
    writeVaTrack(path, VaTrack([(0.25, 0.5), (1.0, 1.75)]))
    assert readVaTrack(path, VAD).segments == [(0.25, 0.5), (1.0, 1.75)]
    with pytest.raises(ParseError):
        readVaTrack(_write(tmp_path, "onset_s,offset_s\n0.5,1.0\n0.8,1.2\n", "overlap.csv"))


def test_supervision_SupervisionConfig_names():
    assert len(SUPERVISION_NAMES) == 8
    cfg = SupervisionConfig.fromName("asc(s)-vad")
    assert (cfg.locationSource, cfg.vaSource, cfg.name) == (ASC_SCREENED, VAD, "Asc(s)-Vad")
    assert SupervisionConfig.fromName("TalkNet-Gt").locationSource == TALKNET
    for name in SUPERVISION_NAMES:
        assert SupervisionConfig.fromName(name).name == name
    with pytest.raises(UnknownType) as err:
        SupervisionConfig.fromName("Face-Gt")
    assert "TalkNet-Vad" in str(err.value)


def test_supervision_fuse_cases():
    location = dense_track([1, 0, 1, 0], [0.7, 0.0, 0.3, 0.0])
    va = np.array([1, 1, 0, 0])
    target = fuse(location, va)
    # detected+voiced, missed+voiced, detected+silent, silent
    assert list(target.mask) == [1, 0, 0, 0]
    assert list(target.cHat) == [1, 1, 0, 0]
    assert target.xHat[0] == 0.7
    assert np.all(np.isnan(target.xHat[1:]))


def test_supervision_fuse_mask_bypass():
    location = dense_track([1, 0, 1, 0], [0.7, 0.0, 0.3, 0.0])
    target = fuse(location, np.array([1, 1, 0, 0]), SupervisionConfig(ASC, GT, maskBypass=True))
    assert list(target.mask) == [1, 0, 1, 0]
    assert list(target.cHat) == [1, 1, 1, 0]
    assert target.xHat[2] == 0.3


def test_supervision_fuse_subset_law():
    rng = np.random.default_rng(0)
    detected = rng.random(200) < 0.6
    location = dense_track(detected, rng.random(200))
    va = (rng.random(200) < 0.5).astype(int)
    target = fuse(location, va)
    masked = target.mask.astype(bool)
    assert np.all(masked <= va.astype(bool))
    assert np.all(masked <= detected)
    assert np.array_equal(target.cHat, va.astype(float))
    # Per-frame function: permuting frames permutes the target
    order = rng.permutation(200)
    permuted = fuse(dense_track(detected[order], location.xNorm[order]), va[order])
    assert np.array_equal(permuted.mask, target.mask[order])


def test_supervision_fuse_view_and_size():
    cameras = [CameraModel(offset=-1.0, view=4), CameraModel(offset=1.0, view=6)]
    spec = SceneSpec(2.0, [(0.0, 3.0)], [(0.5, 1.5)])
    gt = groundTruthTrack(spec, cameras, 30, 60)
    va = rasterizeVa(VaTrack(spec.voiceSegments), 30, 60)
    for camera in cameras:
        target = fuse(gt, va, view=camera.view)
        assert target.view == camera.view
        assert np.array_equal(target.mask, va.astype(float))
        assert target.xHat[30] == pytest.approx(camera.normalize(3.0))
    with pytest.raises(SizeError):
        fuse(gt, va[:40], view=4)


def test_supervision_fuse_rejects_short_track():
    location = dense_track(np.ones(50), np.full(50, 0.5))
    with pytest.raises(SizeError):
        fuse(location, np.ones(60))
    with pytest.raises(SizeError):
        fuse(location, np.ones(50), view=3)
    assert len(fuse(location, np.ones(50))) == 50


def test_supervision_TrainingTarget_invariants(tmp_path):
    with pytest.raises(BadRequest):
        TrainingTarget([math.nan], [1.0], [1.0])
    with pytest.raises(BadRequest):
        TrainingTarget([0.5], [0.0], [1.0])
    target = TrainingTarget([0.5, math.nan], [1.0, 0.0], [1.0, 0.0], view=7)
    path = str(tmp_path / "target.npz")
    with open(path, "wb") as handle:
        target.save(handle)
    loaded = TrainingTarget.load(path)
    assert loaded.view == 7
    assert len(loaded.slice(1, 2)) == 1


def test_supervision_screenFalsePositives():
    gt = dense_track([1, 1, 0, 0], [0.5, 0.5, 0.0, 0.0])
    track = dense_track([1, 0, 1, 0], [0.5, 0.0, 0.25, 0.0])
    screened = screenFalsePositives(track, gt)
    assert list(screened.active) == [True, False, False, False]
    assert screenFalsePositives(gt, gt).active.tolist() == gt.active.tolist()
    twice = screenFalsePositives(screened, gt)
    assert np.array_equal(twice.active, screened.active)
    assert np.array_equal(np.isnan(twice.xNorm), np.isnan(screened.xNorm))


def test_supervision_synthTeacher_strong_clean():
    gt = dense_track([1, 1, 0, 1, 0], [0.1, 0.2, 0.0, 0.4, 0.0])
    teacher = synthTeacher(gt, "strong", seed=1, occlusion=0.0, jitter=0.0)
    assert np.array_equal(teacher.active, gt.active)
    assert np.array_equal(teacher.xNorm[gt.active], gt.xNorm[gt.active])


def test_supervision_synthTeacher_weak_silent():
    gt = dense_track(np.zeros(50, dtype=bool), np.zeros(50))
    teacher = synthTeacher(gt, "weak", seed=2, fpRate=0.5)
    assert np.array_equal(teacher.active, teacher.injected["falsePositive"])
    assert np.all(teacher.xNorm[teacher.active] == 0.25)
    with pytest.raises(UnknownType):
        synthTeacher(gt, "medium")


def test_supervision_synthTeacher_fp_rate():
    active = np.arange(600) < 300
    gt = dense_track(active, np.full(600, 0.6))
    counts = [int(synthTeacher(gt, "weak", seed=s).injected["falsePositive"].sum()) for s in range(20)]
    # 300 silent frames at 20%: mean 60, sd ~6.9
    assert 50 <= np.mean(counts) <= 70
    assert all(30 <= c <= 90 for c in counts)


def test_supervision_screening_removes_injected_fps():
    active = np.arange(300) % 3 != 0
    gt = dense_track(active, np.full(300, 0.6))
    weak = synthTeacher(gt, "weak", seed=5, fpRate=0.1)
    screened = screenFalsePositives(weak, gt)
    assert weak.injected["falsePositive"].sum() > 0
    assert not np.any(screened.active & ~gt.active)
    assert np.array_equal(screened.active & gt.active, weak.active & gt.active)


def test_supervision_teacherTrack_sources():
    gt = dense_track(np.arange(90) % 2 == 0, np.full(90, 0.4))
    assert teacherTrack(gt, GT) is gt
    asc = teacherTrack(gt, ASC, seed=3)
    screened = teacherTrack(gt, ASC_SCREENED, seed=3)
    talknet = teacherTrack(gt, TALKNET, seed=3)
    assert np.any(asc.active & ~gt.active)
    assert not np.any(screened.active & ~gt.active)
    assert not np.any(talknet.active & ~gt.active)


def test_supervision_groundTruthTrack_per_view():
    spec = SceneSpec(1.0, [(0.0, -10.0), (1.0, 10.0)], [(0.0, 0.5)])
    cameras = CameraModel.views(_views_config(), [0, 10])
    gt = groundTruthTrack(spec, cameras, 30)
    assert len(gt) == 60
    assert gt.viewIndices == [0, 10]
    first = gt.forView(0)
    assert first.active.sum() == 15
    assert first.xNorm[0] == pytest.approx(cameras[0].normalize(spec.azimuthAt(0.5 / 30)))


def test_supervision_EnergyVad(geometry):
    spec = SceneSpec(2.0, [(0.0, 0.0)], [(0.6, 1.2)], seed=8)
    clip = renderScene(spec, geometry)
    vad = EnergyVad()
    track = vad.detect(clip.samples[geometry.centralMic], clip.sampleRate)
    assert track.source == VAD
    assert len(track.segments) == 1
    onset, offset = track.segments[0]
    assert onset == pytest.approx(0.6, abs=0.03)
    # Three hangover frames of 30 ms after the last voiced frame
    assert offset == pytest.approx(1.2 + 3 * 0.03, abs=0.031)


def test_supervision_EnergyVad_hangover():
    vad = EnergyVad(threshold=-40.0, frameSeconds=0.01, hangover=3)
    waveform = np.zeros(1000)
    waveform[200:300] = 0.5
    held = vad.frameActivity(waveform, 10000)
    assert list(np.flatnonzero(held)) == [2, 3, 4, 5]


def _views_config():
    from asdl.config import AsdlConfig, presetPath
    return AsdlConfig(presetPath("rig"))
