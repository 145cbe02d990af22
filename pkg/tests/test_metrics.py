# -*- coding: utf-8 -*-
import csv
import math

import numpy as np
import pytest
from scipy.special import expit

from asdl.config import loadConfig
from asdl.exceptions import BadRequest, SizeError, UnknownType
from asdl.metrics import (CALIBRATED, DEG2PX, PINHOLE, FrameSet, MetricsReport, ToleranceSpec, classifyFrames,
                          detectionError, evaluate, plotPrCurves, prCurveAndAp, pxDegConvert, sigmoidThresholds,
                          summaryMetrics, teacherAsPrediction, vocAp, writePrCsv)

from .conftest import WIDTH, dense_track


def _crafted():
    gt = dense_track([1, 1, 1, 0, 0], [0.5, 0.5, 0.5, math.nan, math.nan], name="gt")
    confidence = [0.9, 0.9, 0.2, 0.7, 0.1]
    x = [0.5, 0.5 + 200 / WIDTH, math.nan, 0.3, math.nan]
    pred = dense_track(np.array(confidence) >= 0.5, x, confidence, name="pred")
    return pred, gt


def _offset_pair(pixels=40.0, numFrames=60):
    active = np.arange(numFrames) % 4 < 2
    x = np.linspace(0.2, 0.7, numFrames)
    gt = dense_track(active, x, name="gt")
    pred = dense_track(active, x + pixels / WIDTH, active.astype(float), name="offset")
    return pred, gt


def test_metrics_tolerance_calibrated():
    tol = ToleranceSpec.calibrated(2.0)
    assert tol.pixels == pytest.approx(89.0)
    assert tol.source == CALIBRATED
    assert tol.name == "2deg"
    assert ToleranceSpec.calibrated(5.0).pixels == pytest.approx(222.5)
    with pytest.raises(BadRequest):
        ToleranceSpec(0.0, 10.0)


def test_metrics_tolerance_from_config(desk, camera):
    tolerances = ToleranceSpec.fromConfig(desk, camera)
    assert [t.source for t in tolerances] == [PINHOLE, PINHOLE]
    assert tolerances[0].pixels == pytest.approx(82.1, abs=0.2)
    with pytest.raises(BadRequest):
        ToleranceSpec.fromConfig(desk)
    config = loadConfig(preset="full")
    assert [t.pixels for t in ToleranceSpec.fromConfig(config)] == pytest.approx([89.0, 222.5])
    config.setValue("eval.conversion", "fisheye")
    with pytest.raises(UnknownType):
        ToleranceSpec.fromConfig(config)


def test_metrics_px_deg_convert():
    tol = ToleranceSpec.calibrated(2.0)
    assert pxDegConvert(89, tol) == pytest.approx(2.0)
    assert pxDegConvert(222, tol) == pytest.approx(4.99, abs=0.01)
    assert pxDegConvert(39, tol) == pytest.approx(0.88, abs=0.01)
    assert pxDegConvert(2.0, tol, DEG2PX) == pytest.approx(89.0)
    with pytest.raises(BadRequest):
        pxDegConvert(1.0, tol, "furlongs")


def test_metrics_sigmoid_thresholds():
    thresholds = sigmoidThresholds(3)
    assert thresholds == pytest.approx([expit(-8), 0.5, expit(8)])
    thresholds = sigmoidThresholds(101)
    assert len(thresholds) == 101
    assert np.all(np.diff(thresholds) > 0)
    assert thresholds[1] - thresholds[0] < thresholds[51] - thresholds[50]
    with pytest.raises(BadRequest):
        sigmoidThresholds(1)


def test_metrics_classify_frames():
    pred, gt = _crafted()
    counts = classifyFrames(pred, gt, 0.5, ToleranceSpec.calibrated(2.0))
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (1, 2, 1, 1)
    assert counts.precision == pytest.approx(1 / 3)
    assert counts.recall == pytest.approx(1 / 3)
    assert counts.f1 == pytest.approx(1 / 3)
    assert counts.distances == pytest.approx([0.0])
    wide = classifyFrames(pred, gt, 0.5, ToleranceSpec.calibrated(5.0))
    assert (wide.tp, wide.fp, wide.fn) == (2, 1, 1)


def test_metrics_classify_undefined_precision():
    pred, gt = _crafted()
    counts = classifyFrames(pred, gt, 0.95, ToleranceSpec.calibrated(2.0))
    assert counts.tp + counts.fp == 0
    assert math.isnan(counts.precision)
    assert counts.f1 == 0.0


def test_metrics_align():
    pred, gt = _crafted()
    short = pred.select(np.arange(len(pred)) < 2)
    frames = FrameSet.align(short, gt)
    assert list(frames.confidence) == [0.9, 0.9, 0.0, 0.0, 0.0]
    longer = dense_track([1] * 6, [0.5] * 6)
    with pytest.raises(SizeError):
        FrameSet.align(longer, gt)


def test_metrics_voc_ap():
    assert vocAp([0.2, 0.5, 1.0], [1.0, 0.6, 0.5]) == pytest.approx(0.63)
    assert vocAp([1.0, 0.5, 0.2], [0.5, 0.6, 1.0]) == pytest.approx(0.63)
    assert vocAp([0.0, 0.5], [math.nan, 1.0]) == pytest.approx(0.5)


def test_metrics_offset_predictor():
    pred, gt = _offset_pair(40.0)
    tol = ToleranceSpec.calibrated(2.0)
    summary = summaryMetrics(pred, gt, tol)
    assert summary["detErr"] == 0.0
    assert summary["f1Best"] == pytest.approx(1.0)
    assert summary["aDPixels"] == pytest.approx(40.0, abs=1e-6)
    assert summary["aDDegrees"] == pytest.approx(40.0 / 44.5, abs=1e-6)
    _, ap = prCurveAndAp(pred, gt, tol)
    assert ap == pytest.approx(1.0)


def test_metrics_offset_beyond_tolerance():
    pred, gt = _offset_pair(120.0)
    summary = summaryMetrics(pred, gt, ToleranceSpec.calibrated(2.0))
    assert summary["detErr"] == 0.0
    assert summary["f1Best"] == 0.0
    assert summary["aDPixels"] is None
    assert summary["aDDegrees"] is None
    assert summaryMetrics(pred, gt, ToleranceSpec.calibrated(5.0))["aDPixels"] == pytest.approx(120.0, abs=1e-6)


def test_metrics_fixed_ad_threshold():
    pred, gt = _crafted()
    tol = ToleranceSpec.calibrated(5.0)
    summary = summaryMetrics(pred, gt, tol, adThreshold=0.5)
    assert summary["aDPixels"] == pytest.approx(100.0, abs=1e-6)


def test_metrics_detection_error():
    pred, gt = _crafted()
    assert detectionError(pred, gt) == pytest.approx(2 / 5)
    assert detectionError(pred, gt, threshold=0.05) == pytest.approx(2 / 5)
    assert math.isnan(detectionError(FrameSet([], [], [], []), None))


def test_metrics_ap_needs_active_frames():
    silent = dense_track([0, 0, 0], [math.nan] * 3)
    with pytest.raises(BadRequest):
        prCurveAndAp(silent, silent, ToleranceSpec.calibrated(2.0))


def test_metrics_evaluate_pools_sequences():
    tol = ToleranceSpec.calibrated(2.0)
    good, gtA = _offset_pair(10.0)
    bad, gtB = _offset_pair(300.0)
    silent = dense_track([0] * 10, [math.nan] * 10, name="silent")
    report = evaluate([("a", good, gtA), ("b", bad, gtB), ("c", silent, silent)], tol, k=21, label="cell")
    assert set(report.perSequence) == {"a", "b", "c"}
    assert report.perSequence["a"]["f1Best"] == pytest.approx(1.0)
    assert report.perSequence["b"]["aDPixels"] is None
    assert report.perSequence["c"]["ap"] is None
    assert report.recall == pytest.approx(0.5)
    assert report.aDPixels == pytest.approx(10.0, abs=1e-6)
    assert len(report.points) == 21
    assert report.label == "cell"


def test_metrics_teacher_as_prediction():
    track = dense_track([1, 1, 0], [0.4, math.nan, math.nan], name="asc")
    pred = teacherAsPrediction(track)
    assert list(pred.confidence) == [1.0, 0.0, 0.0]
    assert list(pred.active) == [True, False, False]
    assert pred.name == "asc-as-prediction"


def test_metrics_report_from_dict():
    pred, gt = _offset_pair(40.0)
    report = evaluate([("a", pred, gt)], ToleranceSpec.calibrated(2.0), k=11, label="cell")
    data = report.toDict()
    rebuilt = MetricsReport.fromDict(data)
    assert rebuilt.ap == report.ap
    assert rebuilt.f1Best == report.f1Best
    assert rebuilt.tolerance.pixels == report.tolerance.pixels
    assert [p.threshold for p in rebuilt.points] == [p.threshold for p in report.points]
    assert rebuilt.toDict()["perSequence"] == data["perSequence"]


def test_metrics_write_pr_csv(tmp_path):
    pred, gt = _crafted()
    report = evaluate([("a", pred, gt)], ToleranceSpec.calibrated(2.0), k=5)
    path = writePrCsv(str(tmp_path / "pr.csv"), report)
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["threshold", "precision", "recall", "f1"]
    assert len(rows) == 6
    assert float(rows[3][0]) == pytest.approx(0.5)
    assert float(rows[3][1]) == pytest.approx(1 / 3)


def test_metrics_plot_is_stable(tmp_path):
    pred, gt = _offset_pair(40.0)
    report = evaluate([("a", pred, gt)], ToleranceSpec.calibrated(2.0), k=11)
    first = plotPrCurves(str(tmp_path / "a.svg"), {"student 2deg": report}, "cell")
    second = plotPrCurves(str(tmp_path / "b.svg"), {"student 2deg": report}, "cell")
    with open(first, "rb") as handle:
        data = handle.read()
    with open(second, "rb") as handle:
        assert handle.read() == data
    assert b"<svg" in data
