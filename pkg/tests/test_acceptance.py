# -*- coding: utf-8 -*-
import math
import os

import numpy as np
import pytest

from asdl import pipeline, utils
from asdl.features import FeatureIndex
from asdl.pipeline import ExperimentConfig

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]

# Desk corpus seen from the central camera only.
CORPUS = {"camera.views": "5"}
# Largest AP rise tolerated between adjacent SNRs.
NOISE_SLACK = 0.02


def _metrics(tmp_path, preset, name=None, **overrides):
    """ Runs every stage of <preset> on the acceptance corpus and returns ``(exp, {cell: metrics})``. """
    overrides = dict(CORPUS, **{key.replace("__", "."): value for key, value in overrides.items()})
    exp = ExperimentConfig.load(preset=preset, overrides=overrides, output=str(tmp_path / (name or preset)))
    pipeline.runAll(exp)
    return exp, {cell: utils.readJson(exp.path("eval", cell.id, "metrics.json")) for cell in exp.plan}


def _aD(metrics, tolerance="5deg"):
    value = metrics["student"][tolerance]["aDPixels"]
    return math.inf if value is None else value


def test_acceptance_gt_gt_detects_and_localizes(tmp_path):
    exp, results = _metrics(tmp_path, "desk")
    index = FeatureIndex(os.path.join(exp.featureDir("GCC-PHAT", math.inf), "index.json"))
    assert len(index.filter(split="train")) >= 40
    assert len(index.filter(split="test")) >= 10
    (student,) = [metrics["student"]["2deg"] for metrics in results.values()]
    assert student["detErr"] < 0.10
    assert student["ap"] >= 0.80


def test_acceptance_spatial_features_localize_best(tmp_path):
    _, results = _metrics(tmp_path, "modality", ablate__features="LOGMEL-1, LOGMEL-16, GCC-PHAT")
    aD = {}
    for cell, metrics in results.items():
        aD.setdefault(cell.kind, []).append(_aD(metrics))
    assert all(len(values) == 3 for values in aD.values())
    assert min(aD["LOGMEL-1"]) > max(aD["LOGMEL-16"])
    assert min(aD["LOGMEL-16"]) > max(aD["GCC-PHAT"])


def test_acceptance_temporal_context_helps(tmp_path):
    _, results = _metrics(tmp_path, "temporal")
    f1 = {}
    for cell, metrics in results.items():
        f1.setdefault(cell.variant, []).append(metrics["student"]["2deg"]["f1Best"])
    assert np.mean(f1["CRNN"]) >= np.mean(f1["CNN"]) >= np.mean(f1["CNN-F"])


def test_acceptance_voice_activity_gates_teacher_errors(tmp_path):
    _, gated = _metrics(tmp_path, "supervision", ablate__supervisions="Asc-Vad, Asc(s)-Gt")
    _, bypassed = _metrics(tmp_path, "supervision", "bypass", ablate__supervisions="Asc-Vad",
                           supervision__mask_bypass="true")
    byName = {cell.targetName: metrics for cell, metrics in gated.items()}
    (forced,) = bypassed.values()
    assert _aD(byName["Asc-Vad"], "2deg") < _aD(forced, "2deg")
    screened = byName["Asc_s_-Gt"]
    assert screened["student"]["2deg"]["recall"] > screened["teacher"]["2deg"]["recall"]


def test_acceptance_noise_degrades_gracefully(tmp_path):
    _, results = _metrics(tmp_path, "noise", ablate__snrs="inf, 20, 10, 0", eval__snrs="inf, 20, 10, 0")
    ap = [metrics["student"]["2deg"]["ap"] for cell, metrics in sorted(results.items(), key=lambda i: -i[0].snr)]
    assert len(ap) == 4
    for louder, quieter in zip(ap, ap[1:]):
        assert quieter <= louder + NOISE_SLACK
    assert ap[-1] >= ap[0] - 0.25
