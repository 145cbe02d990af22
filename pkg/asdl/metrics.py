# -*- coding: utf-8 -*-
import csv

import numpy as np
from scipy.special import expit

from asdl import log, utils
from asdl.exceptions import BadRequest, SizeError, UnknownType

CALIBRATED_PX_PER_DEGREE = 44.5
CALIBRATED = 'calibration'
PINHOLE = 'pinhole'
PX2DEG = 'px2deg'
DEG2PX = 'deg2px'


class ToleranceSpec(object):
    """ Localization tolerance in degrees and in pixels of an image <width> pixels wide.

        Parameters:
            degrees (float): Tolerance in degrees.
            pixels (float): The same tolerance in pixels.
            source (str): ``calibration`` or ``pinhole``, where the conversion came from.
            width (int): Image width used to turn normalized positions into pixels.
    """

    def __init__(self, degrees, pixels, source=CALIBRATED, width=2448):
        self.degrees = float(degrees)
        self.pixels = float(pixels)
        self.source = source
        self.width = int(width)
        if self.degrees <= 0 or self.pixels <= 0:
            raise BadRequest(f'Tolerance must be positive, got {self.degrees} deg / {self.pixels} px')

    def __repr__(self):
        return f'<ToleranceSpec:{self.name}:{self.pixels:.1f}px>'

    @property
    def name(self):
        return f'{self.degrees:g}deg'

    @property
    def pxPerDegree(self):
        return self.pixels / self.degrees

    @classmethod
    def calibrated(cls, degrees, pxPerDegree=CALIBRATED_PX_PER_DEGREE, width=2448):
        """ Tolerance converted with the calibrated 44.5 px per degree of the recorded rig. """
        return cls(degrees, degrees * pxPerDegree, CALIBRATED, width)

    @classmethod
    def pinhole(cls, degrees, camera):
        """ Tolerance converted through the pinhole projection of <camera>. """
        return cls(degrees, camera.pixelsForDegrees(degrees), PINHOLE, camera.width)

    @classmethod
    def fromConfig(cls, config, camera=None):
        """ Returns one spec per ``eval.tolerances`` entry using ``eval.conversion``. """
        degrees = config.getList('eval.tolerances', [2.0, 5.0], itemcast=float)
        conversion = config.get('eval.conversion', 'calibrated').lower()
        if conversion in ('calibrated', CALIBRATED):
            ratio = config.get('eval.px_per_degree', CALIBRATED_PX_PER_DEGREE, float)
            width = config.get('camera.width', 2448, int)
            return [cls.calibrated(d, ratio, width) for d in degrees]
        if conversion == PINHOLE:
            if camera is None:
                raise BadRequest('Pinhole tolerances need a camera')
            return [cls.pinhole(d, camera) for d in degrees]
        raise UnknownType(f'Unknown tolerance conversion: {conversion} (choose calibrated or pinhole)')

    def toDict(self):
        return {'degrees': self.degrees, 'pixels': self.pixels, 'source': self.source, 'width': self.width}


class FrameSet(object):
    """ Predictions aligned with ground truth, one entry per (frame, view) of the ground truth. """

    def __init__(self, confidence, xPred, active, xGt):
        self.confidence = np.asarray(confidence, dtype=np.float64)
        self.xPred = np.asarray(xPred, dtype=np.float64)
        self.active = np.asarray(active, dtype=bool)
        self.xGt = np.asarray(xGt, dtype=np.float64)
        if not len(self.confidence) == len(self.xPred) == len(self.active) == len(self.xGt):
            raise SizeError('Aligned columns have different lengths')

    def __len__(self):
        return len(self.active)

    @classmethod
    def align(cls, pred, gt):
        """ Pairs the records of <pred> with those of <gt> by ``(view, frame)``; ground truth
            records without a prediction count as confidence 0.

            Raises:
                :exc:`~asdl.exceptions.SizeError`: <pred> has a record the ground truth lacks.
        """
        if isinstance(pred, FrameSet):
            return pred
        index = {(int(v), int(f)): i for i, (f, v) in enumerate(zip(gt.frames, gt.views))}
        confidence, xPred = np.zeros(len(gt)), np.full(len(gt), np.nan)
        for f, v, conf, x in zip(pred.frames, pred.views, pred.confidence, pred.xNorm):
            i = index.get((int(v), int(f)))
            if i is None:
                raise SizeError(f'{pred} has frame {f} of view {v} which {gt} lacks')
            confidence[i], xPred[i] = conf, x
        return cls(confidence, xPred, gt.active, gt.xNorm)

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        return cls(*(np.concatenate([getattr(s, k) for s in sets]) for k in ('confidence', 'xPred', 'active', 'xGt')))


class FrameCounts(object):
    """ Frame classification at one threshold. """

    def __init__(self, tp, fp, fn, tn, numActive, distances=()):
        self.tp, self.fp, self.fn, self.tn = int(tp), int(fp), int(fn), int(tn)
        self.numActive = int(numActive)
        self.distances = np.asarray(distances, dtype=np.float64)

    def __repr__(self):
        return f'<FrameCounts:TP={self.tp}:FP={self.fp}:FN={self.fn}:TN={self.tn}>'

    @property
    def precision(self):
        positives = self.tp + self.fp
        return self.tp / positives if positives else np.nan

    @property
    def recall(self):
        return self.tp / self.numActive if self.numActive else np.nan

    @property
    def f1(self):
        p, r = self.precision, self.recall
        if np.isnan(p) or np.isnan(r) or p + r == 0:
            return 0.0
        return 2 * p * r / (p + r)


class PrPoint(object):
    """ Precision and recall at one threshold; <counts> is None when read back from JSON. """

    def __init__(self, threshold, counts=None, precision=None, recall=None):
        self.threshold = float(threshold)
        self.counts = counts
        if counts is not None:
            precision, recall = counts.precision, counts.recall
        self.precision = np.nan if precision is None else float(precision)
        self.recall = np.nan if recall is None else float(recall)
        p, r = self.precision, self.recall
        self.f1 = 0.0 if np.isnan(p) or np.isnan(r) or p + r == 0 else 2 * p * r / (p + r)

    def __repr__(self):
        return f'<PrPoint:{self.threshold:.4g}:P={self.precision:.3f}:R={self.recall:.3f}>'


class MetricsReport(object):
    """ Results of one prediction set at one tolerance.

        Attributes:
            points (list): :class:`PrPoint` per threshold, ascending.
            ap (float): Pascal VOC average precision.
            f1Best (float): Best F1 over the thresholds.
            bestThreshold (float): Threshold of the best F1.
            precision (float): Precision at the best F1.
            recall (float): Recall at the best F1.
            aDPixels (float): Mean TP distance in pixels, None without TPs.
            aDDegrees (float): The same in degrees.
            detErr (float): Active/silent error rate at threshold 0.5.
            tolerance (:class:`ToleranceSpec`): Tolerance used.
            perSequence (dict): Sequence name to the report dict of that sequence alone.
    """

    def __init__(self, points, ap, summary, tolerance, perSequence=None, label=''):
        self.points = points
        self.ap = float(ap)
        self.f1Best = summary['f1Best']
        self.bestThreshold = summary['bestThreshold']
        self.precision = summary['precision']
        self.recall = summary['recall']
        self.aDPixels = summary['aDPixels']
        self.aDDegrees = summary['aDDegrees']
        self.detErr = summary['detErr']
        self.tolerance = tolerance
        self.perSequence = perSequence or {}
        self.label = label

    def __repr__(self):
        return f'<MetricsReport:{self.label}:{self.tolerance.name}:AP={self.ap:.3f}>'

    def toDict(self):
        return {
            'label': self.label,
            'tolerance': self.tolerance.toDict(),
            'ap': self.ap,
            'f1Best': self.f1Best,
            'bestThreshold': self.bestThreshold,
            'precision': self.precision,
            'recall': self.recall,
            'aDPixels': self.aDPixels,
            'aDDegrees': self.aDDegrees,
            'detErr': self.detErr,
            'prPoints': [[p.threshold, p.precision, p.recall] for p in self.points],
            'perSequence': self.perSequence,
        }

    @classmethod
    def fromDict(cls, data):
        """ Rebuilds a report from :func:`toDict` output (JSON nulls become NaN precisions). """
        tol = data['tolerance']
        points = [PrPoint(t, precision=p, recall=r) for t, p, r in data['prPoints']]
        return cls(points, data['ap'], data, ToleranceSpec(tol['degrees'], tol['pixels'], tol['source'], tol['width']),
                   data.get('perSequence'), data.get('label', ''))


def sigmoidThresholds(k=101, zRange=8.0):
    """ Returns <k> thresholds ``expit(z)`` for ``z`` evenly spaced over [-zRange, zRange];
        they crowd towards 0 and 1.
    """
    if k < 2:
        raise BadRequest(f'Need at least two thresholds, got {k}')
    return expit(np.linspace(-zRange, zRange, k))


def pxDegConvert(value, spec, direction=PX2DEG):
    """ Converts a distance between pixels and degrees with the ratio of <spec>. """
    if direction == PX2DEG:
        return float(value) / spec.pxPerDegree
    if direction == DEG2PX:
        return float(value) * spec.pxPerDegree
    raise BadRequest(f'Unknown conversion direction: {direction}')


def classifyFrames(pred, gt, threshold, tol):
    """ Counts true and false positives at <threshold>. A frame is positive when its
        confidence is at least <threshold>; a positive is true when the ground truth is active
        and the predicted position lies within ``tol.pixels``. Every other positive is false,
        and every active frame that is not positive is a false negative.
    """
    frames = FrameSet.align(pred, gt)
    positive = frames.confidence >= threshold
    distance = np.abs(frames.xPred - frames.xGt) * tol.width
    withinTol = np.zeros(len(frames), dtype=bool)
    known = ~np.isnan(distance)
    withinTol[known] = distance[known] <= tol.pixels
    tp = positive & frames.active & withinTol
    return FrameCounts(tp.sum(), (positive & ~tp).sum(), (frames.active & ~positive).sum(),
                       (~positive & ~frames.active).sum(), frames.active.sum(), distance[tp])


def prCurve(pred, gt, tol, thresholds):
    frames = FrameSet.align(pred, gt)
    return [PrPoint(t, classifyFrames(frames, None, t, tol)) for t in thresholds]


def vocAp(recall, precision):
    """ Area under the monotone precision envelope: precision at recall ``r`` is replaced by
        the highest precision at any recall ``>= r``. Inputs need not be sorted; points with
        undefined precision are skipped.
    """
    recall, precision = np.asarray(recall, dtype=np.float64), np.asarray(precision, dtype=np.float64)
    keep = ~np.isnan(precision) & ~np.isnan(recall)
    order = np.argsort(recall[keep], kind='stable')
    mrec = np.concatenate(([0.0], recall[keep][order], [1.0]))
    mpre = np.concatenate(([0.0], precision[keep][order], [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    i = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def prCurveAndAp(pred, gt, tol, k=101):
    """ Returns ``(points, ap)`` over <k> sigmoid-spaced thresholds.

        Raises:
            :exc:`~asdl.exceptions.BadRequest`: The ground truth has no active frame.
    """
    frames = FrameSet.align(pred, gt)
    if not frames.active.any():
        raise BadRequest('Average precision is undefined without active ground truth frames')
    points = prCurve(frames, None, tol, sigmoidThresholds(k))
    ap = vocAp([p.recall for p in points], [p.precision for p in points])
    return points, ap


def detectionError(pred, gt, threshold=0.5):
    """ Fraction of frames whose active/silent decision at <threshold> is wrong. """
    frames = FrameSet.align(pred, gt)
    if not len(frames):
        return np.nan
    return float(np.mean((frames.confidence >= threshold) != frames.active))


def summaryMetrics(pred, gt, tol, k=101, adThreshold='f1', points=None):
    """ Returns ``{f1Best, bestThreshold, precision, recall, aDPixels, aDDegrees, detErr}``.
        ``aD`` is the mean pixel distance over true positives at the best-F1 threshold, or at
        a fixed threshold when <adThreshold> is a number; it is None without true positives.
    """
    frames = FrameSet.align(pred, gt)
    points = points or prCurve(frames, None, tol, sigmoidThresholds(k))
    best = max(points, key=lambda p: p.f1)
    counts = best.counts
    if adThreshold != 'f1':
        counts = classifyFrames(frames, None, float(adThreshold), tol)
    aDPixels = float(np.mean(counts.distances)) if counts.tp else None
    return {
        'f1Best': best.f1,
        'bestThreshold': best.threshold,
        'precision': utils.nanToNone(best.precision),
        'recall': utils.nanToNone(best.recall),
        'aDPixels': aDPixels,
        'aDDegrees': None if aDPixels is None else pxDegConvert(aDPixels, tol),
        'detErr': detectionError(frames, None),
    }


def evaluate(sequences, tol, k=101, adThreshold='f1', label=''):
    """ Scores several sequences at once. Counts are pooled over every frame of every
        sequence; each sequence is also scored alone for the per-sequence breakdown.

        Parameters:
            sequences (list): ``(name, pred, gt)`` triples of LabelTracks or FrameSets.
            tol (:class:`ToleranceSpec`): Tolerance.
    """
    aligned = [(name, FrameSet.align(pred, gt)) for name, pred, gt in sequences]
    pooled = FrameSet.concat(frames for _, frames in aligned)
    points, ap = prCurveAndAp(pooled, None, tol, k)
    perSequence = {}
    for name, frames in aligned:
        seqPoints = prCurve(frames, None, tol, sigmoidThresholds(k))
        seq = summaryMetrics(frames, None, tol, k, adThreshold, seqPoints)
        seq['ap'] = vocAp([p.recall for p in seqPoints], [p.precision for p in seqPoints]) \
            if frames.active.any() else None
        perSequence[name] = seq
    summary = summaryMetrics(pooled, None, tol, k, adThreshold, points)
    report = MetricsReport(points, ap, summary, tol, perSequence, label)
    log.info('%s: AP=%.3f F1=%.3f aD=%s DetErr=%.3f', report, report.ap, report.f1Best,
             'n/a' if report.aDPixels is None else f'{report.aDPixels:.1f}px', report.detErr)
    return report


def teacherAsPrediction(track):
    """ Scores a teacher track as a predictor: confidence 1 on detections, 0 elsewhere. """
    from asdl.supervision import LabelTrack
    active = track.active & ~np.isnan(track.xNorm)
    return LabelTrack(track.frames, track.views, active, np.where(active, track.xNorm, np.nan),
                      active.astype(np.float64), track.frameRate, f'{track.name}-as-prediction')


def writePrCsv(path, report):
    with utils.atomicWrite(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['threshold', 'precision', 'recall', 'f1'])
        for p in report.points:
            writer.writerow([repr(p.threshold), repr(p.precision), repr(p.recall), repr(p.f1)])
    return path


def plotPrCurves(path, reports, title=None):
    """ Saves the PR curves of <reports> (a label to MetricsReport dict) as an SVG file, with
        the best-F1 point of each curve marked. Output is byte-stable for identical inputs.
    """
    import matplotlib
    matplotlib.use('Agg')
    from matplotlib import pyplot as plt
    with matplotlib.rc_context({'svg.hashsalt': 'asdl', 'svg.fonttype': 'none'}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label, report in reports.items():
            recall = [p.recall for p in report.points if not np.isnan(p.precision)]
            precision = [p.precision for p in report.points if not np.isnan(p.precision)]
            line, = ax.plot(recall, precision, label=f'{label} (AP {report.ap:.2f})')
            if report.recall is not None and report.precision is not None:
                ax.plot([report.recall], [report.precision], 'o', color=line.get_color())
        ax.set_xlabel('Recall')
        ax.set_ylabel('Precision')
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.grid(True, alpha=0.3)
        if title:
            ax.set_title(title)
        ax.legend(loc='lower left', fontsize='small')
        tmppath = utils.atomicPath(path)
        fig.savefig(tmppath, format='svg', metadata={'Date': None})
        plt.close(fig)
    return utils.commitPath(tmppath, path)
