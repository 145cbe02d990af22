# -*- coding: utf-8 -*-
import csv
import math

import numpy as np

from asdl import log, utils
from asdl.exceptions import BadRequest, ParseError, SizeError, UnknownType
from asdl.scene import checkSegments

FRAME_RATE = 30
TEACHER_HEADER = ['frame', 'view', 'active', 'x_left_px', 'x_right_px', 'confidence']
VA_HEADER = ['onset_s', 'offset_s']

GT = 'GT'
VAD = 'VAD'
ASC = 'ASC'
ASC_SCREENED = 'ASC-screened'
TALKNET = 'TALKNET'
LOCATION_NAMES = {'Gt': GT, 'Asc(s)': ASC_SCREENED, 'Asc': ASC, 'TalkNet': TALKNET}
VA_NAMES = {'Gt': GT, 'Vad': VAD}
SUPERVISION_NAMES = ['Gt-Gt', 'Gt-Vad', 'Asc(s)-Gt', 'Asc(s)-Vad', 'Asc-Gt', 'Asc-Vad', 'TalkNet-Gt', 'TalkNet-Vad']
# Synthetic stand-ins for the teacher networks
TEACHER_QUALITY = {ASC: 'weak', ASC_SCREENED: 'weak', TALKNET: 'strong'}


class LabelTrack(object):
    """ Per-frame, per-view speaker labels: ground truth, teacher pseudo-labels or predictions.
        Stored column-wise; ``xNorm`` is NaN where no position is known.

        Parameters:
            frames (array): Video frame indices.
            views (array): Camera view of every record.
            active (array): Speaker active flag of every record.
            xNorm (array): Horizontal position normalized to [0, 1], NaN when absent.
            confidence (array): Optional per-record confidence (defaults to ``active``).
            frameRate (int): Video frame rate.
            name (str): Identifier used in logs.

        Raises:
            :exc:`~asdl.exceptions.BadRequest`: A position on an inactive record, a position outside
                [0, 1] or frame indices that do not strictly increase within a view.
    """

    def __init__(self, frames=(), views=(), active=(), xNorm=(), confidence=None, frameRate=FRAME_RATE,
                 name='track'):
        self.frames = np.asarray(frames, dtype=np.int64).reshape(-1)
        self.views = np.asarray(views, dtype=np.int64).reshape(-1)
        self.active = np.asarray(active, dtype=bool).reshape(-1)
        self.xNorm = np.asarray(xNorm, dtype=np.float64).reshape(-1)
        if confidence is None:
            confidence = self.active.astype(np.float64)
        self.confidence = np.asarray(confidence, dtype=np.float64).reshape(-1)
        self.frameRate = int(frameRate)
        self.name = name
        self.rejected = 0
        self._validate()

    def __repr__(self):
        return f'<LabelTrack:{self.name}:{len(self)}records>'

    def __len__(self):
        return len(self.frames)

    def _validate(self):
        n = len(self.frames)
        if not all(len(a) == n for a in (self.views, self.active, self.xNorm, self.confidence)):
            raise SizeError(f'{self.name}: label columns have different lengths')
        present = ~np.isnan(self.xNorm)
        if np.any(present & ~self.active):
            raise BadRequest(f'{self.name}: position given on an inactive frame')
        if np.any((self.xNorm[present] < 0) | (self.xNorm[present] > 1)):
            raise BadRequest(f'{self.name}: positions must lie in [0, 1]')
        for view in np.unique(self.views):
            if np.any(np.diff(self.frames[self.views == view]) <= 0):
                raise BadRequest(f'{self.name}: frame indices not strictly increasing in view {view}')

    @property
    def present(self):
        return ~np.isnan(self.xNorm)

    @property
    def viewIndices(self):
        return sorted(int(v) for v in np.unique(self.views))

    def select(self, mask, name=None):
        track = LabelTrack(self.frames[mask], self.views[mask], self.active[mask], self.xNorm[mask],
                           self.confidence[mask], self.frameRate, name or self.name)
        return track

    def forView(self, view):
        return self.select(self.views == view, f'{self.name}[{view}]')

    def dense(self, numFrames, view=None):
        """ Returns ``(active, xNorm, confidence)`` arrays of length <numFrames> for one view;
            frames without a record are inactive with confidence 0.

            Raises:
                :exc:`~asdl.exceptions.SizeError`: A record lies beyond <numFrames>.
        """
        if view is None:
            views = self.viewIndices
            if len(views) > 1:
                raise BadRequest(f'{self} holds several views; pass one')
            view = views[0] if views else 0
        mask = self.views == view
        frames = self.frames[mask]
        if len(frames) and (frames.min() < 0 or frames.max() >= numFrames):
            raise SizeError(f'{self} has frames outside 0..{numFrames - 1}')
        active = np.zeros(numFrames, dtype=bool)
        xNorm = np.full(numFrames, np.nan)
        confidence = np.zeros(numFrames)
        active[frames] = self.active[mask]
        xNorm[frames] = self.xNorm[mask]
        confidence[frames] = self.confidence[mask]
        return active, xNorm, confidence

    @classmethod
    def fromDense(cls, active, xNorm, view=0, confidence=None, frameRate=FRAME_RATE, name='track'):
        active = np.asarray(active, dtype=bool)
        return cls(np.arange(len(active)), np.full(len(active), view), active, xNorm, confidence, frameRate, name)

    @classmethod
    def concat(cls, tracks, name='track'):
        tracks = list(tracks)
        if not tracks:
            return cls(name=name)
        track = cls(np.concatenate([t.frames for t in tracks]), np.concatenate([t.views for t in tracks]),
                    np.concatenate([t.active for t in tracks]), np.concatenate([t.xNorm for t in tracks]),
                    np.concatenate([t.confidence for t in tracks]), tracks[0].frameRate, name)
        order = np.lexsort((track.frames, track.views))
        return track.select(order, name)


class VaTrack(object):
    """ Voice activity segments ``(onset_s, offset_s)`` from ground truth or a VAD. """

    def __init__(self, segments=(), source=GT):
        self.segments = [(float(on), float(off)) for on, off in segments]
        self.source = source
        checkSegments(self.segments, math.inf)

    def __repr__(self):
        return f'<VaTrack:{self.source}:{len(self.segments)}segments>'


class SupervisionConfig(object):
    """ One cell of the supervision matrix: where locations and voice activity come from.

        Parameters:
            locationSource (str): ``GT``, ``ASC``, ``ASC-screened`` or ``TALKNET``.
            vaSource (str): ``GT`` or ``VAD``.
            maskBypass (bool): Trust teacher detections for the confidence target too.
    """

    def __init__(self, locationSource=GT, vaSource=GT, maskBypass=False):
        if locationSource not in LOCATION_NAMES.values():
            raise UnknownType(f'Unknown location source: {locationSource}')
        if vaSource not in VA_NAMES.values():
            raise UnknownType(f'Unknown voice activity source: {vaSource}')
        self.locationSource = locationSource
        self.vaSource = vaSource
        self.maskBypass = bool(maskBypass)

    def __repr__(self):
        return f'<SupervisionConfig:{self.name}{":bypass" if self.maskBypass else ""}>'

    @property
    def name(self):
        location = {v: k for k, v in LOCATION_NAMES.items()}[self.locationSource]
        va = {v: k for k, v in VA_NAMES.items()}[self.vaSource]
        return f'{location}-{va}'

    @classmethod
    def fromName(cls, name, maskBypass=False):
        """ Parses a ``[Location]-[VA]`` name such as ``TalkNet-Vad``.

            Raises:
                :exc:`~asdl.exceptions.UnknownType`: Not one of the eight supervision names.
        """
        lookup = {n.lower(): n for n in SUPERVISION_NAMES}
        canonical = lookup.get(str(name).strip().lower())
        if canonical is None:
            raise UnknownType(f'Unknown supervision: {name} (choose from {", ".join(SUPERVISION_NAMES)})')
        location, va = canonical.rsplit('-', 1)
        return cls(LOCATION_NAMES[location], VA_NAMES[va], maskBypass)


class TrainingTarget(object):
    """ Per output frame regression target ``xHat`` (NaN when absent), confidence target
        ``cHat`` and regression mask, for one camera view.

        Raises:
            :exc:`~asdl.exceptions.BadRequest`: A masked frame without a position or with ``cHat = 0``.
    """

    def __init__(self, xHat, cHat, mask, view=0):
        self.xHat = np.asarray(xHat, dtype=np.float64).reshape(-1)
        self.cHat = np.asarray(cHat, dtype=np.float64).reshape(-1)
        self.mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        self.view = int(view)
        if not len(self.xHat) == len(self.cHat) == len(self.mask):
            raise SizeError('Target columns have different lengths')
        masked = self.mask > 0
        if np.any(masked & ((self.cHat != 1) | np.isnan(self.xHat))):
            raise BadRequest('Masked frames need a position and an active confidence target')

    def __repr__(self):
        return f'<TrainingTarget:view{self.view}:{len(self)}frames:{int(self.mask.sum())}masked>'

    def __len__(self):
        return len(self.mask)

    def slice(self, start, stop):
        return TrainingTarget(self.xHat[start:stop], self.cHat[start:stop], self.mask[start:stop], self.view)

    def save(self, handle):
        np.savez(handle, xHat=self.xHat, cHat=self.cHat, mask=self.mask, view=np.array(self.view))

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls(data['xHat'], data['cHat'], data['mask'], int(data['view']))


def ingestTeacherTrack(path, width=2448, frameRate=FRAME_RATE, name=None):
    """ Reads a teacher (or ground truth) label file with the header
        ``frame,view,active,x_left_px,x_right_px,confidence``. Bounding boxes are reduced to
        their normalized horizontal centre; rows with no box are inactive. Records whose centre
        falls outside the image are dropped and counted in ``track.rejected``.

        Parameters:
            path (str): CSV file to read.
            width (int): Image width in pixels.
            frameRate (int): Video frame rate of the file.

        Raises:
            :exc:`~asdl.exceptions.ParseError`: Malformed header or row, with its line number.
    """
    rows, rejected = [], 0
    with open(path, 'r', newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return LabelTrack(frameRate=frameRate, name=name or path)
        if [h.strip() for h in header] != TEACHER_HEADER:
            raise ParseError(f'{path}: expected header {",".join(TEACHER_HEADER)}', 1)
        for row in reader:
            lineno = reader.line_num
            if not row or not ''.join(row).strip():
                continue
            if len(row) != len(TEACHER_HEADER):
                raise ParseError(f'{path}: expected {len(TEACHER_HEADER)} fields, got {len(row)}', lineno)
            try:
                frame, view, active = int(row[0]), int(row[1]), utils.cast(bool, row[2])
                left = float(row[3]) if row[3].strip() else None
                right = float(row[4]) if row[4].strip() else None
                confidence = float(row[5]) if row[5].strip() else None
            except ValueError as err:
                raise ParseError(f'{path}: {err}', lineno) from None
            xNorm = math.nan
            if active and left is not None and right is not None:
                xNorm = (left + right) / 2.0 / width
                if not 0.0 <= xNorm <= 1.0:
                    rejected += 1
                    log.warning('%s line %d: box centre %.1f px outside the image, dropped',
                                path, lineno, xNorm * width)
                    continue
            elif left is None or right is None:
                active = False
            if confidence is None:
                confidence = 1.0 if active else 0.0
            rows.append((frame, view, active, xNorm, confidence, lineno))
    rows.sort(key=lambda r: (r[1], r[0]))
    for previous, current in zip(rows, rows[1:]):
        if previous[:2] == current[:2]:
            raise ParseError(f'{path}: duplicate record for frame {current[0]} view {current[1]}', current[5])
    if not rows:
        track = LabelTrack(frameRate=frameRate, name=name or path)
    else:
        frames, views, active, xNorm, confidence, _ = zip(*rows)
        track = LabelTrack(frames, views, active, xNorm, confidence, frameRate, name or path)
    track.rejected = rejected
    log.debug('Ingested %s (%d rejected)', track, rejected)
    return track


def writeTrack(path, track, width=2448):
    """ Writes <track> in the teacher label format; positions become zero-width boxes. """
    with utils.atomicWrite(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(TEACHER_HEADER)
        for frame, view, active, x, conf in zip(track.frames, track.views, track.active, track.xNorm,
                                                track.confidence):
            px = '' if np.isnan(x) else repr(float(x) * width)
            writer.writerow([int(frame), int(view), int(active), px, px, repr(float(conf))])
    return path


def readVaTrack(path, source=GT):
    """ Reads ``onset_s,offset_s`` voice activity segments.

        Raises:
            :exc:`~asdl.exceptions.ParseError`: Malformed row or overlapping segments.
    """
    segments = []
    with open(path, 'r', newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != VA_HEADER:
            raise ParseError(f'{path}: expected header {",".join(VA_HEADER)}', 1)
        for row in reader:
            if not row or not ''.join(row).strip():
                continue
            try:
                onset, offset = float(row[0]), float(row[1])
            except (ValueError, IndexError) as err:
                raise ParseError(f'{path}: {err}', reader.line_num) from None
            if offset <= onset or (segments and onset < segments[-1][1]):
                raise ParseError(f'{path}: segment ({onset}, {offset}) overlaps or is empty', reader.line_num)
            segments.append((onset, offset))
    return VaTrack(segments, source)


def writeVaTrack(path, track):
    with utils.atomicWrite(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(VA_HEADER)
        for onset, offset in track.segments:
            writer.writerow([repr(onset), repr(offset)])
    return path


def rasterizeVa(track, frameRate, numFrames):
    """ Returns a 0/1 vector: frame ``i`` is active when its midpoint ``(i + 0.5) / frameRate``
        falls in a segment, onset inclusive and offset exclusive.
    """
    if numFrames <= 0:
        raise BadRequest(f'numFrames must be positive, got {numFrames}')
    segments = track.segments if isinstance(track, VaTrack) else track
    midpoints = (np.arange(numFrames) + 0.5) / frameRate
    active = np.zeros(numFrames, dtype=bool)
    for onset, offset in segments:
        active |= (midpoints >= onset) & (midpoints < offset)
    return active.astype(np.int64)


def fuse(location, va, cfg=None, view=None, maskBypass=None):
    """ Builds the training target of one view from a location track and a per-frame voice
        activity vector. A frame is regressed only when voice is active and the location source
        detected the speaker; the confidence target is the voice activity alone, so teacher
        negatives never produce a silent target.

        With ``maskBypass`` teacher detections are trusted outright: they are regressed even on
        silent frames and also raise the confidence target.

        Raises:
            :exc:`~asdl.exceptions.SizeError`: The location track does not hold exactly one record per
                frame of <va> in the fused view.
    """
    va = np.asarray(va).astype(bool).reshape(-1)
    if maskBypass is None:
        maskBypass = cfg.maskBypass if cfg is not None else False
    if view is None:
        view = location.viewIndices[0] if len(location) else 0
    count = int(np.sum(location.views == view))
    if count != len(va):
        raise SizeError(f'{location} has {count} frames in view {view}, voice activity has {len(va)}')
    detected, xNorm, _ = location.dense(len(va), view)
    detected &= ~np.isnan(xNorm)
    if maskBypass:
        mask, cHat = detected, va | detected
    else:
        mask, cHat = va & detected, va
    xHat = np.where(mask, xNorm, np.nan)
    return TrainingTarget(xHat, cHat.astype(np.float64), mask.astype(np.float64), view)


def screenFalsePositives(track, gt):
    """ Removes detections on frames where <gt> is silent; frames missing from <gt> count as
        silent. Applying it twice gives the same track as applying it once.
    """
    gtActive = {(int(f), int(v)) for f, v, a in zip(gt.frames, gt.views, gt.active) if a}
    keep = np.array([(int(f), int(v)) in gtActive for f, v in zip(track.frames, track.views)], dtype=bool)
    falsePositive = track.active & ~keep
    active = track.active & keep
    xNorm = np.where(falsePositive, np.nan, track.xNorm)
    confidence = np.where(falsePositive, 0.0, track.confidence)
    log.debug('Screened %d false positives from %s', int(falsePositive.sum()), track)
    return LabelTrack(track.frames, track.views, active, xNorm, confidence, track.frameRate, f'{track.name}(s)')


def synthTeacher(gt, quality='strong', seed=0, occlusion=0.15, jitter=0.005, fpRate=0.20, distractor=0.25):
    """ Corrupts a ground truth track the way a face-based teacher would. Every quality drops
        detections on an <occlusion> fraction of active frames and jitters the rest; ``weak``
        also detects the distractor position on an <fpRate> fraction of silent frames.

        The returned track carries ``injected``: a dict with the boolean masks ``occluded`` and
        ``falsePositive`` over its records.
    """
    if quality not in ('strong', 'weak'):
        raise UnknownType(f'Unknown teacher quality: {quality} (choose strong or weak)')
    rng = np.random.default_rng(seed)
    n = len(gt)
    draws, noise, fpDraws = rng.random(n), rng.standard_normal(n), rng.random(n)
    truePositive = gt.active & ~np.isnan(gt.xNorm)
    occluded = truePositive & (draws < occlusion)
    detected = truePositive & ~occluded
    xNorm = np.where(detected, np.clip(gt.xNorm + jitter * noise, 0.0, 1.0), np.nan)
    falsePositive = np.zeros(n, dtype=bool)
    if quality == 'weak':
        falsePositive = ~gt.active & (fpDraws < fpRate)
        xNorm = np.where(falsePositive, distractor, xNorm)
    active = detected | falsePositive
    track = LabelTrack(gt.frames, gt.views, active, xNorm, active.astype(np.float64), gt.frameRate,
                       f'{quality}-teacher')
    track.injected = {'occluded': occluded, 'falsePositive': falsePositive}
    log.debug('Synthesized %s: %d occluded, %d false positives', track, occluded.sum(), falsePositive.sum())
    return track


def groundTruthTrack(spec, cameras, frameRate=FRAME_RATE, numFrames=None):
    """ Returns the ground truth of a synthetic scene in every view of <cameras>: a record per
        frame, active by frame-midpoint voice activity, positioned by projecting the azimuth at
        the frame midpoint.
    """
    numFrames = numFrames or int(round(spec.duration * frameRate))
    active = rasterizeVa(VaTrack(spec.voiceSegments), frameRate, numFrames).astype(bool)
    azimuths = spec.azimuthAt((np.arange(numFrames) + 0.5) / frameRate)
    tracks = []
    for camera in cameras:
        xNorm = np.where(active, camera.normalize(azimuths), np.nan)
        tracks.append(LabelTrack.fromDense(active, xNorm, camera.view, frameRate=frameRate, name=spec.name))
    return LabelTrack.concat(tracks, f'{spec.name}-gt')


def teacherTrack(gt, source, seed=0, **kwargs):
    """ Returns the synthetic location track standing in for <source>. """
    if source == GT:
        return gt
    track = synthTeacher(gt, TEACHER_QUALITY[source], seed, **kwargs)
    if source == ASC_SCREENED:
        track = screenFalsePositives(track, gt)
    return track


class EnergyVad(object):
    """ Frame-energy voice activity detector with hangover.

        Parameters:
            threshold (float): Frame RMS level in dBFS above which a frame is voiced.
            frameSeconds (float): Analysis frame length.
            hangover (int): Frames kept voiced after the level drops below the threshold.
    """

    def __init__(self, threshold=-40.0, frameSeconds=0.03, hangover=3):
        self.threshold = float(threshold)
        self.frameSeconds = float(frameSeconds)
        self.hangover = int(hangover)

    def __repr__(self):
        return f'<EnergyVad:{self.threshold:g}dBFS>'

    @classmethod
    def fromConfig(cls, config):
        return cls(config.get('supervision.vad_threshold', -40.0, float),
                   config.get('supervision.vad_frame', 0.03, float),
                   config.get('supervision.vad_hangover', 3, int))

    def frameActivity(self, waveform, sampleRate):
        """ Returns the voiced flag of every complete analysis frame of <waveform>. """
        size = int(round(self.frameSeconds * sampleRate))
        numFrames = len(waveform) // size
        frames = np.asarray(waveform[:numFrames * size], dtype=np.float64).reshape(numFrames, size)
        rms = np.sqrt(np.mean(frames ** 2, axis=1))
        level = 20.0 * np.log10(np.maximum(rms, 1e-12))
        voiced = level > self.threshold
        held, countdown = np.zeros(numFrames, dtype=bool), 0
        for i, above in enumerate(voiced):
            if above:
                held[i], countdown = True, self.hangover
            else:
                held[i], countdown = countdown > 0, max(countdown - 1, 0)
        return held

    def detect(self, waveform, sampleRate):
        """ Returns the voice activity of <waveform> as a VAD-sourced :class:`VaTrack`. """
        held = self.frameActivity(waveform, sampleRate)
        segments, start = [], None
        for i, flag in enumerate(list(held) + [False]):
            if flag and start is None:
                start = i
            elif not flag and start is not None:
                segments.append((start * self.frameSeconds, i * self.frameSeconds))
                start = None
        return VaTrack(segments, VAD)
