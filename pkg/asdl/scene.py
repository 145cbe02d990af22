# -*- coding: utf-8 -*-
import math

import numpy as np
import soundfile
from scipy import signal

from asdl import log, utils
from asdl.exceptions import BadRequest, DomainError, PreconditionError, SizeError

SINC_TAPS = 15          # taps each side of the interpolation point (31 in total)
SINC_HALF_WIDTH = 16    # Hann window half-width, in samples
SOURCE_RMS = 0.1
SPEECH_CUTOFF = 500.0   # Hz, -6 dB/octave above

# Third-order 1/f filter (-3 dB/octave within 0.5 dB above ~10 Hz at 48 kHz); its poles and
# zeros are real, so it runs as a cascade of one-pole sections
PINK_B = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
PINK_A = [1.0, -2.494956002, 2.017265875, -0.522189400]
PINK_WARMUP = 4096


class SceneSpec(object):
    """ Description of a single-speaker synthetic scene.

        Parameters:
            duration (float): Length of the scene in seconds.
            knots (list): ``(time_s, azimuth_deg)`` pairs of the piecewise-linear trajectory. A
                single knot describes a static speaker.
            voiceSegments (list): Sorted, disjoint ``(onset_s, offset_s)`` pairs.
            snr (float): Pink noise SNR in dB, ``math.inf`` for a clean scene.
            seed (int): Seed of the source signal and the noise.
            name (str): Sequence identifier.

        Raises:
            :exc:`~asdl.exceptions.BadRequest`: Overlapping, unsorted or out-of-range segments.
    """

    def __init__(self, duration, knots, voiceSegments=(), snr=math.inf, seed=0, name='scene'):
        self.duration = float(duration)
        self.knots = sorted((float(t), float(az)) for t, az in knots)
        self.voiceSegments = [(float(on), float(off)) for on, off in voiceSegments]
        self.snr = float(snr)
        self.seed = int(seed)
        self.name = name
        if self.duration <= 0:
            raise BadRequest(f'Scene duration must be positive, got {self.duration}')
        if not self.knots:
            raise BadRequest('A scene needs at least one trajectory knot')
        checkSegments(self.voiceSegments, self.duration)

    def __repr__(self):
        return f'<SceneSpec:{self.name}:{self.duration:g}s>'

    def azimuthAt(self, times):
        """ Returns the speaker azimuth in degrees at <times> (seconds), held constant before the
            first and after the last knot.
        """
        knotTimes, knotAzimuths = zip(*self.knots)
        return np.interp(np.asarray(times, dtype=np.float64), knotTimes, knotAzimuths)

    def checkInView(self, cameras, resolution=0.01):
        """ Raises DomainError unless the trajectory stays inside every camera of <cameras>. """
        times = np.arange(0.0, self.duration + resolution, resolution)
        azimuths = self.azimuthAt(times)
        for camera in cameras:
            if not all(camera.inView(az) for az in (azimuths.min(), azimuths.max())):
                raise DomainError(f'{self} leaves the field of view of {camera}')

    def toDict(self):
        return {'name': self.name, 'duration': self.duration, 'knots': self.knots,
                'voiceSegments': self.voiceSegments, 'snr': self.snr, 'seed': self.seed}

    @classmethod
    def fromDict(cls, data):
        snr = data.get('snr')
        return cls(data['duration'], data['knots'], data.get('voiceSegments', ()),
                   math.inf if snr is None else snr, data.get('seed', 0), data.get('name', 'scene'))

    @classmethod
    def fromConfig(cls, config, section='scene'):
        """ Reads a hand-written scene: ``knots = 0.0:-10, 6.0:10``,
            ``segments = 0.5-2.0, 2.6-5.1``, ``duration``, ``snr``, ``seed`` and ``name``.
        """
        return cls(
            duration=config.get(f'{section}.duration', 2.0, float),
            knots=utils.toPairs(config.get(f'{section}.knots', '0.0:0.0')),
            voiceSegments=utils.toRanges(config.get(f'{section}.segments', '')),
            snr=config.get(f'{section}.snr', math.inf, float),
            seed=config.get(f'{section}.seed', config.get('experiment.seed', 0, int), int),
            name=config.get(f'{section}.name', section),
        )

    @classmethod
    def random(cls, name, seed, duration=6.0, azimuthRange=20.0, numKnots=3, segmentMean=1.5,
               gapMean=0.6, snr=math.inf):
        """ Draws a moving-speaker scene: <numKnots> azimuths uniform in +-<azimuthRange>
            spread evenly over the duration, alternating exponential gaps and voice segments.
        """
        rng = np.random.default_rng(seed)
        times = np.linspace(0.0, duration, max(numKnots, 1)) if numKnots > 1 else [0.0]
        azimuths = rng.uniform(-azimuthRange, azimuthRange, len(times))
        segments, t = [], rng.exponential(gapMean / 2)
        while t < duration - 0.1:
            length = max(0.2, rng.exponential(segmentMean))
            offset = min(duration, t + length)
            segments.append((round(t, 4), round(offset, 4)))
            t = offset + max(0.1, rng.exponential(gapMean))
        return cls(duration, list(zip(times, azimuths)), segments, snr, seed, name)


class MultichannelClip(object):
    """ A block of multichannel audio.

        Parameters:
            samples (ndarray): ``(channels, time)`` float array.
            sampleRate (int): Sample rate in Hz.
            geometry (:class:`~asdl.geometry.ArrayGeometry`): The array that recorded the clip.
            voiceSegments (list): Voice activity segments, if known.
            name (str): Identifier used in logs and artifacts.
    """

    def __init__(self, samples, sampleRate, geometry=None, voiceSegments=None, name='clip'):
        self.samples = np.asarray(samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[np.newaxis, :]
        self.sampleRate = int(sampleRate)
        self.geometry = geometry
        self.voiceSegments = None if voiceSegments is None else [tuple(s) for s in voiceSegments]
        self.name = name
        if geometry is not None and self.numChannels != geometry.numMics:
            raise SizeError(f'Clip has {self.numChannels} channels but {geometry} has {geometry.numMics} mics')
        if not np.all(np.isfinite(self.samples)):
            raise BadRequest(f'Clip {name} contains non-finite samples')

    def __repr__(self):
        return f'<MultichannelClip:{self.name}:{self.numChannels}ch:{self.duration:g}s>'

    @property
    def numChannels(self):
        return self.samples.shape[0]

    @property
    def numSamples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.numSamples / self.sampleRate

    def activeMask(self):
        """ Boolean mask of voice-active samples: the voice segments when known, otherwise
            every sample where any channel is nonzero.
        """
        if self.voiceSegments is None:
            return np.any(self.samples != 0, axis=0)
        return segmentMask(self.voiceSegments, self.numSamples, self.sampleRate)

    def slice(self, start, stop, name=None):
        """ Returns samples [start, stop) as a new clip, voice segments shifted to match. """
        segments = None
        if self.voiceSegments is not None:
            t0, t1 = start / self.sampleRate, stop / self.sampleRate
            segments = [(max(on, t0) - t0, min(off, t1) - t0) for on, off in self.voiceSegments
                        if off > t0 and on < t1]
        return MultichannelClip(self.samples[:, start:stop], self.sampleRate, self.geometry, segments,
                                name or f'{self.name}@{start}')


def checkSegments(segments, duration):
    """ Validates that <segments> are sorted, disjoint and inside [0, duration]. """
    previous = 0.0
    for onset, offset in segments:
        if onset < previous or offset <= onset or offset > duration + 1e-9:
            raise BadRequest(f'Invalid voice segment ({onset}, {offset}) in a {duration}s scene')
        previous = offset
    return segments


def segmentMask(segments, numSamples, rate):
    """ Returns a boolean mask, true at samples ``n`` with ``onset <= n/rate < offset``. """
    times = np.arange(numSamples) / rate
    mask = np.zeros(numSamples, dtype=bool)
    for onset, offset in segments:
        mask |= (times >= onset) & (times < offset)
    return mask


def speechShapedNoise(numSamples, sampleRate=48000, seed=0):
    """ White noise through a first-order lowpass at 500 Hz, scaled to an RMS of 0.1. """
    rng = np.random.default_rng(seed)
    b, a = signal.butter(1, SPEECH_CUTOFF, btype='low', fs=sampleRate)
    noise = signal.lfilter(b, a, rng.standard_normal(numSamples))
    return noise * (SOURCE_RMS / np.sqrt(np.mean(noise ** 2)))


def fractionalDelay(source, delays):
    """ Returns ``y[n] = source(n - delays[n])`` for a time-varying delay in samples, using a
        Hann-windowed sinc over 31 taps. Samples outside <source> count as zero.
    """
    numSamples = len(delays)
    pad = SINC_TAPS + int(np.ceil(np.max(np.abs(delays)))) + 1
    padded = np.zeros(len(source) + 2 * pad)
    padded[pad:pad + len(source)] = source
    position = np.arange(numSamples) - np.asarray(delays, dtype=np.float64)
    nearest = np.round(position).astype(np.int64)
    frac = position - nearest
    out = np.zeros(numSamples)
    for j in range(-SINC_TAPS, SINC_TAPS + 1):
        x = j - frac
        weight = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / SINC_HALF_WIDTH))
        out += weight * padded[nearest + j + pad]
    return out


def renderScene(spec, geometry, source=None):
    """ Renders <spec> on the array <geometry>: each channel is <source> delayed by its
        plane-wave arrival time for the trajectory, then zeroed outside the voice segments.

        Parameters:
            spec (:class:`SceneSpec`): Scene to render.
            geometry (:class:`~asdl.geometry.ArrayGeometry`): Microphone array.
            source (ndarray): Mono source, at least ``duration * sampleRate`` samples. Defaults
                to speech-shaped noise seeded by ``spec.seed``.

        Raises:
            :exc:`~asdl.exceptions.SizeError`: The source is shorter than the scene.
    """
    rate = geometry.sampleRate
    numSamples = int(round(spec.duration * rate))
    if source is None:
        source = speechShapedNoise(numSamples, rate, spec.seed)
    source = np.asarray(source, dtype=np.float64)
    if source.ndim != 1 or len(source) < numSamples:
        raise SizeError(f'Source has {source.shape} samples, {spec} needs {numSamples}')
    azimuths = spec.azimuthAt(np.arange(numSamples) / rate)
    delays = geometry.arrivalTimes(azimuths) * rate
    samples = np.stack([fractionalDelay(source, delays[:, mic]) for mic in range(geometry.numMics)])
    samples *= segmentMask(spec.voiceSegments, numSamples, rate)
    log.debug('Rendered %s on %s (%d samples)', spec, geometry, numSamples)
    return MultichannelClip(samples, rate, geometry, spec.voiceSegments, spec.name)


def pinkSections():
    """ Returns the pink filter as second-order-section rows, one pole and one zero per row. """
    zeros, poles, gain = signal.tf2zpk(PINK_B, PINK_A)
    sections = np.zeros((len(poles), 6))
    sections[:, 0] = sections[:, 3] = 1.0
    sections[:, 1] = -np.sort(zeros.real)
    sections[:, 4] = -np.sort(poles.real)
    sections[0, :2] *= gain
    return sections


def pinkNoise(numChannels, numSamples, rng):
    """ Returns ``(numChannels, numSamples)`` independent unit-variance 1/f noise. """
    white = rng.standard_normal((numChannels, numSamples + PINK_WARMUP))
    pink = signal.sosfilt(pinkSections(), white, axis=-1)[:, PINK_WARMUP:]
    return pink / np.std(pink, axis=-1, keepdims=True)


def addPinkNoise(clip, snr, seed=0):
    """ Adds independent pink noise to every channel of <clip> so that the signal power over
        the voice-active samples divided by the noise power over the same samples equals
        <snr> dB. ``snr=inf`` returns an unchanged copy.

        Raises:
            :exc:`~asdl.exceptions.PreconditionError`: The clip has no voice-active sample.
    """
    snr = float(snr)
    if math.isinf(snr) and snr > 0:
        return MultichannelClip(clip.samples.copy(), clip.sampleRate, clip.geometry, clip.voiceSegments, clip.name)
    active = clip.activeMask()
    signalPower = np.mean(clip.samples[:, active] ** 2) if active.any() else 0.0
    if signalPower <= 0:
        raise PreconditionError(f'{clip} is silent; SNR is undefined')
    noise = pinkNoise(clip.numChannels, clip.numSamples, np.random.default_rng(seed))
    noisePower = np.mean(noise[:, active] ** 2)
    noise *= np.sqrt(signalPower / (noisePower * 10.0 ** (snr / 10.0)))
    log.debug('Added pink noise to %s at %g dB', clip, snr)
    return MultichannelClip(clip.samples + noise, clip.sampleRate, clip.geometry, clip.voiceSegments, clip.name)


def writeClip(path, clip):
    """ Writes <clip> atomically as a 24-bit PCM WAV file. """
    peak = np.max(np.abs(clip.samples)) if clip.samples.size else 0.0
    if peak >= 1.0:
        log.warning('%s peaks at %.3f and will clip in the WAV file', clip, peak)
    tmppath = utils.atomicPath(path)
    soundfile.write(tmppath, clip.samples.T, clip.sampleRate, subtype='PCM_24', format='WAV')
    return utils.commitPath(tmppath, path)


def readClip(path, geometry=None, voiceSegments=None, name=None):
    """ Reads a multichannel WAV file written by :func:`writeClip` (or any soundfile format). """
    data, rate = soundfile.read(path, dtype='float64', always_2d=True)
    if geometry is not None and rate != geometry.sampleRate:
        raise SizeError(f'{path} is sampled at {rate} Hz, the array expects {geometry.sampleRate} Hz')
    return MultichannelClip(data.T, rate, geometry, voiceSegments, name or path)
