# -*- coding: utf-8 -*-
import functools
import math
import os
import struct

import librosa
import numpy as np

from asdl import const, log, utils
from asdl.exceptions import BadRequest, ConfigError, ParseError, SizeError, UnknownType

GCC_PHAT = 'GCC-PHAT'
SALSA_LITE = 'SALSA-Lite'
LOGMEL_16 = 'LOGMEL-16'
LOGMEL_2 = 'LOGMEL-2'
LOGMEL_1 = 'LOGMEL-1'
KINDS = {GCC_PHAT: 1, SALSA_LITE: 2, LOGMEL_16: 3, LOGMEL_2: 4, LOGMEL_1: 5}
ALIASES = {'16MICS': LOGMEL_16, 'STEREO': LOGMEL_2, 'MONO': LOGMEL_1, 'GCC': GCC_PHAT, 'SALSA': SALSA_LITE}

MAGIC = b'ASDF'
HEADER = struct.Struct('<4sHHIIIH')
DTYPE_F32 = 1


def featureKind(name):
    """ Returns the canonical feature kind for <name>, accepting ``Mono``, ``Stereo`` and
        ``16mics`` as aliases of the log-mel kinds.

        Raises:
            :exc:`~asdl.exceptions.UnknownType`: Not a feature kind.
    """
    lookup = {k.upper(): k for k in KINDS}
    lookup.update(ALIASES)
    try:
        return lookup[str(name).strip().upper()]
    except KeyError:
        raise UnknownType(f'Unknown feature kind: {name} (choose from {", ".join(KINDS)})') from None


class StftConfig(object):
    """ Framing and spectral constants shared by every feature kind.

        Parameters:
            windowSize (int): Hann window and FFT length in samples.
            hop (int): Hop between frames in samples.
            sampleRate (int): Sample rate in Hz.
            chunkSeconds (float): Length of one network input in seconds.
            bins (int): Size of the frequency/lag axis of every feature.
            logFloor (float): Floor applied before every logarithm.
            phatEps (float): Regularizer of the PHAT weighting.
            fov (float): Camera horizontal field of view in degrees, bounds the useful lags.
            fullSphere (bool): Bound the lags by the full aperture instead of the field of view.
    """

    def __init__(self, windowSize=512, hop=100, sampleRate=48000, chunkSeconds=2.0, bins=64,
                 logFloor=1e-10, phatEps=1e-8, fov=55.0, fullSphere=False):
        self.windowSize = int(windowSize)
        self.hop = int(hop)
        self.sampleRate = int(sampleRate)
        self.chunkSeconds = float(chunkSeconds)
        self.bins = int(bins)
        self.logFloor = float(logFloor)
        self.phatEps = float(phatEps)
        self.fov = float(fov)
        self.fullSphere = bool(fullSphere)

    def __repr__(self):
        return f'<StftConfig:{self.windowSize}/{self.hop}:{self.numFrames}x{self.bins}>'

    @classmethod
    def fromConfig(cls, config):
        return cls(
            windowSize=config.get('stft.window', 512, int),
            hop=config.get('stft.hop', 100, int),
            sampleRate=config.get('rig.sample_rate', 48000, int),
            chunkSeconds=config.get('stft.chunk', 2.0, float),
            bins=config.get('features.bins', 64, int),
            logFloor=config.get('features.log_floor', 1e-10, float),
            phatEps=config.get('features.phat_eps', 1e-8, float),
            fov=config.get('camera.fov', 55.0, float),
            fullSphere=config.get('features.full_sphere', False, bool),
        )

    @property
    def chunkSamples(self):
        return int(round(self.chunkSeconds * self.sampleRate))

    @property
    def numFrames(self):
        return self.chunkSamples // self.hop

    @property
    def numFreqs(self):
        return self.windowSize // 2 + 1

    @property
    def binHz(self):
        return self.sampleRate / self.windowSize

    def toDict(self):
        return dict(self.__dict__)


class FeatureTensor(object):
    """ One network input: a ``(channels, frames, bins)`` float32 array and where it came from.

        Parameters:
            data (ndarray): ``(Ch, T, F)`` array; converted to float32.
            kind (str): One of the feature kinds.
            clipId (str): Identifier of the source clip or chunk.
            sequence (str): Sequence the chunk was cut from.
            start (float): Start time of the chunk inside the sequence, seconds.
    """

    def __init__(self, data, kind, clipId='', sequence='', start=0.0):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.kind = featureKind(kind)
        self.clipId = clipId
        self.sequence = sequence
        self.start = float(start)
        if self.data.ndim != 3:
            raise SizeError(f'Feature data must be 3-D (Ch, T, F), got shape {self.data.shape}')
        if not np.all(np.isfinite(self.data)):
            raise BadRequest(f'Feature tensor {clipId} contains non-finite values')

    def __repr__(self):
        return f'<FeatureTensor:{self.kind}:{self.clipId}:{"x".join(str(s) for s in self.shape)}>'

    @property
    def shape(self):
        return self.data.shape

    def replace(self, data):
        return FeatureTensor(data, self.kind, self.clipId, self.sequence, self.start)


class NormStats(object):
    """ Per (channel, bin) mean and standard deviation of a training set. """

    def __init__(self, mean, std, kind):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.kind = featureKind(kind)

    def __repr__(self):
        return f'<NormStats:{self.kind}:{self.mean.shape[0]}x{self.mean.shape[1]}>'

    def save(self, path):
        tmppath = utils.atomicPath(path)
        with open(tmppath, 'wb') as handle:
            np.savez(handle, mean=self.mean, std=self.std, kind=np.array(self.kind))
        return utils.commitPath(tmppath, path)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls(data['mean'], data['std'], str(data['kind']))


def stft(waveform, cfg):
    """ Returns the complex ``(frames, windowSize/2+1)`` spectrogram of one chunk. Frames are
        centred with reflect padding; the trailing frame is dropped so a chunk of
        ``chunkSamples`` yields exactly ``chunkSamples // hop`` frames.

        Raises:
            :exc:`~asdl.exceptions.SizeError`: The waveform is not exactly one chunk long.
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.shape[-1] != cfg.chunkSamples:
        raise SizeError(f'STFT input has {waveform.shape[-1]} samples, expected {cfg.chunkSamples}')
    spec = librosa.stft(np.asfortranarray(waveform), n_fft=cfg.windowSize, hop_length=cfg.hop,
                        win_length=cfg.windowSize, window='hann', center=True, pad_mode='reflect')
    return np.swapaxes(spec[..., :cfg.numFrames], -1, -2)


@functools.lru_cache(maxsize=8)
def melBasis(sampleRate, windowSize, numMels):
    """ Slaney mel filterbank spanning 0 Hz to Nyquist, ``(numMels, windowSize/2+1)``. """
    return librosa.filters.mel(sr=sampleRate, n_fft=windowSize, n_mels=numMels, fmin=0.0,
                               fmax=sampleRate / 2.0)


def logMel(power, cfg, numMels=None):
    """ Returns ``log(max(power @ melBasis.T, floor))`` for a magnitude-squared spectrogram. """
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-1] != cfg.numFreqs:
        raise SizeError(f'Expected {cfg.numFreqs} frequency bins, got {power.shape[-1]}')
    basis = melBasis(cfg.sampleRate, cfg.windowSize, numMels or cfg.bins)
    return np.log(np.maximum(power @ basis.T, cfg.logFloor))


def maxLag(geometry, camera, cfg=None, fullSphere=None):
    """ Returns the largest delay in samples between two microphones for a source inside the
        camera field of view, ``round(dMax * sin(fov/2) / c * fs)``.

        Raises:
            :exc:`~asdl.exceptions.ConfigError`: ``2 * lag + 1`` does not fit the lag axis.
    """
    bins = cfg.bins if cfg is not None else 64
    if fullSphere is None:
        fullSphere = cfg.fullSphere if cfg is not None else False
    fov = camera.fov if hasattr(camera, 'fov') else float(camera)
    distance = geometry.dMax if fullSphere else geometry.dMax * math.sin(math.radians(fov / 2.0))
    lag = int(round(distance / geometry.speedOfSound * geometry.sampleRate))
    if 2 * lag + 1 > bins:
        raise ConfigError(f'Maximum lag of {lag} samples needs {2 * lag + 1} lags, the feature axis has {bins}')
    return lag


def _spectra(clip, cfg):
    if clip.sampleRate != cfg.sampleRate:
        raise SizeError(f'{clip} is sampled at {clip.sampleRate} Hz, features expect {cfg.sampleRate} Hz')
    return stft(clip.samples, cfg)


def _otherMics(geometry):
    return [m for m in range(geometry.numMics) if m != geometry.referenceMic]


def logMelFeatures(clip, geometry, cfg, kind=LOGMEL_16):
    """ Log-mel spectrograms of every mic (LOGMEL-16), the stereo pair (LOGMEL-2) or the
        central mic (LOGMEL-1).
    """
    kind = featureKind(kind)
    mics = {LOGMEL_16: list(range(geometry.numMics)), LOGMEL_2: list(geometry.stereoMics),
            LOGMEL_1: [geometry.centralMic]}.get(kind)
    if mics is None:
        raise UnknownType(f'{kind} is not a log-mel feature kind')
    spectra = _spectra(clip, cfg)[mics]
    return FeatureTensor(logMel(np.abs(spectra) ** 2, cfg), kind, clip.name)


def gccPhatFeatures(clip, geometry, cfg, camera=None):
    """ Channel 0 is the reference mic's log-mel spectrogram; channel ``i`` is the per-frame
        GCC-PHAT between the reference and the i-th other mic, restricted to the central lags
        with lag 0 at index ``bins // 2``. A positive lag means the other mic hears the source
        after the reference.
    """
    maxLag(geometry, camera if camera is not None else cfg.fov, cfg)
    spectra = _spectra(clip, cfg)
    ref = spectra[geometry.referenceMic]
    cross = spectra[_otherMics(geometry)] * np.conj(ref)
    cross /= np.abs(cross) + cfg.phatEps
    corr = np.fft.irfft(cross, n=cfg.windowSize, axis=-1)
    half = cfg.bins // 2
    lags = np.concatenate([corr[..., -half:], corr[..., :cfg.bins - half]], axis=-1)
    mel = logMel(np.abs(ref) ** 2, cfg)
    return FeatureTensor(np.concatenate([mel[np.newaxis], lags], axis=0), GCC_PHAT, clip.name)


def salsaLiteFeatures(clip, geometry, cfg):
    """ Channel 0 is the reference mic's log power over the first ``bins`` STFT bins; channel
        ``i`` is the normalized phase difference ``-c / (2 pi f) * angle(X_i conj(X_ref))``,
        which approximates the extra path length to the i-th other mic in metres.
    """
    spectra = _spectra(clip, cfg)[..., :cfg.bins]
    ref = spectra[geometry.referenceMic]
    freqs = np.arange(cfg.bins) * cfg.binHz
    scale = np.zeros(cfg.bins)
    scale[1:] = -geometry.speedOfSound / (2.0 * np.pi * freqs[1:])
    nipd = np.angle(spectra[_otherMics(geometry)] * np.conj(ref)) * scale
    logspec = np.log(np.maximum(np.abs(ref) ** 2, cfg.logFloor))
    return FeatureTensor(np.concatenate([logspec[np.newaxis], nipd], axis=0), SALSA_LITE, clip.name)


def extractFeatures(clip, kind, geometry, cfg):
    """ Dispatches to the extractor of <kind>. """
    kind = featureKind(kind)
    if kind == GCC_PHAT:
        return gccPhatFeatures(clip, geometry, cfg)
    if kind == SALSA_LITE:
        return salsaLiteFeatures(clip, geometry, cfg)
    return logMelFeatures(clip, geometry, cfg, kind)


def numChannels(kind, geometry):
    kind = featureKind(kind)
    return {LOGMEL_2: 2, LOGMEL_1: 1}.get(kind, geometry.numMics)


def fitNormalization(tensors, floor=1e-8):
    """ Fits per (channel, bin) population mean and std over every frame of <tensors>. Partial
        sums are combined with :func:`math.fsum`, so the result does not depend on the order of
        the tensors.

        Raises:
            :exc:`~asdl.exceptions.BadRequest`: Empty training set or mixed kinds/shapes.
    """
    tensors = list(tensors)
    if not tensors:
        raise BadRequest('Cannot fit normalization on an empty training set')
    kind = tensors[0].kind
    channels, _, bins = tensors[0].shape
    for tensor in tensors:
        if tensor.kind != kind or tensor.shape[0] != channels or tensor.shape[2] != bins:
            raise BadRequest(f'{tensor} does not match {tensors[0]}')
    count = sum(t.shape[1] for t in tensors)

    def reduce(partials):
        stacked = np.stack(partials).reshape(len(partials), -1)
        return np.array([math.fsum(column) for column in stacked.T]).reshape(channels, bins)

    mean = reduce([t.data.astype(np.float64).sum(axis=1) for t in tensors]) / count
    var = reduce([((t.data.astype(np.float64) - mean[:, np.newaxis, :]) ** 2).sum(axis=1) for t in tensors]) / count
    std = np.maximum(np.sqrt(var), floor)
    log.debug('Fitted %s normalization over %d tensors (%d frames)', kind, len(tensors), count)
    return NormStats(mean, std, kind)


def applyNormalization(tensor, stats):
    """ Returns ``(x - mean) / std`` applied to every channel of <tensor>. """
    if tensor.kind != stats.kind or tensor.shape[0] != stats.mean.shape[0] or tensor.shape[2] != stats.mean.shape[1]:
        raise BadRequest(f'{stats} cannot normalize {tensor}')
    data = (tensor.data.astype(np.float64) - stats.mean[:, np.newaxis, :]) / stats.std[:, np.newaxis, :]
    return tensor.replace(data)


def chunkClip(clip, cfg, hopSeconds=1.0, pad=False):
    """ Cuts <clip> into chunks of ``cfg.chunkSamples`` every <hopSeconds>. Returns a list of
        ``(startSeconds, clip)``. With <pad> the clip is zero-padded so the last chunk reaches
        its end; otherwise a trailing partial chunk is dropped.
    """
    size, hop = cfg.chunkSamples, int(round(hopSeconds * clip.sampleRate))
    if hop <= 0:
        raise BadRequest(f'Chunk hop must be positive, got {hopSeconds}')
    numSamples = clip.numSamples
    if pad:
        numChunks = max(1, int(math.ceil(max(numSamples - size, 0) / hop)) + 1)
        total = (numChunks - 1) * hop + size
        if total > numSamples:
            padded = np.zeros((clip.numChannels, total))
            padded[:, :numSamples] = clip.samples
            clip = type(clip)(padded, clip.sampleRate, clip.geometry, clip.voiceSegments, clip.name)
    chunks = []
    for start in range(0, clip.numSamples - size + 1, hop):
        chunks.append((start / clip.sampleRate, clip.slice(start, start + size, f'{clip.name}@{start // hop}')))
    return chunks


def writeFeatureTensor(path, tensor):
    """ Writes <tensor> as a little-endian header ``{magic, version, kind, Ch, T, F, dtype}``
        followed by the row-major float32 data.
    """
    channels, frames, bins = tensor.shape
    header = HEADER.pack(MAGIC, const.FEATURE_FILE_VERSION, KINDS[tensor.kind], channels, frames, bins, DTYPE_F32)
    with utils.atomicWrite(path, 'wb') as handle:
        handle.write(header)
        handle.write(tensor.data.astype('<f4').tobytes(order='C'))
    return path


def readFeatureTensor(path, clipId=None, sequence='', start=0.0):
    """ Reads a tensor written by :func:`writeFeatureTensor`.

        Raises:
            :exc:`~asdl.exceptions.ParseError`: Not a feature file or truncated data.
    """
    with open(path, 'rb') as handle:
        raw = handle.read()
    if len(raw) < HEADER.size:
        raise ParseError(f'{path} is too short to be a feature file')
    magic, version, code, channels, frames, bins, dtype = HEADER.unpack_from(raw)
    if magic != MAGIC or dtype != DTYPE_F32:
        raise ParseError(f'{path} is not a feature file')
    if version > const.FEATURE_FILE_VERSION:
        raise ParseError(f'{path} has unsupported version {version}')
    kinds = {v: k for k, v in KINDS.items()}
    if code not in kinds:
        raise ParseError(f'{path} has unknown feature kind code {code}')
    expected = channels * frames * bins
    data = np.frombuffer(raw, dtype='<f4', offset=HEADER.size)
    if data.size != expected:
        raise ParseError(f'{path} holds {data.size} values, header says {expected}')
    return FeatureTensor(data.reshape(channels, frames, bins), kinds[code],
                         clipId or os.path.basename(path), sequence, start)


class FeatureIndex(object):
    """ JSON sidecar listing the chunks of a feature directory.

        Every entry maps a chunk id to ``{file, targets, sequence, start, views, snr, split}``
        with paths relative to the index file.
    """

    def __init__(self, path, kind=None):
        self.path = path
        self.kind = kind
        self.entries = {}
        if os.path.isfile(path):
            data = utils.readJson(path)
            self.kind = data.get('kind', kind)
            self.entries = data.get('chunks', {})

    def __repr__(self):
        return f'<FeatureIndex:{self.kind}:{len(self.entries)}chunks>'

    def __len__(self):
        return len(self.entries)

    def add(self, chunkId, **entry):
        self.entries[chunkId] = entry

    def filter(self, **match):
        """ Returns ``(chunkId, entry)`` pairs whose fields equal every value of <match>. """
        return [(cid, e) for cid, e in sorted(self.entries.items())
                if all(e.get(k) == v for k, v in match.items())]

    def resolve(self, relpath):
        return os.path.join(os.path.dirname(os.path.abspath(self.path)), relpath)

    def save(self):
        return utils.writeJson(self.path, {'kind': self.kind, 'chunks': self.entries})
