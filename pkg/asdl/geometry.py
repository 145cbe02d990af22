# -*- coding: utf-8 -*-
import math

import numpy as np
from scipy.spatial.distance import pdist, squareform

from asdl import log
from asdl.exceptions import ConfigError, DomainError


class ArrayGeometry(object):
    """ Positions of the microphones of a planar array plus the acoustic constants used by
        every delay computation. Sources are assumed far-field: a source at azimuth ``az``
        sends a plane wave along the unit vector ``(sin az, 0, cos az)``, x pointing right
        and z away from the array towards the scene.

        Parameters:
            positions (array): ``(numMics, 3)`` microphone coordinates in metres.
            referenceMic (int): Index of the reference microphone for GCC-PHAT and NIPD.
            speedOfSound (float): Speed of sound in m/s.
            sampleRate (int): Audio sample rate in Hz.
            centralMic (int): Microphone used for single-channel inputs (optional).
            stereoMics (tuple): Pair of microphones used for two-channel inputs (optional).

        Attributes:
            positions (ndarray): ``(numMics, 3)`` float64 coordinates.
            dMax (float): Largest distance between two microphones in metres.
            farthestPair (tuple): Indices of the two microphones ``dMax`` apart, lower index first.
    """

    def __init__(self, positions, referenceMic=0, speedOfSound=343.0, sampleRate=48000,
                 centralMic=None, stereoMics=None):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.speedOfSound = float(speedOfSound)
        self.sampleRate = int(sampleRate)
        if self.numMics < 2:
            raise ConfigError(f'An array needs at least two microphones, got {self.numMics}')
        self.referenceMic = self._checkIndex(referenceMic, 'referenceMic', ConfigError)
        self.centralMic = self._checkIndex(self.referenceMic if centralMic is None else centralMic,
                                           'centralMic', ConfigError)
        stereoMics = stereoMics or self.farthestPairFor(self.positions)
        self.stereoMics = tuple(self._checkIndex(m, 'stereoMics', ConfigError) for m in stereoMics)
        self.farthestPair = self.farthestPairFor(self.positions)
        self.dMax = float(np.linalg.norm(self.positions[self.farthestPair[0]] - self.positions[self.farthestPair[1]]))

    def __repr__(self):
        return f'<ArrayGeometry:{self.numMics}mics:ref{self.referenceMic}>'

    @property
    def numMics(self):
        return self.positions.shape[0]

    @property
    def isPlanar(self):
        """ True when every microphone lies on one plane. """
        centred = self.positions - self.positions.mean(axis=0)
        return bool(np.linalg.matrix_rank(centred, tol=1e-9) <= 2)

    @classmethod
    def fromConfig(cls, config):
        """ Builds the geometry described by the ``[rig]`` section of <config>. Mics are
            numbered along the lower row first, then the upper row.
        """
        lower = config.getList('rig.lower', itemcast=float)
        if not lower:
            raise ConfigError('rig.lower is not set; load a preset that includes the rig')
        upper = config.getList('rig.upper', [], itemcast=float)
        lowerHeight = config.get('rig.lower_height', 0.0, float)
        upperHeight = config.get('rig.upper_height', 0.0, float)
        positions = [(x, lowerHeight, 0.0) for x in lower] + [(x, upperHeight, 0.0) for x in upper]
        return cls(
            positions,
            referenceMic=config.get('rig.reference_mic', 0, int),
            speedOfSound=config.get('rig.speed_of_sound', 343.0, float),
            sampleRate=config.get('rig.sample_rate', 48000, int),
            centralMic=config.get('rig.central_mic', None, int),
            stereoMics=config.getList('rig.stereo_mics', None, itemcast=int),
        )

    @staticmethod
    def farthestPairFor(positions):
        distances = squareform(pdist(np.asarray(positions, dtype=np.float64)))
        pair = np.unravel_index(np.argmax(distances), distances.shape)
        return tuple(sorted(int(p) for p in pair))

    def arrivalTimes(self, azimuth):
        """ Returns the plane-wave arrival time at every microphone, in seconds, relative to
            a wavefront crossing the array origin.

            Parameters:
                azimuth (float or array): Source azimuth(s) in degrees. An array of ``n`` azimuths
                    returns an ``(n, numMics)`` array.
        """
        az = np.radians(np.asarray(azimuth, dtype=np.float64))
        direction = np.stack([np.sin(az), np.zeros_like(az), np.cos(az)], axis=-1)
        return -(direction @ self.positions.T) / self.speedOfSound

    def tdoa(self, azimuth, micA, micB):
        """ Returns ``t(micA) - t(micB)``: how much later, in seconds, the wavefront from
            <azimuth> reaches <micA> than <micB>.

            Raises:
                :exc:`~asdl.exceptions.DomainError`: Azimuth outside (-90, 90) or invalid mic index.
        """
        azimuth = float(azimuth)
        if not -90.0 < azimuth < 90.0:
            raise DomainError(f'Azimuth {azimuth} deg outside the frontal half-plane (-90, 90)')
        micA = self._checkIndex(micA, 'micA', DomainError)
        micB = self._checkIndex(micB, 'micB', DomainError)
        if micA == micB:
            return 0.0
        times = self.arrivalTimes(azimuth)
        return float(times[micA] - times[micB])

    def _checkIndex(self, index, name, errcls):
        if index is None or not 0 <= int(index) < self.numMics:
            raise errcls(f'{name}={index} is not a valid microphone index (0..{self.numMics - 1})')
        return int(index)


class CameraModel(object):
    """ Pinhole camera looking along the array broadside, rotated horizontally by <offset>.

        Parameters:
            fov (float): Horizontal field of view in degrees.
            width (int): Image width in pixels.
            offset (float): Yaw of the view relative to broadside, degrees.
            view (int): Index of the view in the rig (0..10 for the default rig).
    """

    def __init__(self, fov=55.0, width=2448, offset=0.0, view=0):
        self.fov = float(fov)
        self.width = int(width)
        self.offset = float(offset)
        self.view = int(view)
        if not 0.0 <= self.fov < 180.0:
            raise ConfigError(f'Camera field of view must be in [0, 180) degrees, got {self.fov}')

    def __repr__(self):
        return f'<CameraModel:view{self.view}:{self.offset:+g}deg>'

    @classmethod
    def views(cls, config, indices=None):
        """ Returns a CameraModel per view listed in <indices>, ``camera.views`` or, failing
            both, every entry of ``camera.offsets``.
        """
        offsets = config.getList('camera.offsets', [0.0], itemcast=float)
        fov = config.get('camera.fov', 55.0, float)
        width = config.get('camera.width', 2448, int)
        if indices is None:
            indices = config.getList('camera.views', None, itemcast=int)
        if indices is None:
            indices = range(len(offsets))
        cameras = []
        for index in indices:
            if not 0 <= index < len(offsets):
                raise ConfigError(f'Camera view {index} not in rig (0..{len(offsets) - 1})')
            cameras.append(cls(fov, width, offsets[index], index))
        return cameras

    @property
    def halfFov(self):
        return self.fov / 2.0

    def inView(self, azimuth, margin=0.0):
        """ True when <azimuth> projects inside the image, <margin> degrees from the edge. """
        return abs(float(azimuth) - self.offset) <= self.halfFov - margin

    def project(self, azimuth):
        """ Returns the horizontal pixel coordinate of <azimuth> (degrees).

            Raises:
                :exc:`~asdl.exceptions.DomainError`: The azimuth falls outside this view.
        """
        azimuth = np.asarray(azimuth, dtype=np.float64)
        relative = azimuth - self.offset
        if np.any(np.abs(relative) > self.halfFov + 1e-12):
            raise DomainError(f'Azimuth {azimuth} outside the field of view of view {self.view}')
        relative = np.clip(relative, -self.halfFov, self.halfFov)
        px = self.width / 2.0 * (1.0 + np.tan(np.radians(relative)) / math.tan(math.radians(self.halfFov)))
        return float(px) if px.ndim == 0 else px

    def unproject(self, px):
        """ Returns the azimuth in degrees that projects to pixel column <px>. """
        px = np.asarray(px, dtype=np.float64)
        if np.any(px < 0) or np.any(px > self.width):
            raise DomainError(f'Pixel {px} outside the image (0..{self.width})')
        ratio = (2.0 * px / self.width - 1.0) * math.tan(math.radians(self.halfFov))
        azimuth = np.degrees(np.arctan(ratio)) + self.offset
        return float(azimuth) if azimuth.ndim == 0 else azimuth

    def normalize(self, azimuth):
        """ Returns the image position of <azimuth> normalized to [0, 1]. """
        return self.project(azimuth) / self.width

    def pixelsForDegrees(self, degrees):
        """ Pixel distance from the principal point of a source <degrees> off the view axis. """
        return self.project(self.offset + degrees) - self.width / 2.0

    def degreesForPixels(self, pixels):
        return self.unproject(self.width / 2.0 + pixels) - self.offset


def tdoa(geometry, azimuth, micA, micB):
    """ Far-field time difference of arrival between <micA> and <micB>, see
        :func:`ArrayGeometry.tdoa`.
    """
    return geometry.tdoa(azimuth, micA, micB)


def projectToPixels(camera, azimuth):
    """ Pinhole projection of <azimuth> (degrees) to a pixel column of <camera>. """
    return camera.project(azimuth)


def unprojectFromPixels(camera, px):
    return camera.unproject(px)


def defaultGeometry():
    """ Returns the geometry and the cameras of the rig shipped in ``asdl/presets/rig.ini``. """
    from asdl.config import AsdlConfig, presetPath
    config = AsdlConfig(presetPath('rig'))
    geometry = ArrayGeometry.fromConfig(config)
    log.debug('Loaded default rig %s, dMax=%.6f m', geometry, geometry.dMax)
    return geometry, CameraModel.views(config)
