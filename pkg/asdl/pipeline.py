# -*- coding: utf-8 -*-
import csv
import math
import os
import re

import numpy as np
import soundfile

from asdl import DEFAULT_OUTPUT, DEFAULT_PRESET, SHOW_PROGRESS, WORKERS, log, utils
from asdl.config import loadConfig
from asdl.exceptions import ConfigError, NotFound
from asdl.features import (GCC_PHAT, SALSA_LITE, FeatureIndex, NormStats, StftConfig, applyNormalization,
                           chunkClip, extractFeatures, featureKind, fitNormalization, maxLag, numChannels,
                           readFeatureTensor, writeFeatureTensor)
from asdl.geometry import ArrayGeometry, CameraModel
from asdl.metrics import MetricsReport, ToleranceSpec, evaluate, plotPrCurves, teacherAsPrediction, writePrCsv
from asdl.model import POOL, CrnnConfig, modelVariant
from asdl.scene import SceneSpec, addPinkNoise, readClip, renderScene, writeClip
from asdl.supervision import (GT, VAD, EnergyVad, LabelTrack, SupervisionConfig, TrainingTarget, VaTrack,
                              fuse, groundTruthTrack, ingestTeacherTrack, rasterizeVa, readVaTrack, teacherTrack,
                              writeTrack, writeVaTrack)
from asdl.train import ChunkDataset, TrainHyper, inferTrack, loadCheckpoint, saveCheckpoint, train, writeHistory

SIMULATE = 'simulate'
FEATURES = 'features'
LABELS = 'labels'
TRAIN = 'train'
EVAL = 'eval'
REPORT = 'report'
STAGES = (SIMULATE, FEATURES, LABELS, TRAIN, EVAL, REPORT)
PREREQUISITES = {
    SIMULATE: (),
    FEATURES: (SIMULATE,),
    LABELS: (SIMULATE,),
    TRAIN: (FEATURES, LABELS),
    EVAL: (TRAIN, FEATURES, LABELS),
    REPORT: (EVAL,),
}
ABLATION_AXES = ('features', 'variants', 'supervisions', 'snrs', 'seeds')
TRAIN_SPLIT = 'train'
VALIDATION_SPLIT = 'validation'
TEST_SPLIT = 'test'
NOISE_SEED_OFFSET = 7919
TEACHER_SEED_OFFSET = 31
SUMMARY_METRICS = ('f1Best', 'aDPixels', 'aDDegrees', 'detErr')


def slug(name):
    """ Returns <name> with every run of characters unsafe in a file name replaced by ``_``. """
    return re.sub(r'[^A-Za-z0-9.+-]+', '_', str(name)).strip('_')


def snrName(snr):
    return 'clean' if math.isinf(float(snr)) else f'{float(snr):g}'


class RunCell(object):
    """ One trained model of an ablation: features, architecture, supervision, SNR and seed.

        Parameters:
            kind (str): Feature kind.
            variant (str): Model variant.
            supervision (str): Supervision name such as ``Asc(s)-Vad``.
            snr (float): Pink noise SNR of the training and test features, ``inf`` when clean.
            seed (int): Seed of initialization and shuffling.
            maskBypass (bool): Trust teacher detections for the confidence target too.
    """

    def __init__(self, kind, variant, supervision, snr=math.inf, seed=0, maskBypass=False):
        self.kind = featureKind(kind)
        self.variant = modelVariant(variant)
        self.supervision = SupervisionConfig.fromName(supervision, maskBypass)
        self.snr = float(snr)
        self.seed = int(seed)

    def __repr__(self):
        return f'<RunCell:{self.id}>'

    def __eq__(self, other):
        return isinstance(other, RunCell) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    @property
    def maskBypass(self):
        return self.supervision.maskBypass

    @property
    def targetName(self):
        """ Directory name of the fused targets this cell trains on. """
        return slug(self.supervision.name) + ('-bypass' if self.maskBypass else '')

    @property
    def id(self):
        return f'{slug(self.kind)}_{self.variant}_{self.targetName}_snr{snrName(self.snr)}_seed{self.seed}'

    def toDict(self):
        return {'kind': self.kind, 'variant': self.variant, 'supervision': self.supervision.name,
                'maskBypass': self.maskBypass, 'snr': self.snr, 'seed': self.seed}

    @classmethod
    def fromDict(cls, data):
        snr = data.get('snr')
        return cls(data['kind'], data['variant'], data['supervision'], math.inf if snr is None else snr,
                   data.get('seed', 0), data.get('maskBypass', False))


def ablationMatrix(config, seed=None):
    """ Returns the run plan of <config>: the cross product of the ``[ablate]`` axes
        ``features``, ``variants``, ``supervisions``, ``snrs`` and ``seeds``, in that order,
        without duplicates. Axes left out fall back to the single value of the experiment.

        Raises:
            :exc:`~asdl.exceptions.ConfigError`: An axis is present but empty.
            :exc:`~asdl.exceptions.UnknownType`: An axis names an unknown kind, variant or
                supervision.
    """
    seed = config.get('experiment.seed', 0, int) if seed is None else int(seed)
    defaults = {
        'features': [config.get('features.kind', GCC_PHAT)],
        'variants': [config.get('model.variant', 'CRNN')],
        'supervisions': [config.get('supervision.name', 'Gt-Gt')],
        'snrs': config.getList('eval.snrs', [math.inf], itemcast=float),
        'seeds': [seed],
    }
    casts = {'snrs': float, 'seeds': int}
    axes = {}
    for axis in ABLATION_AXES:
        raw = config.get(f'ablate.{axis}')
        if raw is not None and not utils.toList(raw):
            raise ConfigError(f'Ablation axis {axis} is empty')
        axes[axis] = config.getList(f'ablate.{axis}', defaults[axis], itemcast=casts.get(axis))
    maskBypass = config.get('supervision.mask_bypass', False, bool)
    plan = []
    for kind in axes['features']:
        for variant in axes['variants']:
            for supervision in axes['supervisions']:
                for snr in axes['snrs']:
                    for cellseed in axes['seeds']:
                        cell = RunCell(kind, variant, supervision, snr, cellseed, maskBypass)
                        if cell not in plan:
                            plan.append(cell)
    log.debug('Ablation plan has %d cells', len(plan))
    return plan


def sequenceFolds(names, k=5):
    """ Splits sequence <names> into <k> cross-validation folds. Returns ``(train, validation)``
        pairs; every name is validated exactly once and the split depends only on the names.

        Raises:
            :exc:`~asdl.exceptions.ConfigError`: Fewer names than folds, or ``k < 2``.
    """
    names = sorted(set(names))
    if k < 2 or len(names) < k:
        raise ConfigError(f'Cannot split {len(names)} sequences into {k} folds')
    folds = []
    for i in range(k):
        validation = names[i::k]
        folds.append(([n for n in names if n not in validation], validation))
    return folds


class Manifest(object):
    """ Record of the completed stages of an output directory, stored as ``manifest.json``:
        ``{stages: {stage: {hash, artifacts}}}`` with artifact paths relative to the directory.
    """

    def __init__(self, output):
        self.output = output
        self.path = os.path.join(output, 'manifest.json')
        self.stages = {}
        if os.path.isfile(self.path):
            self.stages = utils.readJson(self.path).get('stages', {})

    def __repr__(self):
        return f'<Manifest:{self.output}:{",".join(s for s in STAGES if s in self.stages)}>'

    def record(self, stage, confighash, artifacts):
        relpaths = sorted({os.path.relpath(p, self.output) for p in artifacts})
        self.stages[stage] = {'hash': confighash, 'artifacts': relpaths}
        utils.writeJson(self.path, {'stages': self.stages})
        log.debug('Recorded stage %s with %d artifacts', stage, len(relpaths))

    def artifacts(self, stage):
        return [os.path.join(self.output, p) for p in self.stages.get(stage, {}).get('artifacts', [])]

    def missing(self, stage=None):
        """ Returns recorded artifacts that no longer exist on disk. """
        stages = [stage] if stage else list(self.stages)
        return [p for s in stages for p in self.artifacts(s) if not os.path.exists(p)]

    def require(self, stage, before=None, expected=()):
        """ Raises NotFound unless <stage> completed, all of its artifacts still exist and it
            recorded every path of <expected>.
        """
        needed = f'{before} needs the {stage} stage; ' if before else ''
        if stage not in self.stages:
            raise NotFound(f'{needed}run `asdl {stage}` first (output: {self.output})')
        missing = self.missing(stage)
        if missing:
            raise NotFound(f'{len(missing)} {stage} artifacts are missing, e.g. {missing[0]}; '
                           f'run `asdl {stage}` again')
        recorded = {os.path.normpath(p) for p in self.artifacts(stage)}
        absent = [p for p in expected if os.path.normpath(p) not in recorded]
        if absent:
            raise NotFound(f'{before or "This run"} needs {os.path.relpath(absent[0], self.output)} from the '
                           f'{stage} stage ({len(absent)} outputs missing); run `asdl {stage}` first')


class ExperimentConfig(object):
    """ Resolved configuration of an experiment and the paths of its output directory.

        Parameters:
            config (:class:`~asdl.config.AsdlConfig`): Loaded configuration.
            output (str): Output directory (default: ``<asdl.output>/<experiment.name>``).
            seed (int): Overrides ``experiment.seed``.
            workers (int): Concurrent workers of the per-sequence stages.
            showstatus (bool): Show tqdm progress bars.

        Raises:
            :exc:`~asdl.exceptions.ConfigError`: Inconsistent framing, lag axis or views.
            :exc:`~asdl.exceptions.UnknownType`: Unknown feature kind, variant or supervision.
    """

    def __init__(self, config, output=None, seed=None, workers=None, showstatus=None):
        self.config = config
        self.name = config.get('experiment.name', 'experiment')
        self.seed = config.get('experiment.seed', 0, int) if seed is None else int(seed)
        self.output = output or config.get('experiment.output') or os.path.join(DEFAULT_OUTPUT, self.name)
        self.workers = max(1, int(workers or WORKERS))
        self.showstatus = SHOW_PROGRESS if showstatus is None else bool(showstatus)
        self.geometry = ArrayGeometry.fromConfig(config)
        self.cameras = CameraModel.views(config)
        self.numViews = len(config.getList('camera.offsets', [0.0]))
        self.stft = StftConfig.fromConfig(config)
        self.frameRate = config.get('supervision.frame_rate', 30, int)
        self.trainHop = config.get('stft.train_hop', 1.0, float)
        self.inferHop = config.get('stft.infer_hop', 1.0, float)
        self.folds = config.get('experiment.folds', 0, int)
        self.fold = config.get('experiment.fold', 0, int)
        self.plan = ablationMatrix(config, self.seed)
        self.manifest = Manifest(self.output)
        self.validate()

    def __repr__(self):
        return f'<ExperimentConfig:{self.name}:{self.confighash}>'

    @classmethod
    def load(cls, path=None, preset=None, overrides=None, **kwargs):
        """ Loads <path> on top of its preset chain (default preset when neither is given) and
            applies ``{'section.name': value}`` <overrides>.
        """
        if path and not os.path.isfile(path):
            raise NotFound(f'Config file not found: {path}')
        config = loadConfig(path, preset or (None if path else DEFAULT_PRESET))
        for key, value in (overrides or {}).items():
            if '.' not in key:
                raise ConfigError(f'Override {key} must be in the format <section>.<name>')
            config.setValue(key, value)
        return cls(config, **kwargs)

    def validate(self):
        if self.stft.numFrames % POOL:
            raise ConfigError(f'{self.stft.numFrames} input frames per chunk is not a multiple of {POOL}')
        outFrames = self.stft.numFrames // POOL
        if outFrames != int(round(self.stft.chunkSeconds * self.frameRate)):
            raise ConfigError(f'Chunks give {outFrames} output frames, {self.frameRate} fps needs '
                              f'{self.stft.chunkSeconds * self.frameRate:g}')
        if not self.cameras:
            raise ConfigError('No camera views selected')
        if self.folds and not 0 <= self.fold < self.folds:
            raise ConfigError(f'Fold {self.fold} does not exist in {self.folds} folds')
        if any(cell.kind == GCC_PHAT for cell in self.plan):
            maxLag(self.geometry, self.cameras[0], self.stft)
        if any(cell.kind == SALSA_LITE for cell in self.plan) and self.stft.bins > self.stft.numFreqs:
            raise ConfigError(f'SALSA-Lite uses {self.stft.bins} bins, the STFT has {self.stft.numFreqs}')

    @property
    def confighash(self):
        return utils.configHash({'config': self.config.asDict(), 'seed': self.seed})

    @property
    def outFrames(self):
        return self.stft.numFrames // POOL

    def path(self, *parts):
        return os.path.join(self.output, *parts)

    def featureDir(self, kind, snr):
        return self.path('features', slug(kind), f'snr{snrName(snr)}')

    def targetPath(self, targetName, sequence, view):
        return self.path('labels', 'targets', targetName, f'{sequence}_v{view}.npz')

    def teacherPath(self, source, sequence):
        return self.path('labels', 'teachers', slug(source), f'{sequence}.csv')

    def expectedArtifacts(self, stage, plan=None):
        """ Returns the paths <stage> must have written for the cells of <plan> to run. """
        plan = plan or self.plan
        if stage == SIMULATE:
            return [self.path('scenes', f'{spec.name}.json') for spec, _ in self.sceneSpecs()]
        if stage == FEATURES:
            dirs = [self.featureDir(kind, snr) for kind, snr in dict.fromkeys((c.kind, c.snr) for c in plan)]
            return [os.path.join(d, name) for d in dirs for name in ('index.json', 'norm.npz')]
        if stage == LABELS:
            scenes = self.loadScenes()
            return [self.targetPath(name, spec.name, camera.view) for name in dict.fromkeys(c.targetName for c in plan)
                    for spec, _ in scenes for camera in self.cameras]
        if stage == TRAIN:
            return [self.path('models', c.id, 'model.pt') for c in plan]
        if stage == EVAL:
            return [self.path('eval', c.id, 'metrics.json') for c in plan]
        return []

    def numFrames(self, spec):
        return int(round(spec.duration * self.frameRate))

    def tolerances(self):
        return ToleranceSpec.fromConfig(self.config, self.cameras[0])

    def sceneSpecs(self):
        """ Returns ``(SceneSpec, split)`` for every synthetic sequence plus every
            ``[scene:NAME]`` section of the config. With ``experiment.folds`` set, the training
            sequences of fold ``experiment.fold`` are held out as validation sequences.
        """
        config = self.config
        numTrain = config.get('scene.train_sequences', 10, int)
        numTest = config.get('scene.test_sequences', 3, int)
        specs = []
        for i in range(numTrain + numTest):
            spec = SceneSpec.random(
                f'seq{i:03d}', seed=self.seed * 10007 + i,
                duration=config.get('scene.duration', 6.0, float),
                azimuthRange=config.get('scene.azimuth_range', 20.0, float),
                numKnots=config.get('scene.knots', 3, int),
                segmentMean=config.get('scene.segment_mean', 1.5, float),
                gapMean=config.get('scene.gap_mean', 0.6, float),
            )
            specs.append((spec, TRAIN_SPLIT if i < numTrain else TEST_SPLIT))
        for section in sorted(s for s in config.data if s.startswith('scene:')):
            spec = SceneSpec.fromConfig(config, section)
            spec.name = slug(section.split(':', 1)[1])
            specs.append((spec, config.get(f'{section}.split', TEST_SPLIT)))
        if self.folds:
            names = [spec.name for spec, split in specs if split == TRAIN_SPLIT]
            _, validation = sequenceFolds(names, self.folds)[self.fold]
            specs = [(spec, VALIDATION_SPLIT if spec.name in validation else split) for spec, split in specs]
        for spec, _ in specs:
            spec.checkInView(self.cameras)
        return specs

    def loadScenes(self):
        """ Returns ``(SceneSpec, split)`` for every sequence written by the simulate stage. """
        scenes = []
        for path in sorted(p for p in self.manifest.artifacts(SIMULATE) if p.endswith('.json')):
            data = utils.readJson(path)
            scenes.append((SceneSpec.fromDict(data), data['split']))
        return scenes

    def source(self, numSamples):
        """ Returns the mono source of the scenes, None for speech-shaped noise. """
        source = self.config.get('scene.source', 'noise')
        if source == 'noise':
            return None
        data, rate = soundfile.read(os.path.expanduser(source), dtype='float64', always_2d=True)
        if rate != self.geometry.sampleRate:
            raise ConfigError(f'{source} is sampled at {rate} Hz, the array expects {self.geometry.sampleRate} Hz')
        return data[:numSamples, 0]


def simulate(exp, plan=None):
    """ Renders every scene; writes ``scenes/<seq>.wav``, ``scenes/<seq>.json`` and the ground
        truth ``gt/<seq>.csv`` and ``gt/<seq>_va.csv``.
    """
    def render(spec, split):
        numSamples = int(round(spec.duration * exp.geometry.sampleRate))
        clip = renderScene(spec, exp.geometry, exp.source(numSamples))
        gt = groundTruthTrack(spec, exp.cameras, exp.frameRate, exp.numFrames(spec))
        return [
            writeClip(exp.path('scenes', f'{spec.name}.wav'), clip),
            utils.writeJson(exp.path('scenes', f'{spec.name}.json'), dict(spec.toDict(), split=split)),
            writeTrack(exp.path('gt', f'{spec.name}.csv'), gt, exp.cameras[0].width),
            writeVaTrack(exp.path('gt', f'{spec.name}_va.csv'), VaTrack(spec.voiceSegments, GT)),
        ]
    specs = exp.sceneSpecs()
    log.info('Rendering %d scenes into %s', len(specs), exp.output)
    return [p for paths in utils.threaded(render, specs, exp.workers) for p in paths]


def extractSequence(exp, spec, split, kind, snr, directory):
    """ Cuts one sequence into chunks and writes their features; returns index entries. """
    clip = readClip(exp.path('scenes', f'{spec.name}.wav'), exp.geometry, spec.voiceSegments, spec.name)
    clip = addPinkNoise(clip, snr, seed=spec.seed + NOISE_SEED_OFFSET)
    pad = split == TEST_SPLIT
    entries = []
    for i, (start, chunk) in enumerate(chunkClip(clip, exp.stft, exp.inferHop if pad else exp.trainHop, pad)):
        chunkId = f'{spec.name}_{i:03d}'
        tensor = extractFeatures(chunk, kind, exp.geometry, exp.stft)
        writeFeatureTensor(os.path.join(directory, f'{chunkId}.bin'), tensor)
        entries.append((chunkId, {'file': f'{chunkId}.bin', 'sequence': spec.name, 'start': start,
                                  'split': split, 'snr': snr}))
    return entries


def features(exp, plan=None):
    """ Extracts the features of every (kind, SNR) of the plan; each directory holds the chunk
        files, ``index.json`` and ``norm.npz`` fitted on the training chunks only.
    """
    plan = plan or exp.plan
    scenes = exp.loadScenes()
    artifacts = []
    for kind, snr in dict.fromkeys((cell.kind, cell.snr) for cell in plan):
        directory = exp.featureDir(kind, snr)
        index = FeatureIndex(os.path.join(directory, 'index.json'), kind)
        index.entries = {}
        jobs = [(exp, spec, split, kind, snr, directory) for spec, split in scenes]
        for entries in utils.threaded(extractSequence, jobs, exp.workers):
            for chunkId, entry in entries:
                index.add(chunkId, **entry)
        trainChunks = [readFeatureTensor(index.resolve(e['file'])) for _, e in index.filter(split=TRAIN_SPLIT)]
        stats = fitNormalization(trainChunks)
        artifacts += [index.save(), stats.save(os.path.join(directory, 'norm.npz'))]
        artifacts += [index.resolve(e['file']) for e in index.entries.values()]
        log.info('Extracted %d %s chunks at SNR %s', len(index), kind, snrName(snr))
    return artifacts


def labelSequence(exp, spec, supervisions):
    """ Writes the teacher tracks, the VAD track and the fused targets of one sequence. """
    config = exp.config
    numFrames = exp.numFrames(spec)
    width = exp.cameras[0].width
    gt = ingestTeacherTrack(exp.path('gt', f'{spec.name}.csv'), width, exp.frameRate, spec.name)
    artifacts = []
    vaTracks = {GT: readVaTrack(exp.path('gt', f'{spec.name}_va.csv'), GT)}
    if any(sup.vaSource == VAD for sup in supervisions):
        clip = readClip(exp.path('scenes', f'{spec.name}.wav'), exp.geometry, spec.voiceSegments, spec.name)
        vaTracks[VAD] = EnergyVad.fromConfig(config).detect(clip.samples[exp.geometry.centralMic], clip.sampleRate)
        artifacts.append(writeVaTrack(exp.path('labels', 'vad', f'{spec.name}.csv'), vaTracks[VAD]))
    corruption = {
        'occlusion': config.get('supervision.occlusion', 0.15, float),
        'jitter': config.get('supervision.jitter', 0.005, float),
        'fpRate': config.get('supervision.fp_rate', 0.20, float),
        'distractor': config.get('supervision.distractor', 0.25, float),
    }
    locations = {}
    for source in dict.fromkeys(sup.locationSource for sup in supervisions):
        locations[source] = teacherTrack(gt, source, spec.seed + TEACHER_SEED_OFFSET, **corruption)
        if source != GT:
            artifacts.append(writeTrack(exp.teacherPath(source, spec.name), locations[source], width))
    for sup in supervisions:
        va = rasterizeVa(vaTracks[sup.vaSource], exp.frameRate, numFrames)
        targetName = slug(sup.name) + ('-bypass' if sup.maskBypass else '')
        for camera in exp.cameras:
            target = fuse(locations[sup.locationSource], va, sup, camera.view)
            path = exp.targetPath(targetName, spec.name, camera.view)
            with utils.atomicWrite(path, 'wb') as handle:
                target.save(handle)
            artifacts.append(path)
    return artifacts


def labels(exp, plan=None):
    """ Builds the teacher tracks, VAD tracks and fused training targets the plan needs. """
    plan = plan or exp.plan
    supervisions = list({cell.targetName: cell.supervision for cell in plan}.values())
    scenes = exp.loadScenes()
    log.info('Labelling %d sequences for %s', len(scenes), ', '.join(s.name for s in supervisions))
    jobs = [(exp, spec, supervisions) for spec, _ in scenes]
    return [p for paths in utils.threaded(labelSequence, jobs, exp.workers) for p in paths]


def loadChunks(exp, cell, split):
    """ Returns ``{sequence: [(startSeconds, FeatureTensor)]}`` of normalized chunks. """
    directory = exp.featureDir(cell.kind, cell.snr)
    index = FeatureIndex(os.path.join(directory, 'index.json'))
    stats = NormStats.load(os.path.join(directory, 'norm.npz'))
    chunks = {}
    for chunkId, entry in index.filter(split=split):
        tensor = readFeatureTensor(index.resolve(entry['file']), chunkId, entry['sequence'], entry['start'])
        chunks.setdefault(entry['sequence'], []).append((entry['start'], applyNormalization(tensor, stats)))
    return chunks


def trainingSet(exp, cell, split=TRAIN_SPLIT):
    """ Pairs every normalized <split> chunk with the target slice of every camera view. """
    dataset = ChunkDataset()
    for sequence, chunks in sorted(loadChunks(exp, cell, split).items()):
        for camera in exp.cameras:
            target = TrainingTarget.load(exp.targetPath(cell.targetName, sequence, camera.view))
            for start, tensor in chunks:
                first = int(round(start * exp.frameRate))
                window = target.slice(first, first + exp.outFrames)
                if len(window) == exp.outFrames:
                    dataset.add(tensor, camera.view, window)
    return dataset


def trainCell(exp, cell):
    with utils.logContext(stage=TRAIN, seed=cell.seed):
        dataset = trainingSet(exp, cell)
        validation = trainingSet(exp, cell, VALIDATION_SPLIT) if exp.folds else None
        config = CrnnConfig.fromConfig(exp.config, numChannels(cell.kind, exp.geometry), exp.numViews)
        config.variant = cell.variant
        hyper = TrainHyper.fromConfig(exp.config, seed=cell.seed)
        model, history = train(dataset, config, hyper, showstatus=exp.showstatus, validation=validation)
        directory = exp.path('models', cell.id)
        return [
            saveCheckpoint(os.path.join(directory, 'model.pt'), model, history, extra={'cell': cell.toDict()}),
            writeHistory(os.path.join(directory, 'history.csv'), history),
        ]


def trainStage(exp, plan=None):
    """ Trains one model per cell of the plan into ``models/<cell>/``. """
    plan = plan or exp.plan
    return [p for cell in plan for p in trainCell(exp, cell)]


def evalCell(exp, cell, tolerances, scenes):
    """ Scores one trained model on the test sequences, and its location teacher alongside. """
    with utils.logContext(stage=EVAL, seed=cell.seed):
        model, _ = loadCheckpoint(exp.path('models', cell.id, 'model.pt'))
        width = exp.cameras[0].width
        views = [c.view for c in exp.cameras]
        k = exp.config.get('eval.thresholds', 101, int)
        adThreshold = exp.config.get('eval.ad_threshold', 'f1')
        student, teacher, artifacts = [], [], []
        for sequence, chunks in sorted(loadChunks(exp, cell, TEST_SPLIT).items()):
            numFrames = exp.numFrames(scenes[sequence])
            tracks = [inferTrack(model, chunks, view, 0.0, exp.frameRate, numFrames, sequence) for view in views]
            pred = LabelTrack.concat(tracks, f'{sequence}-{cell.id}')
            gt = ingestTeacherTrack(exp.path('gt', f'{sequence}.csv'), width, exp.frameRate, sequence)
            artifacts.append(writeTrack(exp.path('eval', cell.id, f'{sequence}.csv'), pred, width))
            student.append((sequence, pred, gt))
            source = cell.supervision.locationSource
            if source != GT:
                track = ingestTeacherTrack(exp.teacherPath(source, sequence), width, exp.frameRate, source)
                teacher.append((sequence, teacherAsPrediction(track.select(np.isin(track.views, views))), gt))
        if not student:
            raise NotFound(f'No test chunks for {cell}; set scene.test_sequences above 0')
        results = {
            'cell': cell.toDict(),
            'student': {t.name: evaluate(student, t, k, adThreshold, cell.id).toDict() for t in tolerances},
            'teacher': {t.name: evaluate(teacher, t, k, adThreshold, cell.supervision.locationSource).toDict()
                        for t in tolerances} if teacher else None,
        }
        artifacts.append(utils.writeJson(exp.path('eval', cell.id, 'metrics.json'), results))
        return artifacts


def evalStage(exp, plan=None):
    """ Runs every trained model over the test chunks and writes ``eval/<cell>/metrics.json``. """
    plan = plan or exp.plan
    tolerances = exp.tolerances()
    scenes = {spec.name: spec for spec, split in exp.loadScenes() if split == TEST_SPLIT}
    jobs = [(exp, cell, tolerances, scenes) for cell in plan]
    return [p for paths in utils.threaded(evalCell, jobs, exp.workers) for p in paths]


def report(exp, plan=None):
    """ Writes per cell metrics JSON, PR curve CSVs and an SVG plot, plus ``summary.json``
        and ``summary.csv`` with one row per cell and tolerance.
    """
    plan = plan or exp.plan
    artifacts, rows = [], []
    for cell in plan:
        results = utils.readJson(exp.path('eval', cell.id, 'metrics.json'))
        curves = {}
        for role in ('student', 'teacher'):
            for tolname, data in sorted((results.get(role) or {}).items()):
                result = MetricsReport.fromDict(data)
                curves[f'{role} {tolname}'] = result
                artifacts.append(writePrCsv(exp.path('report', f'{cell.id}_{role}_{tolname}.csv'), result))
                rows.append(dict(cell.toDict(), cell=cell.id, role=role, tolerance=tolname, ap=result.ap,
                                 **{k: getattr(result, k) for k in SUMMARY_METRICS}))
        artifacts.append(utils.writeJson(exp.path('report', f'{cell.id}.json'), results))
        artifacts.append(plotPrCurves(exp.path('report', f'{cell.id}.svg'), curves, cell.id))
    artifacts.append(utils.writeJson(exp.path('report', 'summary.json'), rows))
    artifacts.append(writeSummaryCsv(exp.path('report', 'summary.csv'), rows))
    return artifacts


def writeSummaryCsv(path, rows):
    columns = ['cell', 'role', 'tolerance', 'kind', 'variant', 'supervision', 'maskBypass', 'snr', 'seed',
               'ap', 'f1Best', 'aDPixels', 'aDDegrees', 'detErr']
    with utils.atomicWrite(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, columns, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({c: '' if row.get(c) is None else row[c] for c in columns})
    return path


STAGE_FUNCS = {
    SIMULATE: simulate,
    FEATURES: features,
    LABELS: labels,
    TRAIN: trainStage,
    EVAL: evalStage,
    REPORT: report,
}


def runStage(exp, stage, plan=None):
    """ Runs one stage after checking its prerequisites, and records it in the manifest.

        Raises:
            :exc:`~asdl.exceptions.NotFound`: A prerequisite stage has not run or its outputs
                were removed.
            :exc:`~asdl.exceptions.ConfigError`: Unknown stage.
    """
    if stage not in STAGE_FUNCS:
        raise ConfigError(f'Unknown stage: {stage} (choose from {", ".join(STAGES)})')
    plan = plan or exp.plan
    for required in PREREQUISITES[stage]:
        exp.manifest.require(required, stage, exp.expectedArtifacts(required, plan))
    stagehash = utils.configHash({'config': exp.confighash, 'plan': [c.id for c in plan]})
    with utils.logContext(stage=stage, seed=exp.seed, confighash=exp.confighash):
        log.info('Running %s for %d cells', stage, len(plan))
        artifacts = STAGE_FUNCS[stage](exp, plan)
        exp.manifest.record(stage, stagehash, artifacts)
    return artifacts


def runAll(exp, plan=None):
    """ Runs every stage in order; returns ``{stage: artifacts}``. """
    return {stage: runStage(exp, stage, plan) for stage in STAGES}
