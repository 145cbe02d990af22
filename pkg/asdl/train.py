# -*- coding: utf-8 -*-
import csv
import math

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from asdl import const, log, utils
from asdl.exceptions import BadRequest, Divergence, NotFound, ParseError
from asdl.model import Crnn, CrnnConfig, loss
from asdl.supervision import LabelTrack


class ChunkDataset(Dataset):
    """ Training examples ``(features, view, xHat, cHat, mask)`` held in memory.

        Parameters:
            items (list): ``(FeatureTensor or array, view, TrainingTarget)`` triples.
    """

    def __init__(self, items=()):
        self.features, self.views, self.targets = [], [], []
        for features, view, target in items:
            self.add(features, view, target)

    def __repr__(self):
        return f'<ChunkDataset:{len(self)}items>'

    def __len__(self):
        return len(self.features)

    def __getitem__(self, index):
        xHat, cHat, mask = self.targets[index]
        return self.features[index], self.views[index], xHat, cHat, mask

    def add(self, features, view, target):
        data = features.data if hasattr(features, 'kind') else features
        self.features.append(torch.as_tensor(np.asarray(data, dtype=np.float32)))
        self.views.append(int(view))
        self.targets.append(tuple(torch.as_tensor(np.asarray(t, dtype=np.float32))
                                  for t in (target.xHat, target.cHat, target.mask)))


class TrainHyper(object):
    """ Optimization settings: Adam with a constant learning rate for <decayStart> epochs, then
        multiplied by <decay> every epoch.
    """

    def __init__(self, epochs=50, batch=32, lr=1e-4, decayStart=30, decay=0.9, seed=0):
        self.epochs = int(epochs)
        self.batch = int(batch)
        self.lr = float(lr)
        self.decayStart = int(decayStart)
        self.decay = float(decay)
        self.seed = int(seed)

    def __repr__(self):
        return f'<TrainHyper:{self.epochs}ep:lr{self.lr:g}>'

    @classmethod
    def fromConfig(cls, config, seed=None):
        return cls(
            epochs=config.get('train.epochs', 50, int),
            batch=config.get('train.batch', 32, int),
            lr=config.get('train.lr', 1e-4, float),
            decayStart=config.get('train.decay_start', 30, int),
            decay=config.get('train.decay', 0.9, float),
            seed=config.get('experiment.seed', 0, int) if seed is None else seed,
        )

    def lrFactor(self, epoch):
        return self.decay ** max(0, epoch - self.decayStart + 1)

    def toDict(self):
        return dict(self.__dict__)


def train(dataset, config, hyper=None, model=None, showstatus=False, validation=None):
    """ Trains a student network and returns ``(model, history)``. Shuffling and weight
        initialization are seeded by ``hyper.seed``; two runs with the same inputs produce
        bit-identical histories.

        Parameters:
            dataset (:class:`ChunkDataset`): Training examples.
            config (:class:`~asdl.model.CrnnConfig`): Architecture, used when <model> is None.
            hyper (:class:`TrainHyper`): Optimization settings.
            model (:class:`~asdl.model.Crnn`): Model to continue training (optional).
            showstatus (bool): Show a tqdm progress bar.
            validation (:class:`ChunkDataset`): Held-out examples scored after every epoch
                (optional); their loss is recorded as ``valLoss``.

        Raises:
            :exc:`~asdl.exceptions.BadRequest`: Empty dataset.
            :exc:`~asdl.exceptions.Divergence`: The loss became NaN or infinite.
    """
    hyper = hyper or TrainHyper()
    if not len(dataset):
        raise BadRequest('Cannot train on an empty dataset')
    model = model or Crnn(config, seed=hyper.seed)
    model.train()
    generator = torch.Generator().manual_seed(hyper.seed)
    loader = DataLoader(dataset, batch_size=hyper.batch, shuffle=True, generator=generator, num_workers=0)
    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.lr, betas=(0.9, 0.999), eps=1e-8)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, hyper.lrFactor)
    history = []
    log.info('Training %s on %d examples for %d epochs', model, len(dataset), hyper.epochs)
    for epoch in utils.progress(range(hyper.epochs), showstatus, desc='train', unit='epoch'):
        losses = []
        for step, (x, views, xHat, cHat, mask) in enumerate(loader):
            optimizer.zero_grad()
            value = loss(model(x, views), (xHat, cHat, mask))
            if not torch.isfinite(value):
                lr = scheduler.get_last_lr()[0]
                raise Divergence(f'Loss is {value.item()} at epoch {epoch} step {step} (lr {lr:g})')
            value.backward()
            optimizer.step()
            losses.append(value.item())
        row = {'epoch': epoch, 'loss': float(np.mean(losses)), 'lr': scheduler.get_last_lr()[0]}
        if validation is not None and len(validation):
            row['valLoss'] = validationLoss(model, validation, hyper.batch)
        history.append(row)
        log.debug('Epoch %d loss %.6f', epoch, row['loss'])
        scheduler.step()
    return model, history


def validationLoss(model, dataset, batch=32):
    """ Returns the mean per-example loss of <model> over <dataset> in inference mode. """
    training = model.training
    model.eval()
    total = 0.0
    try:
        with torch.no_grad():
            for x, views, xHat, cHat, mask in DataLoader(dataset, batch_size=batch, shuffle=False):
                total += loss(model(x, views), (xHat, cHat, mask)).item() * len(x)
    finally:
        model.train(training)
    return total / len(dataset)


def saveCheckpoint(path, model, history=(), optimizer=None, epoch=None, extra=None):
    """ Saves a versioned checkpoint ``{version, config, confighash, state, optimizer, epoch,
        history, extra}`` atomically with :func:`torch.save`.
    """
    checkpoint = {
        'version': const.CHECKPOINT_VERSION,
        'config': model.config.toDict(),
        'confighash': model.config.hash,
        'state': model.state_dict(),
        'optimizer': optimizer.state_dict() if optimizer is not None else None,
        'epoch': epoch if epoch is not None else len(history),
        'history': list(history),
        'extra': extra or {},
    }
    tmppath = utils.atomicPath(path)
    torch.save(checkpoint, tmppath)
    return utils.commitPath(tmppath, path)


def loadCheckpoint(path):
    """ Returns ``(model, checkpoint)`` for a file written by :func:`saveCheckpoint`.

        Raises:
            :exc:`~asdl.exceptions.NotFound`: No such file.
            :exc:`~asdl.exceptions.ParseError`: Unsupported or corrupt checkpoint.
    """
    try:
        checkpoint = torch.load(path, map_location='cpu', weights_only=False)
    except FileNotFoundError:
        raise NotFound(f'Checkpoint not found: {path}') from None
    if not isinstance(checkpoint, dict) or checkpoint.get('version') != const.CHECKPOINT_VERSION:
        raise ParseError(f'{path} is not a version {const.CHECKPOINT_VERSION} checkpoint')
    config = CrnnConfig.fromDict(checkpoint['config'])
    if config.hash != checkpoint['confighash']:
        raise ParseError(f'{path}: configuration hash mismatch')
    model = Crnn(config)
    model.load_state_dict(checkpoint['state'])
    model.eval()
    return model, checkpoint


def writeHistory(path, history):
    """ Writes the per-epoch training curve as CSV. """
    with utils.atomicWrite(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        validated = any('valLoss' in row for row in history)
        writer.writerow(['epoch', 'loss', 'lr'] + (['val_loss'] if validated else []))
        for row in history:
            values = [row['epoch'], repr(row['loss']), repr(row['lr'])]
            writer.writerow(values + ([repr(row.get('valLoss'))] if validated else []))
    return path


def inferTrack(model, chunks, view, threshold=0.5, frameRate=30, numFrames=None, name='prediction'):
    """ Runs <model> over overlapping chunks of a long clip and stitches a per-frame track.
        Outputs of overlapping chunks are averaged; a frame is active when the averaged
        confidence reaches <threshold>, and only active frames keep a position.

        Parameters:
            model (:class:`~asdl.model.Crnn`): Trained network.
            chunks (list): ``(startSeconds, FeatureTensor)`` pairs, already normalized.
            view (int): Camera view to condition on.
            threshold (float): Confidence threshold of the active decision.
            frameRate (int): Output frame rate; one output frame per video frame.
            numFrames (int): Length of the returned track (default: up to the last chunk frame).
    """
    if not chunks:
        return LabelTrack(frameRate=frameRate, name=name)
    starts = [int(round(start * frameRate)) for start, _ in chunks]
    pred = model.predict(np.stack([tensor.data for _, tensor in chunks]), view)
    length = pred.x.shape[-1]
    total = numFrames or max(starts) + length
    sumX, sumC, counts = np.zeros(total), np.zeros(total), np.zeros(total)
    for i, start in enumerate(starts):
        stop = min(start + length, total)
        sumX[start:stop] += pred.x[i, :stop - start]
        sumC[start:stop] += pred.confidence[i, :stop - start]
        counts[start:stop] += 1
    covered = counts > 0
    confidence = np.where(covered, sumC / np.maximum(counts, 1), 0.0)
    active = covered & (confidence >= threshold)
    xNorm = np.where(active, sumX / np.maximum(counts, 1), math.nan)
    return LabelTrack.fromDense(active, xNorm, view, confidence, frameRate, name)
