# -*- coding: utf-8 -*-
import copy

import numpy as np
import torch
from torch import nn

from asdl import log, utils
from asdl.exceptions import BadRequest, SizeError, UnknownType

CNN_F = 'CNN-F'
CNN = 'CNN'
CRNN = 'CRNN'
VARIANTS = (CNN_F, CNN, CRNN)
NUM_BLOCKS = 4
POOL = 2 ** NUM_BLOCKS


def modelVariant(name):
    lookup = {v.lower(): v for v in VARIANTS}
    try:
        return lookup[str(name).strip().lower()]
    except KeyError:
        raise UnknownType(f'Unknown model variant: {name} (choose from {", ".join(VARIANTS)})') from None


class CrnnConfig(object):
    """ Architecture of the student network.

        Parameters:
            variant (str): ``CNN-F`` (short windows, no recurrence), ``CNN`` or ``CRNN``.
            inputChannels (int): ``Ch_in`` of the features.
            inputBins (int): ``F_in`` of the features.
            convChannels (tuple): Output channels of the four convolution blocks.
            gruHidden (int): Hidden units per direction of the biGRU.
            gruLayers (int): Stacked biGRU layers.
            fcDim (int): Output size of the first fully connected layer.
            numViews (int): Size of the camera one-hot vector.
            windowFrames (int): Input frames per window of the CNN-F variant.
    """

    def __init__(self, variant=CRNN, inputChannels=16, inputBins=64, convChannels=(16, 32, 64, 128),
                 gruHidden=64, gruLayers=2, fcDim=64, numViews=11, windowFrames=80):
        self.variant = modelVariant(variant)
        self.inputChannels = int(inputChannels)
        self.inputBins = int(inputBins)
        self.convChannels = tuple(int(c) for c in convChannels)
        self.gruHidden = int(gruHidden)
        self.gruLayers = int(gruLayers)
        self.fcDim = int(fcDim)
        self.numViews = int(numViews)
        self.windowFrames = int(windowFrames)
        if len(self.convChannels) != NUM_BLOCKS:
            raise BadRequest(f'Expected {NUM_BLOCKS} convolution block widths, got {self.convChannels}')
        if self.inputBins % POOL or self.windowFrames % POOL:
            raise BadRequest(f'Input bins and window frames must be multiples of {POOL}')

    def __repr__(self):
        return f'<CrnnConfig:{self.variant}:{self.inputChannels}x{self.inputBins}:{self.hash}>'

    @classmethod
    def fromConfig(cls, config, inputChannels, numViews=None):
        return cls(
            variant=config.get('model.variant', CRNN),
            inputChannels=inputChannels,
            inputBins=config.get('features.bins', 64, int),
            convChannels=config.getList('model.conv_channels', [16, 32, 64, 128], itemcast=int),
            gruHidden=config.get('model.gru_hidden', 64, int),
            gruLayers=config.get('model.gru_layers', 2, int),
            fcDim=config.get('model.fc_dim', 64, int),
            numViews=numViews or len(config.getList('camera.offsets', [0.0] * 11)),
            windowFrames=config.get('model.window_frames', 80, int),
        )

    def toDict(self):
        return dict(self.__dict__)

    @classmethod
    def fromDict(cls, data):
        return cls(**data)

    @property
    def hash(self):
        return utils.configHash(self.toDict())


class Prediction(object):
    """ Per output frame position ``x`` and confidence, both in [0, 1]. """

    def __init__(self, x, confidence):
        self.x = np.asarray(x, dtype=np.float64)
        self.confidence = np.asarray(confidence, dtype=np.float64)

    def __repr__(self):
        return f'<Prediction:{self.x.shape[-1]}frames>'

    def __len__(self):
        return self.x.shape[-1]


class ConvBlock(nn.Module):
    """ Two 3x3 convolutions with batch norm and ReLU, then 2x2 average pooling. """

    def __init__(self, inChannels, outChannels):
        super(ConvBlock, self).__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(inChannels, outChannels, 3, padding=1),
            nn.BatchNorm2d(outChannels),
            nn.ReLU(),
            nn.Conv2d(outChannels, outChannels, 3, padding=1),
            nn.BatchNorm2d(outChannels),
            nn.ReLU(),
            nn.AvgPool2d(2),
        )

    def forward(self, x):
        return self.layers(x)


class Crnn(nn.Module):
    """ Student network: four convolution blocks, frequency average pooling, an optional
        biGRU, then two fully connected layers with the camera one-hot concatenated between
        them. Outputs one ``(x, confidence)`` pair every 16 input frames.

        Parameters:
            config (:class:`CrnnConfig`): Architecture.
            seed (int): Seed of the weight initialization (optional).
    """

    def __init__(self, config, seed=None):
        super(Crnn, self).__init__()
        self.config = config
        widths = (config.inputChannels,) + config.convChannels
        self.blocks = nn.Sequential(*[ConvBlock(widths[i], widths[i + 1]) for i in range(NUM_BLOCKS)])
        features = config.convChannels[-1]
        self.gru = None
        if config.variant == CRNN:
            self.gru = nn.GRU(features, config.gruHidden, num_layers=config.gruLayers, batch_first=True,
                              bidirectional=True)
            features = 2 * config.gruHidden
        self.fc1 = nn.Linear(features, config.fcDim)
        self.fc2 = nn.Linear(config.fcDim + config.numViews, 2)
        self.resetParameters(seed)

    def __repr__(self):
        return f'<Crnn:{self.config.variant}:{self.numParameters()}params>'

    def numParameters(self):
        return sum(p.numel() for p in self.parameters())

    def resetParameters(self, seed=None):
        """ Kaiming-uniform convolution and linear weights, orthogonal recurrent matrices,
            zero biases.
        """
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            for module in self.modules():
                if isinstance(module, (nn.Conv2d, nn.Linear)):
                    nn.init.kaiming_uniform_(module.weight, nonlinearity='relu')
                    nn.init.zeros_(module.bias)
                elif isinstance(module, nn.BatchNorm2d):
                    module.reset_parameters()
                elif isinstance(module, nn.GRU):
                    for name, param in module.named_parameters():
                        if name.startswith('weight_hh'):
                            for gate in param.data.chunk(3, dim=0):
                                nn.init.orthogonal_(gate)
                        elif name.startswith('weight_ih'):
                            nn.init.xavier_uniform_(param)
                        else:
                            nn.init.zeros_(param)

    def viewOneHot(self, views, batch, device=None, dtype=None):
        """ Returns a ``(batch, numViews)`` one-hot from view indices, or <views> itself when
            it already is a one-hot matrix.
        """
        views = torch.as_tensor(views, device=device)
        if views.ndim == 2:
            return views.to(dtype=dtype)
        views = views.reshape(-1).long()
        if views.numel() == 1 and batch > 1:
            views = views.expand(batch)
        if views.numel() != batch or views.min() < 0 or views.max() >= self.config.numViews:
            raise BadRequest(f'Views {views.tolist()} invalid for a batch of {batch} and {self.config.numViews} views')
        return nn.functional.one_hot(views, self.config.numViews).to(dtype=dtype)

    def forward(self, x, views):
        """ Returns ``(batch, T_in / 16, 2)`` sigmoid outputs; ``[..., 0]`` is the position
            and ``[..., 1]`` the confidence.

            Parameters:
                x (Tensor): ``(batch, Ch_in, T_in, F_in)`` features.
                views (Tensor): ``(batch,)`` view indices or ``(batch, numViews)`` one-hot rows.
        """
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.inputChannels or x.shape[3] != cfg.inputBins:
            raise SizeError(f'Expected input (batch, {cfg.inputChannels}, T, {cfg.inputBins}), got {tuple(x.shape)}')
        batch, frames = x.shape[0], x.shape[2]
        window = cfg.windowFrames if cfg.variant == CNN_F else POOL
        if frames % window:
            raise SizeError(f'{cfg.variant} needs a multiple of {window} input frames, got {frames}')
        onehot = self.viewOneHot(views, batch, x.device, x.dtype)
        if cfg.variant == CNN_F:
            # each window is an independent short input
            numWindows = frames // window
            x = x.reshape(batch, cfg.inputChannels, numWindows, window, cfg.inputBins)
            x = x.permute(0, 2, 1, 3, 4).reshape(batch * numWindows, cfg.inputChannels, window, cfg.inputBins)
        h = self.blocks(x).mean(dim=3).transpose(1, 2)
        if cfg.variant == CNN_F:
            h = h.reshape(batch, frames // POOL, -1)
        if self.gru is not None:
            h, _ = self.gru(h)
        h = torch.relu(self.fc1(h))
        onehot = onehot.unsqueeze(1).expand(-1, h.shape[1], -1)
        return torch.sigmoid(self.fc2(torch.cat([h, onehot], dim=2)))

    def predict(self, features, views):
        """ Runs the network in inference mode on one or more feature arrays and returns a
            :class:`Prediction` (batched when <features> is 4-D).
        """
        data = features.data if hasattr(features, 'kind') else features
        x = torch.as_tensor(data if torch.is_tensor(data) else np.asarray(data), dtype=torch.float32)
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        training = self.training
        self.eval()
        try:
            with torch.no_grad():
                out = self.forward(x, views).double().numpy()
        finally:
            self.train(training)
        if single:
            out = out[0]
        return Prediction(out[..., 0], out[..., 1])


def forward(model, features, view):
    """ Inference-mode forward pass of <model> on one feature tensor for camera <view>. """
    return model.predict(features, view)


def targetTensors(target, dtype=torch.float32):
    """ Returns ``(xHat, cHat, mask)`` tensors from a TrainingTarget or a tuple of arrays. """
    if hasattr(target, 'mask'):
        target = (target.xHat, target.cHat, target.mask)
    return tuple(torch.as_tensor(np.asarray(t) if not torch.is_tensor(t) else t, dtype=dtype) for t in target)


def loss(pred, target):
    """ Masked loss ``sum_i mask_i (x_i - xHat_i)^2 + (C_i - CHat_i)^2``, summed over frames and
        averaged over the batch. Absent positions (NaN) never contribute.

        Parameters:
            pred (Tensor): ``(batch, T, 2)`` or ``(T, 2)`` network output.
            target: :class:`~asdl.supervision.TrainingTarget` or ``(xHat, cHat, mask)`` of matching shape.

        Raises:
            :exc:`~asdl.exceptions.SizeError`: Prediction and target lengths differ.
    """
    if isinstance(pred, Prediction):
        pred = torch.as_tensor(np.stack([pred.x, pred.confidence], axis=-1))
    xHat, cHat, mask = targetTensors(target, pred.dtype)
    if pred.shape[:-1] != xHat.shape or xHat.shape != cHat.shape or cHat.shape != mask.shape:
        raise SizeError(f'Prediction {tuple(pred.shape)} and target {tuple(xHat.shape)} are not aligned')
    xHat = torch.nan_to_num(xHat, nan=0.0)
    perFrame = mask * (pred[..., 0] - xHat) ** 2 + (pred[..., 1] - cHat) ** 2
    total = perFrame.sum(dim=-1)
    return total.mean() if total.ndim else total


def _batch(features, view, target):
    data = features.data if hasattr(features, 'kind') else features
    x = torch.as_tensor(np.asarray(data) if not torch.is_tensor(data) else data)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    xHat, cHat, mask = targetTensors(target)
    if xHat.ndim == 1:
        xHat, cHat, mask = xHat.unsqueeze(0), cHat.unsqueeze(0), mask.unsqueeze(0)
    views = torch.as_tensor(view).reshape(-1) if not torch.is_tensor(view) or view.ndim < 2 else view
    return x, views, (xHat, cHat, mask)


def backward(model, features, view, target):
    """ Returns the gradient of :func:`loss` with respect to every parameter of <model>, as an
        ordered dict ``name -> Tensor``. The model's parameters are left untouched.
    """
    x, views, target = _batch(features, view, target)
    dtype = next(model.parameters()).dtype
    x = x.to(dtype)
    target = tuple(t.to(dtype) for t in target)
    names, params = zip(*[(n, p) for n, p in model.named_parameters() if p.requires_grad])
    value = loss(model(x, views), target)
    grads = torch.autograd.grad(value, params, allow_unused=True)
    return {n: torch.zeros_like(p) if g is None else g for n, p, g in zip(names, params, grads)}


def checkGradients(model, features, view, target, numParams=100, step=1e-6, seed=0, floor=1e-3):
    """ Compares reverse-mode gradients against central differences on a float64 copy of
        <model>, for <numParams> randomly sampled scalar parameters. Returns the largest error
        ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    model = copy.deepcopy(model).double()
    analytic = backward(model, features, view, target)
    x, views, target = _batch(features, view, target)
    x = x.double()
    target = tuple(t.double() for t in target)
    params = dict(model.named_parameters())
    candidates = [(name, i) for name, p in params.items() for i in range(p.numel())]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(numParams, len(candidates)), replace=False)
    worst = 0.0
    with torch.no_grad():
        for pick in sorted(picks):
            name, index = candidates[pick]
            flat = params[name].data.view(-1)
            original = flat[index].item()
            flat[index] = original + step
            upper = loss(model(x, views), target).item()
            flat[index] = original - step
            lower = loss(model(x, views), target).item()
            flat[index] = original
            numeric = (upper - lower) / (2 * step)
            exact = analytic[name].reshape(-1)[index].item()
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            if error > worst:
                log.debug('Gradient mismatch on %s[%d]: %.3e vs %.3e', name, index, exact, numeric)
            worst = max(worst, error)
    return worst


def layerGradientChecks(seed=0):
    """ Returns ``{layer: (func, inputs)}`` for small float64 instances of every layer type of
        the network and for the masked loss. The inputs of a layer are its input tensor followed
        by all of its parameters, so :func:`torch.autograd.gradcheck` differentiates both.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        conv = nn.Conv2d(3, 4, 3, padding=1).double()
        norm = nn.BatchNorm2d(50).double().train()
        gru = nn.GRU(3, 2, num_layers=2, batch_first=True, bidirectional=True).double()
        linear = nn.Linear(12, 8).double()
        image = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
        wide = torch.randn(2, 50, 2, 2, dtype=torch.float64, requires_grad=True)
        sequence = torch.randn(2, 5, 3, dtype=torch.float64, requires_grad=True)
        vector = torch.randn(3, 12, dtype=torch.float64, requires_grad=True)
        pred = torch.rand(2, 5, 2, dtype=torch.float64, requires_grad=True)
        target = (torch.rand(2, 5, dtype=torch.float64), (torch.rand(2, 5) > 0.5).double(),
                  (torch.rand(2, 5) > 0.5).double())
    # gradcheck perturbs the parameter tensors in place, so the layers see every change
    return {
        'conv': (lambda t, *p: conv(t), (image,) + tuple(conv.parameters())),
        'batchnorm': (lambda t, *p: norm(t), (wide,) + tuple(norm.parameters())),
        'pool': (lambda t: nn.functional.avg_pool2d(t, 2), (image,)),
        'gru': (lambda t, *p: gru(t)[0], (sequence,) + tuple(gru.parameters())),
        'linear': (lambda t, *p: linear(t), (vector,) + tuple(linear.parameters())),
        'sigmoid': (torch.sigmoid, (vector,)),
        'loss': (lambda t: loss(t, target), (pred,)),
    }


def checkLayerGradients(seed=0):
    """ Runs :func:`torch.autograd.gradcheck` on every check of :func:`layerGradientChecks`.
        Returns ``{layer: passed}``.
    """
    results = {}
    for name, (func, inputs) in layerGradientChecks(seed).items():
        passed = torch.autograd.gradcheck(func, inputs, eps=1e-6, atol=1e-6, rtol=1e-4, raise_exception=False)
        log.debug('Gradient check of %s over %d values: %s', name, sum(t.numel() for t in inputs), passed)
        results[name] = bool(passed)
    return results


def freezeBatchNorm(model):
    """ Puts every batch norm layer of <model> in inference mode, so it normalizes with its
        running statistics even while the rest of the model trains.
    """
    for module in model.modules():
        if isinstance(module, nn.modules.batchnorm._BatchNorm):
            module.eval()
    return model
