"""Versioned container for model weights.

Layout::

    DESKFORMER-CHECKPOINT 1\\n
    {"config": {...}, "momentum": [...], "step": N, "tensors": [...]}\\n
    <raw little-endian float64 payloads, tensors first, then momentum buffers>

The JSON header is written with sorted keys and every tensor list is sorted by name, so
saving the same weights twice produces identical bytes.
"""

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from network.transformer import ModelConfig, TrackingTransformer

logger = logging.getLogger(__name__)

MAGIC = 'DESKFORMER-CHECKPOINT'
FORMAT_VERSION = 1
_DTYPE = np.dtype('<f8')


class CheckpointError(ValueError):
    """The checkpoint file is unreadable or does not fit the model."""


@dataclass
class Checkpoint:
    config: ModelConfig
    step: int = 0
    parameters: dict = field(default_factory=dict)
    momentum: dict = field(default_factory=dict)

    def build_model(self):
        model = TrackingTransformer(self.config)
        restore(model, self.parameters)
        return model


def _describe(arrays):
    return [{'name': name, 'shape': list(arrays[name].shape)} for name in sorted(arrays)]


def save_checkpoint(path, model, step=0, momentum=None):
    parameters = {name: tensor.data for name, tensor in model.named_parameters()}
    momentum = momentum or {}
    header = {
        'config': asdict(model.config),
        'step': int(step),
        'tensors': _describe(parameters),
        'momentum': _describe(momentum),
    }
    with open(path, 'wb') as fh:
        fh.write('{} {}\n'.format(MAGIC, FORMAT_VERSION).encode('ascii'))
        fh.write(json.dumps(header, sort_keys=True).encode('ascii') + b'\n')
        for arrays in (parameters, momentum):
            for name in sorted(arrays):
                fh.write(np.ascontiguousarray(arrays[name], dtype=_DTYPE).tobytes())
    logger.info("Checkpoint saved to %s (step %d, %d tensors)", path, step, len(parameters))


def _read_arrays(fh, entries, path):
    arrays = {}
    for entry in entries:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        payload = fh.read(count * _DTYPE.itemsize)
        if len(payload) != count * _DTYPE.itemsize:
            raise CheckpointError("{}: truncated payload for {}".format(path, entry['name']))
        arrays[entry['name']] = np.frombuffer(payload, dtype=_DTYPE).astype(
            np.float64).reshape(shape)
    return arrays


def load_checkpoint(path):
    try:
        fh = open(path, 'rb')
    except OSError as err:
        raise CheckpointError("Can not open checkpoint {}: {}".format(path, err))
    with fh:
        magic = fh.readline().decode('ascii', errors='replace').split()
        if len(magic) != 2 or magic[0] != MAGIC:
            raise CheckpointError("{} is not a deskformer checkpoint".format(path))
        if magic[1] != str(FORMAT_VERSION):
            raise CheckpointError("{}: unsupported checkpoint version {}".format(
                path, magic[1]))
        try:
            header = json.loads(fh.readline().decode('ascii'))
            config = ModelConfig(**header['config'])
            entries, momentum_entries = header['tensors'], header['momentum']
            step = int(header['step'])
        except (ValueError, KeyError, TypeError) as err:
            # ConfigurationError is a ValueError too
            raise CheckpointError("{}: bad header ({})".format(path, err))
        parameters = _read_arrays(fh, entries, path)
        momentum = _read_arrays(fh, momentum_entries, path)
        if fh.read(1):
            raise CheckpointError("{}: trailing bytes after payload".format(path))
    logger.debug("Loaded checkpoint %s at step %d", path, step)
    return Checkpoint(config=config, step=step, parameters=parameters, momentum=momentum)


def restore(model, parameters):
    """Copy `parameters` (name -> array) into the model in place."""
    named = dict(model.named_parameters())
    if set(named) != set(parameters):
        missing = sorted(set(named) - set(parameters))
        unexpected = sorted(set(parameters) - set(named))
        raise CheckpointError("Parameter names differ (missing {}, unexpected {})".format(
            missing, unexpected))
    for name, tensor in named.items():
        value = parameters[name]
        if value.shape != tensor.shape:
            raise CheckpointError("Shape mismatch for {}: checkpoint {} vs model {}".format(
                name, value.shape, tensor.shape))
        tensor.data = np.array(value, dtype=np.float64)


def check_compatible(checkpoint, config):
    """Fail when a checkpoint was trained with a different network configuration."""
    if checkpoint.config != config:
        raise CheckpointError("Checkpoint network {} does not match configured {}".format(
            asdict(checkpoint.config), asdict(config)))
