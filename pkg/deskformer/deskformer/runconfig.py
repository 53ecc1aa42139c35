"""Run configuration shared by the management commands.

Values are layered, lowest precedence first:

1. the component dicts of the active settings configuration (``NETWORK``, ``TRACKER``...),
2. a flat ``key=value`` file given with ``--config`` (``#`` starts a comment),
3. ``--set key=value`` flags and the dedicated flags of each command.

Keys are the field names of the component configs, e.g. ``d_model=32`` or
``sigma_track=0.5``. The run ``seed`` also seeds the track augmentations and the synthetic
sequences.
"""

import dataclasses
import logging
from dataclasses import dataclass

from django.conf import settings

from deskformer.errors import ConfigurationError
from matching.costs import CostWeights
from network.transformer import ModelConfig
from sequences.logic import SynthConfig
from tracker.logic import TrackerConfig
from training.augment import AugmentConfig
from training.logic import TrainingConfig
from training.losses import LossConfig

__all__ = ['ConfigurationError', 'RunConfig', 'build_run_config', 'parse_config_file',
           'parse_assignments']

logger = logging.getLogger(__name__)

# RunConfig attribute -> (settings dict, component config)
COMPONENTS = {
    'network': ('NETWORK', ModelConfig),
    'cost_weights': ('COST_WEIGHTS', CostWeights),
    'loss': ('LOSS', LossConfig),
    'augment': ('AUGMENT', AugmentConfig),
    'tracker': ('TRACKER', TrackerConfig),
    'synth': ('SYNTH', SynthConfig),
    'training': ('TRAINING', TrainingConfig),
}
SEED_KEY = 'seed'

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


@dataclass(frozen=True)
class RunConfig:
    network: ModelConfig
    cost_weights: CostWeights
    loss: LossConfig
    augment: AugmentConfig
    tracker: TrackerConfig
    synth: SynthConfig
    training: TrainingConfig
    seed: int


def _field_types():
    """Flat key -> (component attribute, field type); `seed` belongs to the run."""
    types = {}
    for attribute, (_, component) in COMPONENTS.items():
        for field in dataclasses.fields(component):
            if field.name != SEED_KEY:
                types[field.name] = (attribute, field.type)
    return types


def _coerce(key, value, kind):
    if isinstance(value, str):
        text = value.strip()
        if kind is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ConfigurationError("{}: expected a boolean, got {!r}".format(key, value))
        try:
            if kind is int:
                return int(text)
            if kind is float:
                return float(text)
        except ValueError:
            raise ConfigurationError("{}: expected {}, got {!r}".format(
                key, kind.__name__, value))
        return text
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind in (int, float, bool) and not isinstance(value, kind):
        raise ConfigurationError("{}: expected {}, got {!r}".format(key, kind.__name__, value))
    return value


def parse_assignments(assignments, origin='--set'):
    """Turn ``key=value`` strings into a dict; later keys win."""
    values = {}
    for assignment in assignments:
        key, sep, value = assignment.partition('=')
        if not sep or not key.strip():
            raise ConfigurationError("{}: expected key=value, got {!r}".format(
                origin, assignment))
        values[key.strip()] = value.strip()
    return values


def parse_config_file(path):
    """Read a flat ``key=value`` file; blank lines and ``#`` comments are ignored."""
    try:
        with open(path, 'rt', encoding='utf-8') as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise ConfigurationError("Can not read config file {}: {}".format(path, err))
    assignments = []
    for line in lines:
        line = line.split('#', 1)[0].strip()
        if line:
            assignments.append(line)
    return parse_assignments(assignments, origin=path)


def build_run_config(file_values=None, flag_values=None, seed=None):
    """Assemble and validate a RunConfig from settings, file values and flag values.

    `seed`, when given, beats a ``seed`` key from the file or the flags.
    """
    types = _field_types()
    merged = {}
    for attribute, (setting_name, _) in COMPONENTS.items():
        for key, value in getattr(settings, setting_name, {}).items():
            if key == SEED_KEY or key not in types:
                raise ConfigurationError("Unknown key {!r} in settings.{}".format(
                    key, setting_name))
            merged[key] = value
    run_seed = settings.SEED

    for layer in (file_values or {}, flag_values or {}):
        for key, value in layer.items():
            if key == SEED_KEY:
                run_seed = _coerce(key, value, int)
                continue
            if key not in types:
                raise ConfigurationError("Unknown configuration key {!r}".format(key))
            merged[key] = value
    if seed is not None:
        run_seed = int(seed)

    per_component = {attribute: {} for attribute in COMPONENTS}
    for key, value in merged.items():
        attribute, kind = types[key]
        per_component[attribute][key] = _coerce(key, value, kind)
    per_component['augment'][SEED_KEY] = run_seed
    per_component['synth'][SEED_KEY] = run_seed

    built = {attribute: COMPONENTS[attribute][1](**values)
             for attribute, values in per_component.items()}
    logger.debug("Run configuration: seed %d, %s", run_seed, built)
    return RunConfig(seed=run_seed, **built)


def describe(run_config):
    """``key=value`` lines of every setting, sorted; the format `parse_config_file` reads."""
    lines = ['seed={}'.format(run_config.seed)]
    values = []
    for attribute in COMPONENTS:
        component = getattr(run_config, attribute)
        for field in dataclasses.fields(component):
            if field.name != SEED_KEY:
                values.append((field.name, getattr(component, field.name)))
    lines.extend('{}={}'.format(key, value) for key, value in sorted(values))
    return lines
