"""Common ground of the management commands: run configuration flags and error reporting."""

import contextlib

from django.core.management.base import BaseCommand, CommandError

from deskformer import runconfig
from deskformer.errors import ConfigurationError
from matching.boxes import DegenerateBoxError
from matching.hungarian import AssignmentError
from matching.logic import DuplicateIdentityError
from network.checkpoint import CheckpointError
from network.transformer import QueryError
from numerics.tensor import ContractError, NonFiniteError, ShapeError
from sequences.motfiles import MotParseError
from sequences.storage import SequenceLayoutError
from training.logic import DivergenceError

DOMAIN_ERRORS = (
    ConfigurationError, CheckpointError, DivergenceError, MotParseError, SequenceLayoutError,
    DuplicateIdentityError, DegenerateBoxError, AssignmentError, QueryError, ShapeError,
    NonFiniteError, ContractError, OSError)


@contextlib.contextmanager
def reported_errors():
    """Turn domain errors into a one-line CommandError naming the error class."""
    try:
        yield
    except DOMAIN_ERRORS as err:
        raise CommandError("{}: {}".format(type(err).__name__, err))


class RunConfigCommand(BaseCommand):
    """A command driven by a RunConfig (settings < --config file < --set flags)."""

    def add_arguments(self, parser):
        parser.add_argument(
            '--config', metavar='PATH', help="flat key=value file overriding the settings")
        parser.add_argument(
            '--set', metavar='KEY=VALUE', action='append', default=[], dest='assignments',
            help="override one configuration key (repeatable)")
        parser.add_argument('--seed', type=int, help="run seed (default: settings.SEED)")

    def command_overrides(self, options):
        """Flag values of the concrete command, on top of the --set values."""
        return {}

    def run_config(self, options):
        file_values = runconfig.parse_config_file(options['config']) if options['config'] else {}
        flag_values = runconfig.parse_assignments(options['assignments'])
        flag_values.update(self.command_overrides(options))
        return runconfig.build_run_config(file_values, flag_values, seed=options['seed'])

    def write_header(self, run_config):
        self.stdout.write("# deskformer {} seed={}".format(self.name, run_config.seed))
