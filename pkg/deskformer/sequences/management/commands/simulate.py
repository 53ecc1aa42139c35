import logging
import os
from dataclasses import replace

from deskformer.commands import RunConfigCommand, reported_errors
from sequences import logic, storage

logger = logging.getLogger(__name__)


class Command(RunConfigCommand):
    help = "Render synthetic sequences (frames, ground truth, public detections)"
    name = 'simulate'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('output', help="directory receiving one folder per sequence")
        parser.add_argument('--name', default='SYNTH', help="sequence name (prefix)")
        parser.add_argument(
            '--count', type=int, default=1, help="number of sequences; seeds run seed + i")
        parser.add_argument('--n-objects', type=int, help="shortcut for --set n_objects=N")
        parser.add_argument('--seq-len', type=int, help="shortcut for --set seq_len=N")

    def command_overrides(self, options):
        overrides = {}
        if options['n_objects'] is not None:
            overrides['n_objects'] = str(options['n_objects'])
        if options['seq_len'] is not None:
            overrides['seq_len'] = str(options['seq_len'])
        return overrides

    def handle(self, *args, **options):
        with reported_errors():
            run_config = self.run_config(options)
            self.write_header(run_config)
            for index in range(options['count']):
                name = options['name']
                if options['count'] > 1:
                    name = '{}-{:02d}'.format(name, index + 1)
                config = replace(run_config.synth, seed=run_config.seed + index)
                sequence = logic.simulate(name, config)
                directory = os.path.join(options['output'], name)
                storage.save_sequence(sequence, directory)
                self.stdout.write("{}: {} frames, {} identities, seed {}".format(
                    directory, len(sequence), len(sequence.gt.identities()), config.seed))
        logger.info("Simulated %d sequence(s) under %s", options['count'], options['output'])
