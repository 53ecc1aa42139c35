import logging
import os

from deskformer.commands import RunConfigCommand, reported_errors
from network.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from network.transformer import TrackingTransformer
from sequences import storage
from training.logic import LOG_COLUMNS, Trainer

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'model.ckpt'
LOG_NAME = 'loss.log'


class Command(RunConfigCommand):
    help = "Train the tracking transformer on sequence directories"
    name = 'train'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            'data', nargs='+', help="sequence directories, or folders holding them")
        parser.add_argument(
            '--output', required=True, help="directory for {} and {}".format(
                CHECKPOINT_NAME, LOG_NAME))
        parser.add_argument('--resume', metavar='CHECKPOINT', help="continue from a checkpoint")
        parser.add_argument('--steps', type=int, help="shortcut for --set steps=N")

    def command_overrides(self, options):
        if options['steps'] is None:
            return {}
        return {'steps': str(options['steps'])}

    def handle(self, *args, **options):
        with reported_errors():
            run_config = self.run_config(options)
            self.write_header(run_config)
            directories = []
            for root in options['data']:
                directories.extend(storage.find_sequences(root))
            if not directories:
                raise storage.SequenceLayoutError(
                    "No sequences under {}".format(', '.join(options['data'])))
            sequences = [storage.load_sequence(directory) for directory in directories]

            start_step, momentum = 0, None
            if options['resume']:
                checkpoint = load_checkpoint(options['resume'])
                check_compatible(checkpoint, run_config.network)
                model = checkpoint.build_model()
                start_step, momentum = checkpoint.step, checkpoint.momentum
                logger.info("Resuming from %s at step %d", options['resume'], start_step)
            else:
                model = TrackingTransformer(run_config.network)

            trainer = Trainer(
                model, sequences, run_config.augment, run_config.training,
                run_config.cost_weights, run_config.loss, start_step=start_step,
                momentum=momentum)

            os.makedirs(options['output'], exist_ok=True)
            checkpoint_path = os.path.join(options['output'], CHECKPOINT_NAME)
            log_path = os.path.join(options['output'], LOG_NAME)

            def on_checkpoint(current):
                save_checkpoint(checkpoint_path, current.model, current.step_count,
                                current.optimizer.buffers)

            new_log = not options['resume'] or not os.path.exists(log_path)
            with open(log_path, 'at', encoding='ascii', newline='\n') as log_stream:
                if new_log:
                    log_stream.write("# deskformer train seed={}\n".format(run_config.seed))
                    log_stream.write(','.join(LOG_COLUMNS) + '\n')
                else:
                    log_stream.write("# resumed at step {} seed={}\n".format(
                        start_step, run_config.seed))
                steps = trainer.run(log_stream, on_checkpoint)
            on_checkpoint(trainer)
        self.stdout.write("Trained {} steps on {} sequence(s); checkpoint {}".format(
            steps, len(sequences), checkpoint_path))
