import logging
import os

from deskformer.commands import RunConfigCommand, reported_errors
from network.checkpoint import check_compatible, load_checkpoint
from sequences import storage
from sequences.logic import SequenceGT
from sequences.motfiles import sequence_to_records, write_mot
from tracker.baseline import GreedyCenterTracker
from tracker.logic import FILTER_CENTER_DISTANCE, FILTER_IOU, FILTER_NONE, Tracker, track_sequence

logger = logging.getLogger(__name__)

FILTER_FLAGS = {'iou': FILTER_IOU, 'cd': FILTER_CENTER_DISTANCE}


class Command(RunConfigCommand):
    help = "Track sequences with a trained checkpoint; writes MOTChallenge result files"
    name = 'track'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('checkpoint')
        parser.add_argument(
            'sequences', nargs='+', help="sequence directories, or folders holding them")
        parser.add_argument(
            '--output', required=True, help="directory receiving <sequence>.txt results")
        parser.add_argument(
            '--public-dets', action='store_true',
            help="only start tracks licensed by det/det.txt (IoU filter unless set otherwise)")
        parser.add_argument(
            '--filter', choices=sorted(FILTER_FLAGS),
            help="public detection filter mode; implies --public-dets")
        parser.add_argument(
            '--no-track-queries', action='store_true',
            help="per-frame detection linked by nearest center instead of track queries")

    def command_overrides(self, options):
        overrides = {}
        if options['filter']:
            overrides['filter_mode'] = FILTER_FLAGS[options['filter']]
        if options['no_track_queries']:
            overrides['use_track_queries'] = 'false'
        return overrides

    def handle(self, *args, **options):
        with reported_errors():
            run_config = self.run_config(options)
            use_public_dets = options['public_dets'] or bool(options['filter'])
            if use_public_dets and run_config.tracker.filter_mode == FILTER_NONE:
                run_config = self.run_config(dict(options, filter='iou'))
            self.write_header(run_config)

            checkpoint = load_checkpoint(options['checkpoint'])
            check_compatible(checkpoint, run_config.network)
            model = checkpoint.build_model()

            directories = []
            for root in options['sequences']:
                directories.extend(storage.find_sequences(root))
            if not directories:
                raise storage.SequenceLayoutError(
                    "No sequences under {}".format(', '.join(options['sequences'])))
            os.makedirs(options['output'], exist_ok=True)

            for directory in directories:
                sequence = storage.load_sequence(directory)
                if use_public_dets and sequence.detections is None:
                    raise storage.SequenceLayoutError(
                        "No public detections in {}".format(directory))
                if run_config.tracker.use_track_queries:
                    tracker = Tracker(model, run_config.tracker)
                else:
                    tracker = GreedyCenterTracker(model, run_config.tracker)
                frames = track_sequence(tracker, sequence, use_public_dets)
                hypotheses = SequenceGT(frames, sequence.image_size)
                path = os.path.join(options['output'], sequence.name + '.txt')
                write_mot(sequence_to_records(hypotheses), path)
                self.stdout.write("{}: {} boxes, {} identities -> {}".format(
                    sequence.name, hypotheses.n_boxes, len(hypotheses.identities()), path))
