import logging
import os

from django.core.management.base import BaseCommand, CommandError

from deskformer.commands import reported_errors
from evaluation import logic
from sequences import storage
from sequences.motfiles import read_mot, records_to_sequence

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Score MOTChallenge result files against ground truth (CLEAR MOT and IDF1)"

    def add_arguments(self, parser):
        parser.add_argument('gt', help="sequence directory, or a folder holding them")
        parser.add_argument(
            'results', help="folder with <sequence>.txt files (or one file for one sequence)")
        parser.add_argument('--csv', metavar='PATH', help="also write the report as CSV")
        parser.add_argument(
            '--iou-threshold', type=float, default=logic.IOU_THRESHOLD,
            help="minimum IoU of a match (default %(default)s)")
        parser.add_argument('--seed', type=int, help="echoed into the report header")

    def _results_path(self, results, name, single):
        if os.path.isfile(results):
            return results if single else None
        path = os.path.join(results, name + '.txt')
        return path if os.path.exists(path) else None

    def handle(self, *args, **options):
        with reported_errors():
            directories = storage.find_sequences(options['gt'])
            if not directories:
                raise storage.SequenceLayoutError("No sequences under {}".format(options['gt']))
            infos = [storage.read_seqinfo(directory) for directory in directories]
            paths = [self._results_path(options['results'], info['name'], len(infos) == 1)
                     for info in infos]
            missing = [info['name'] for info, path in zip(infos, paths) if path is None]
            if missing:
                logger.error("No results for %s in %s", missing, options['results'])
                raise CommandError("SequenceLayoutError: no results for: {}".format(
                    ', '.join(missing)))

            reports = []
            for directory, info, path in zip(directories, infos, paths):
                gt = storage.load_gt(directory, info)
                hyp = records_to_sequence(read_mot(path), info['image_size'], info['length'])
                reports.append(logic.evaluate(info['name'], gt, hyp, options['iou_threshold']))
            rows = reports + [logic.total(reports)]

            if options['seed'] is not None:
                self.stdout.write("# deskformer eval seed={}".format(options['seed']))
            self.stdout.write(logic.format_table(rows), ending='')
            if options['csv']:
                with open(options['csv'], 'wt', encoding='ascii', newline='') as fh:
                    if options['seed'] is not None:
                        fh.write("# deskformer eval seed={}\n".format(options['seed']))
                    logic.write_csv(rows, fh)
