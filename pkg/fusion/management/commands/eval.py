from django.core.management.base import BaseCommand, CommandError

from fusion.ledger import record_evaluation
from fusion.stream.evaluation import evaluate, format_table
from fusion.stream.pipeline import MODES, MODE_FUSION, run_pipeline
from fusion.stream.recordings import RecordingPaths, read_recording

from ._common import config_or_exit, load_snapshot, load_truth, save_snapshot


class Command(BaseCommand):
    help = 'Evaluate a map snapshot, or run a recording through the pipeline and evaluate the result'

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--map', help='Map snapshot (.npz) to evaluate')
        source.add_argument('--recording', help='Recording to run through the lock-step pipeline')
        parser.add_argument(
            '--truth',
            help='Ground-truth document (default: <recording>.truth.json)'
        )
        parser.add_argument(
            '--holdout-n',
            type=int,
            help='Every n-th frame per agent is held out (default: POOL_HOLDOUT_EVERY)'
        )
        parser.add_argument(
            '--mode',
            choices=MODES,
            default=MODE_FUSION,
            help='Pipeline mode for --recording (default: fusion)'
        )
        parser.add_argument('--seed', type=int, default=0, help='Mapper seed for --recording')
        parser.add_argument(
            '--eval-every',
            type=int,
            default=0,
            help='Also report held-out PSNR every n ingested frames (--recording only; default: off)'
        )
        parser.add_argument('--save-map', help='Write the resulting map snapshot (--recording only)')
        parser.add_argument('--config', help='Fusion config file')
        parser.add_argument(
            '--persist',
            action='store_true',
            help='Store the metrics as EvaluationRecord rows'
        )

    def handle(self, *args, **options):
        config = config_or_exit(options['config'])
        holdout = options['holdout_n'] if options['holdout_n'] is not None else config.pool.holdout_every
        if options['holdout_n'] is not None:
            config = config.with_section('pool', holdout_every=holdout)

        if options['map']:
            if not options['truth']:
                raise CommandError('--map needs --truth to know the scene')
            doc, scene = load_truth(options['truth'])
            snapshot = load_snapshot(options['map'])
            table = evaluate(snapshot, scene, holdout, doc['transforms'])
            mode = 'snapshot'
        else:
            paths = RecordingPaths.of(options['recording'])
            doc, scene = load_truth(options['truth'] or paths.truth)
            messages, truncated = read_recording(paths.stream)
            if truncated:
                self.stdout.write(self.style.WARNING(f'{paths.stream} is truncated, using complete messages'))
            result = run_pipeline(scene, messages, config, options['mode'], options['seed'],
                                  eval_every_frames=options['eval_every'])
            table = result.table
            mode = options['mode']
            if options['save_map']:
                save_snapshot(result.snapshot, options['save_map'])
            timing = ', '.join(f'{k} {v:.1f}' for k, v in sorted(result.timing.items()))
            self.stdout.write(f'{result.frames} frames in {result.wall_s:.1f} s ({timing})')
            for frames, psnr in sorted(result.history.items()):
                self.stdout.write(f'  after {frames:>6} frames: held-out PSNR {psnr:.2f} dB')

        self.stdout.write(format_table(table))
        if table.mean_psnr is not None:
            self.stdout.write(f'mean PSNR {table.mean_psnr:.2f} dB')
        if options['persist']:
            run = record_evaluation(table, mode)
            self.stdout.write(self.style.SUCCESS(f'Stored evaluation {run}'))
