import time

from django.core.management.base import BaseCommand, CommandError

from fusion.exceptions import FormatError
from fusion.semantics import query, read_label_table

from ._common import load_snapshot, parse_floats


class Command(BaseCommand):
    help = 'Rank map Gaussians by semantic similarity to a label or vector'

    def add_arguments(self, parser):
        parser.add_argument('--map', required=True, help='Map snapshot (.npz)')
        parser.add_argument('--field', help='Field checkpoint (default: <map>.hfld)')
        target = parser.add_mutually_exclusive_group(required=True)
        target.add_argument('--label', help='Label name looked up in --labels')
        target.add_argument('--vector', help='Comma-separated embedding')
        parser.add_argument('--labels', help='Label table (.hlbl) for --label')
        parser.add_argument('--top-k', type=int, default=5, help='Number of results (default: 5)')

    def handle(self, *args, **options):
        snapshot = load_snapshot(options['map'], options['field'])
        if snapshot.field is None:
            raise CommandError('no field checkpoint found for this map')
        if options['label']:
            if not options['labels']:
                raise CommandError('--label needs --labels')
            try:
                labels = read_label_table(options['labels'])
            except (FormatError, OSError) as exc:
                raise CommandError(str(exc)) from exc
            if options['label'] not in labels:
                raise CommandError(f"unknown label {options['label']!r}; known: {', '.join(sorted(labels))}")
            embedding = labels[options['label']]
        else:
            embedding = parse_floats(options['vector'], snapshot.field.dim, '--vector')

        started = time.perf_counter()
        hits = query(snapshot.gaussians, snapshot.field, embedding, options['top_k'])
        elapsed_ms = 1000.0 * (time.perf_counter() - started)
        g = snapshot.gaussians
        for rank, (index, score) in enumerate(hits, start=1):
            x, y, z = g.means[index]
            self.stdout.write(
                f'{rank:>3}  #{index:<7} score={score:.4f}  at ({x:.3f}, {y:.3f}, {z:.3f})  agent={int(g.agent[index])}'
            )
        self.stdout.write(self.style.SUCCESS(f'{len(hits)} results in {elapsed_ms:.1f} ms'))
