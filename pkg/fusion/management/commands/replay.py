import asyncio

from django.core.management.base import BaseCommand, CommandError

from fusion.stream.recordings import RecordingPaths
from fusion.stream.replay import replay


class Command(BaseCommand):
    help = 'Replay a recorded stream into a running fusion server'

    def add_arguments(self, parser):
        parser.add_argument('--file', required=True, help='Recording (.hamr or its base name)')
        parser.add_argument(
            '--speed',
            type=float,
            default=1.0,
            help='Timing multiplier; 0 sends as fast as possible (default: 1)'
        )
        parser.add_argument('--to', default='127.0.0.1:7878', help='Server address host:port')

    def handle(self, *args, **options):
        path = RecordingPaths.of(options['file']).stream
        if not path.exists():
            raise CommandError(f'{path} does not exist')
        try:
            sent = asyncio.run(replay(path, options['speed'], options['to']))
        except (OSError, ValueError) as exc:
            raise CommandError(f'replay to {options["to"]} failed: {exc}') from exc
        self.stdout.write(self.style.SUCCESS(f'Sent {sent} frames'))
