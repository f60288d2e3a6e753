import asyncio
import logging

from django.core.management.base import BaseCommand, CommandError

from fusion.correspondence import provider_from_config
from fusion.ledger import Ledger
from fusion.stream.core import FusionCore, core_for_scene
from fusion.stream.server import FusionServer

from ._common import EXIT_BIND, config_or_exit, load_truth, save_snapshot

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run the fusion server until SIGINT/SIGTERM'

    def add_arguments(self, parser):
        parser.add_argument(
            '--bind',
            help='host:port to listen on (default: SERVER_BIND from the config)'
        )
        parser.add_argument(
            '--config',
            help='Fusion config file (default: HAMR_CONFIG_FILE or the environment)'
        )
        parser.add_argument(
            '--truth',
            help='Ground truth of a simulated scene; enables the synthetic descriptor, feature and SfM providers'
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=0,
            help='Seed of the mapper (default: 0)'
        )
        parser.add_argument(
            '--save-map',
            help='Write the map snapshot here on shutdown'
        )
        parser.add_argument(
            '--no-ledger',
            action='store_true',
            help='Do not store sessions and alignment reports in the database'
        )

    def handle(self, *args, **options):
        config = config_or_exit(options['config'])
        if options['truth']:
            _, scene = load_truth(options['truth'])
            core = core_for_scene(scene, config, options['seed'])
        else:
            descriptors = provider_from_config(config.correspondence) if config.correspondence.provider == 'file' else None
            core = FusionCore(config, descriptors, seed=options['seed'])
            self.stdout.write(self.style.WARNING(
                'No SfM backend without --truth: only the metric origin agent will be mapped.'
            ))
        ledger = None if options['no_ledger'] else Ledger()
        server = FusionServer(
            core,
            on_report=ledger.on_report if ledger else None,
            on_session=ledger.on_session if ledger else None,
        )
        bind = options['bind'] or config.server.bind
        asyncio.run(self.run(server, bind))
        if options['save_map']:
            save_snapshot(core.mapper.snapshot(), options['save_map'])
            self.stdout.write(f"Map saved to {options['save_map']}")
        self.stdout.write(self.style.SUCCESS('Fusion server shut down cleanly'))

    async def run(self, server, bind):
        try:
            host, port = await server.start(bind)
        except (OSError, ValueError) as exc:
            raise CommandError(f'cannot bind {bind}: {exc}', returncode=EXIT_BIND) from exc
        self.stdout.write(self.style.SUCCESS(f'Listening on {host}:{port}'))
        server.install_signal_handlers()
        await server.run_until_stopped()
