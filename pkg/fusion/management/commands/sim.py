import dataclasses

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from fusion.exceptions import SceneError
from fusion.stream.scene import build_scene
from fusion.stream.simulator import record_scene

from ._common import EXIT_CONFIG, config_or_exit


class Command(BaseCommand):
    help = 'Simulate an agent fleet on a synthetic desk scene and record its stream'

    def add_arguments(self, parser):
        parser.add_argument(
            '--out',
            required=True,
            help='Base name of the recording (<out>.hamr, .hdsc, .hlbl, .truth.json)'
        )
        parser.add_argument('--scene-seed', type=int, help='Scene and trajectory seed')
        parser.add_argument('--agents', type=int, help='Number of agents')
        parser.add_argument('--seconds', type=float, help='Recording length per agent')
        parser.add_argument('--rate', type=float, help='Frame rate in Hz')
        parser.add_argument(
            '--size',
            type=int,
            nargs=2,
            metavar=('WIDTH', 'HEIGHT'),
            help='Image size in pixels'
        )
        parser.add_argument('--config', help='Fusion config file with SIM_ keys')

    def handle(self, *args, **options):
        config = config_or_exit(options['config'])
        overrides = {
            'seed': options['scene_seed'],
            'agents': options['agents'],
            'seconds': options['seconds'],
            'rate_hz': options['rate'],
        }
        if options['size']:
            overrides['width'], overrides['height'] = options['size']
        sim = dataclasses.replace(config.simulator, **{k: v for k, v in overrides.items() if v is not None})
        try:
            sim.validate()
            scene = build_scene(sim, config.semantics.dim)
        except ImproperlyConfigured as exc:
            raise CommandError(f'configuration error: {exc}', returncode=EXIT_CONFIG) from exc
        except SceneError as exc:
            raise CommandError(f'scene rejected: {exc}') from exc

        result = record_scene(scene, options['out'], config.correspondence.descriptor_dim)
        for agent_id in sorted(scene.agents):
            rates = result.agent_mbps(agent_id)
            self.stdout.write(
                f"agent {agent_id}: {rates['total']:.2f} Mbps "
                f"(rgb {rates['rgb']:.2f}, geometry {rates['geometry']:.2f}, semantic {rates['semantic']:.2f})"
            )
        self.stdout.write(self.style.SUCCESS(
            f'Recorded {result.frames} frames in {result.messages} messages to {options["out"]}.hamr'
        ))
