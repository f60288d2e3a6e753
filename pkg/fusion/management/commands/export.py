from django.core.management.base import BaseCommand, CommandError

from fusion.geometry import SE3Pose
from fusion.splatmap.export import write_ply, write_png_depth, write_png_rgb
from fusion.splatmap.frames import Intrinsics
from fusion.stream.evaluation import render_view

from ._common import load_snapshot, parse_floats


class Command(BaseCommand):
    help = 'Export a map snapshot as a PLY point cloud or render it to PNG'

    def add_arguments(self, parser):
        parser.add_argument('--map', required=True, help='Map snapshot (.npz)')
        parser.add_argument('--ply', help='Write one vertex per Gaussian to this PLY file')
        parser.add_argument('--png', help='Render the map to this PNG file (needs --pose)')
        parser.add_argument('--depth-png', help='Also write the rendered depth as 16-bit millimetres')
        parser.add_argument(
            '--pose',
            help='Camera-to-world pose qw,qx,qy,qz,tx,ty,tz in the global frame'
        )
        parser.add_argument(
            '--size',
            type=int,
            nargs=2,
            default=(64, 64),
            metavar=('WIDTH', 'HEIGHT'),
            help='Render size (default: 64 64)'
        )
        parser.add_argument('--focal', type=float, help='Focal length in pixels (default: 0.8 * width)')

    def handle(self, *args, **options):
        if not options['ply'] and not options['png']:
            raise CommandError('nothing to do: pass --ply and/or --png')
        snapshot = load_snapshot(options['map'])
        if options['ply']:
            count = write_ply(snapshot.gaussians, options['ply'])
            self.stdout.write(self.style.SUCCESS(f"Wrote {count} vertices to {options['ply']}"))
        if options['png']:
            if not options['pose']:
                raise CommandError('--png needs --pose')
            try:
                pose = SE3Pose.from_array(parse_floats(options['pose'], 7, '--pose'))
            except ValueError as exc:
                raise CommandError(f'bad pose: {exc}') from exc
            width, height = options['size']
            focal = options['focal'] or 0.8 * width
            intr = Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
            result = render_view(snapshot.gaussians, intr, pose)
            write_png_rgb(result.rgb, options['png'])
            if options['depth_png']:
                write_png_depth(result.depth * (result.alpha > 0.5), options['depth_png'])
            self.stdout.write(self.style.SUCCESS(f"Rendered {width}x{height} view to {options['png']}"))
