from archive.utils import pack
from images.layers import flatten_input
from images.manifest import default_image_name
from udss.command import UDSSCommand


class Command(UDSSCommand):
    help = (
        'Flatten an OCI image layout or docker-save tar into a single rootfs '
        'archive (.tar.gz) with one top-level directory.'
    )

    def add_arguments(self, parser):
        parser.add_argument('image', help='OCI layout directory, OCI archive or docker-save tar')
        parser.add_argument('out', help='archive to write, e.g. tf.tar.gz')
        parser.add_argument(
            '--name', default=None,
            help='top-level directory name inside the archive (default: archive file name without .tar.gz)',
        )
        parser.add_argument('--gzip-level', type=int, choices=range(10), default=None, metavar='0-9')
        parser.add_argument('--jobs', type=int, default=None, help='threads decompressing layers')

    def config_flags(self, options):
        flags = super().config_flags(options)
        flags['GZIP_LEVEL'] = options.get('gzip_level')
        return flags

    def handle(self, *args, **options):
        manifest, rootfs = flatten_input(options['image'], max_workers=options['jobs'])
        name = options['name'] or default_image_name(options['out'])
        archive = pack(rootfs, name, options['out'], gzip_level=self.config.gzip_level)
        self.stdout.write(
            f"{manifest.image_name}: {len(manifest.layers)} layers -> {archive.path} "
            f"({archive.top_level_name}/, {len(rootfs)} entries, {rootfs.total_size_bytes} bytes)"
        )
