from archive.utils import load_directory, pack
from images.layers import flatten_input, is_image_input
from images.manifest import default_image_name
from udss.command import UDSSCommand


class Command(UDSSCommand):
    help = 'Pack an unpacked rootfs directory or an image input into a single .tar.gz.'

    def add_arguments(self, parser):
        parser.add_argument('source', help='rootfs directory, OCI layout or docker-save tar')
        parser.add_argument('out', help='archive to write')
        parser.add_argument(
            '--name', default=None,
            help='top-level directory name (default: archive file name without .tar.gz)',
        )
        parser.add_argument('--gzip-level', type=int, choices=range(10), default=None, metavar='0-9')

    def config_flags(self, options):
        flags = super().config_flags(options)
        flags['GZIP_LEVEL'] = options.get('gzip_level')
        return flags

    def handle(self, *args, **options):
        source = options['source']
        if is_image_input(source):
            _, rootfs = flatten_input(source)
        else:
            rootfs = load_directory(source)
        name = options['name'] or default_image_name(options['out'])
        archive = pack(rootfs, name, options['out'], gzip_level=self.config.gzip_level)
        self.stdout.write(f"{archive.path} ({archive.top_level_name}/, {len(rootfs)} entries)")
