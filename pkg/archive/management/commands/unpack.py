from archive.utils import unpack
from udss.command import UDSSCommand


class Command(UDSSCommand):
    help = 'Unpack a rootfs archive into DEST/<name>, e.g. onto a node-local tmpfs.'

    def add_arguments(self, parser):
        parser.add_argument('archive', help='.tar.gz written by flatten or pack')
        parser.add_argument('dest', help='existing directory')
        parser.add_argument(
            '--overwrite', action='store_true',
            help='replace DEST/<name> if it already exists',
        )

    def handle(self, *args, **options):
        path = unpack(options['archive'], options['dest'], overwrite=options['overwrite'])
        self.stdout.write(str(path))
