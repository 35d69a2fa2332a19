from rest_framework.renderers import JSONRenderer

from runtime.probe import probe_support
from runtime.serializers import SupportReportSerializer
from udss.command import UDSSCommand


class Command(UDSSCommand):
    help = 'Report whether this node can run unprivileged containers.'

    def add_arguments(self, parser):
        parser.add_argument('--json', action='store_true', help='print the report as JSON')

    def handle(self, *args, **options):
        report = probe_support()
        if options['json']:
            data = SupportReportSerializer(report).data
            self.stdout.write(JSONRenderer().render(data).decode())
            return

        self.stdout.write(f"user namespaces: {'yes' if report.user_namespaces else 'no'}")
        if report.reason:
            self.stdout.write(f"  reason: {report.reason}")
        self.stdout.write(f"kernel: {report.kernel}")
        if report.unprivileged_userns_clone is not None:
            self.stdout.write(f"kernel.unprivileged_userns_clone: {report.unprivileged_userns_clone}")
        if report.max_user_namespaces is not None:
            self.stdout.write(f"user.max_user_namespaces: {report.max_user_namespaces}")
        if report.apparmor_restricted:
            self.stdout.write("kernel.apparmor_restrict_unprivileged_userns: 1")
        self.stdout.write(f"overlay: {'yes' if report.overlay else 'no'}")
        self.stdout.write(f"nesting depth: {report.nesting_depth}")
        if report.privileged:
            self.stdout.write("warning: running as root; containers will run as root too")
