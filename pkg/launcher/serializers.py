import re
from datetime import timedelta

from rest_framework import serializers

from .models import LaunchPlan

SLURM_WALLTIME = re.compile(r'^(?:(?P<days>\d+)-)?(?P<clock>\d+(?::\d+){0,2})$')

# clock fields without / with a day count, per number of fields
CLOCK_UNITS = {
    False: {1: ('minutes',), 2: ('minutes', 'seconds'), 3: ('hours', 'minutes', 'seconds')},
    True: {1: ('hours',), 2: ('hours', 'minutes'), 3: ('hours', 'minutes', 'seconds')},
}


class WalltimeField(serializers.DurationField):
    """
    Slurm time limits (MM, MM:SS, HH:MM:SS, D-HH, D-HH:MM, D-HH:MM:SS) and,
    failing those, Django's duration syntax ("1 02:00:00", "P1DT2H").
    """

    def to_internal_value(self, value):
        if isinstance(value, timedelta):
            return value
        text = str(value).strip()
        match = SLURM_WALLTIME.match(text)
        if not match:
            return super().to_internal_value(text)
        fields = [int(number) for number in match['clock'].split(':')]
        units = CLOCK_UNITS[match['days'] is not None][len(fields)]
        return timedelta(days=int(match['days'] or 0), **dict(zip(units, fields)))


class LaunchPlanSerializer(serializers.Serializer):
    """Validates `launch plan` options into a LaunchPlan"""

    nodes = serializers.IntegerField(min_value=1)
    ranks_per_node = serializers.IntegerField(min_value=1, default=1)
    cores = serializers.IntegerField(min_value=1)
    smt = serializers.IntegerField(min_value=1, default=1)
    container = serializers.CharField()
    command = serializers.ListField(child=serializers.CharField(trim_whitespace=False), min_length=1)
    job_name = serializers.RegexField(r'^[A-Za-z0-9._-]+$', default='udss')
    walltime = WalltimeField(default=timedelta(hours=1))
    partition = serializers.RegexField(r'^[A-Za-z0-9._,-]+$', allow_null=True, default=None)
    account = serializers.RegexField(r'^[A-Za-z0-9._-]+$', allow_null=True, default=None)

    def validate_walltime(self, value):
        if value <= timedelta(0):
            raise serializers.ValidationError("Walltime must be positive")
        return value

    def create(self, validated_data):
        return LaunchPlan(
            nodes=validated_data['nodes'],
            ranks_per_node=validated_data['ranks_per_node'],
            physical_cores_per_node=validated_data['cores'],
            threads_per_core=validated_data['smt'],
            container=validated_data['container'],
            command=validated_data['command'],
            job_name=validated_data['job_name'],
            walltime=validated_data['walltime'],
            partition=validated_data['partition'],
            account=validated_data['account'],
        )
