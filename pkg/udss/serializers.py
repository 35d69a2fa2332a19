import os
import shlex

from rest_framework import serializers


ENV_POLICIES = ['inherit-host', 'image-config', 'merged']


class CommaSeparatedField(serializers.ListField):
    """List field that also accepts a comma-separated string"""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        return super().to_internal_value(data)


class ShellWordsField(serializers.Field):
    """Shell-quoted words, e.g. MPIRUN_FLAGS='-genv I_MPI_DEBUG 5'"""

    def to_internal_value(self, data):
        if isinstance(data, (list, tuple)):
            return [str(word) for word in data]
        try:
            return shlex.split(str(data))
        except ValueError as e:
            raise serializers.ValidationError(f"Cannot split into shell words: {e}")

    def to_representation(self, value):
        return shlex.join(value)


class GlobalConfigSerializer(serializers.Serializer):
    """Coerce and validate the layered configuration (flag/env/file/default)"""

    SITE_BIND_DIRS = CommaSeparatedField(child=serializers.CharField(), allow_empty=True)
    DEFAULT_ENV_POLICY = serializers.ChoiceField(choices=ENV_POLICIES)
    VERBOSITY = serializers.IntegerField(min_value=0, max_value=3)
    GZIP_LEVEL = serializers.IntegerField(min_value=0, max_value=9)
    THREAD_ENV_VAR = serializers.RegexField(r'^[A-Za-z_][A-Za-z0-9_]*$')
    MPIRUN = serializers.CharField()
    MPIRUN_FLAGS = ShellWordsField()
    RUNTIME_PROGRAM = ShellWordsField()
    MODULE_NAME = serializers.CharField()
    OVERHEAD_THRESHOLD = serializers.FloatField(min_value=0.0)
    MEMORY_SAMPLE_INTERVAL = serializers.FloatField(min_value=0.001)

    def validate_SITE_BIND_DIRS(self, value):
        """Site bind directories must be absolute host paths"""
        for path in value:
            if not os.path.isabs(path):
                raise serializers.ValidationError(f"Not an absolute path: {path}")
        return [os.path.normpath(path) for path in value]

    def validate_RUNTIME_PROGRAM(self, value):
        if not value:
            raise serializers.ValidationError("Runtime program cannot be empty")
        return value
