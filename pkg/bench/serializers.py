from rest_framework import serializers

from .models import (
    OverheadRecord, OverheadReport, OverheadRow, ScalingRecord, ScalingReport, ScalingRow,
)


class OptionalFloatField(serializers.FloatField):
    """Blank CSV cells mean 'not measured'"""

    def __init__(self, **kwargs):
        kwargs.setdefault('allow_null', True)
        kwargs.setdefault('required', False)
        kwargs.setdefault('default', None)
        super().__init__(**kwargs)

    def validate_empty_values(self, data):
        if isinstance(data, str) and not data.strip():
            data = None
        return super().validate_empty_values(data)


class ScalingRecordSerializer(serializers.Serializer):
    """One row of `nodes,epoch_time_s`"""

    nodes = serializers.IntegerField(min_value=1)
    epoch_time_s = serializers.FloatField()

    def validate_epoch_time_s(self, value):
        if not value > 0:
            raise serializers.ValidationError("Epoch time must be positive")
        return value

    def create(self, validated_data):
        return ScalingRecord(**validated_data)


class OverheadRecordSerializer(serializers.Serializer):
    """One row of `benchmark,tp_with,tp_without,mem_with,mem_without`"""

    benchmark = serializers.CharField(source='benchmark_name')
    tp_with = OptionalFloatField(source='throughput_with', min_value=0.0)
    tp_without = OptionalFloatField(source='throughput_without', min_value=0.0)
    mem_with = OptionalFloatField(source='free_mem_with_gb', min_value=0.0)
    mem_without = OptionalFloatField(source='free_mem_without_gb', min_value=0.0)

    def create(self, validated_data):
        return OverheadRecord(**validated_data)


class ScalingRowSerializer(serializers.Serializer):
    nodes = serializers.IntegerField(min_value=1)
    epoch_time_s = serializers.FloatField()
    speedup = serializers.FloatField()
    efficiency = serializers.FloatField()
    linear_speedup = serializers.FloatField()


class ScalingReportSerializer(serializers.Serializer):
    baseline_nodes = serializers.IntegerField(min_value=1)
    rows = ScalingRowSerializer(many=True)

    def create(self, validated_data):
        return ScalingReport(
            baseline_nodes=validated_data['baseline_nodes'],
            rows=tuple(ScalingRow(**row) for row in validated_data['rows']),
        )


class OverheadRowSerializer(serializers.Serializer):
    benchmark_name = serializers.CharField()
    throughput_delta = OptionalFloatField()
    mem_delta_gb = OptionalFloatField()
    significant = serializers.BooleanField()


class OverheadReportSerializer(serializers.Serializer):
    threshold = serializers.FloatField(min_value=0.0)
    rows = OverheadRowSerializer(many=True)

    def create(self, validated_data):
        return OverheadReport(
            threshold=validated_data['threshold'],
            rows=tuple(OverheadRow(**row) for row in validated_data['rows']),
        )
