from rest_framework import serializers


class SupportReportSerializer(serializers.Serializer):
    user_namespaces = serializers.BooleanField()
    reason = serializers.CharField(allow_blank=True)
    kernel = serializers.CharField()
    unprivileged_userns_clone = serializers.CharField(allow_null=True)
    max_user_namespaces = serializers.IntegerField(allow_null=True)
    apparmor_restricted = serializers.BooleanField()
    overlay = serializers.BooleanField()
    nesting_depth = serializers.IntegerField()
    privileged = serializers.BooleanField()


class ImageMetadataSerializer(serializers.Serializer):
    """The .udss/metadata.json that flatten writes into every rootfs"""

    image_name = serializers.CharField()
    env = serializers.DictField(child=serializers.CharField(allow_blank=True, trim_whitespace=False), required=False, default=dict)
    workdir = serializers.CharField(required=False, default='/', trim_whitespace=False)
    source_format = serializers.CharField(required=False)
    layers = serializers.ListField(child=serializers.CharField(), required=False)
