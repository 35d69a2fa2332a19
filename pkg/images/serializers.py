from rest_framework import serializers


DIGEST_PATTERN = r'^sha256:[0-9a-f]{64}$'

OCI_INDEX_MEDIA_TYPES = [
    'application/vnd.oci.image.index.v1+json',
    'application/vnd.docker.distribution.manifest.list.v2+json',
]
OCI_MANIFEST_MEDIA_TYPES = [
    'application/vnd.oci.image.manifest.v1+json',
    'application/vnd.docker.distribution.manifest.v2+json',
]

# Annotations carrying the image name, most specific first.
REF_NAME_ANNOTATIONS = ['io.containerd.image.name', 'org.opencontainers.image.ref.name']


class DescriptorSerializer(serializers.Serializer):
    """OCI content descriptor"""

    mediaType = serializers.CharField(required=False, allow_blank=True, default='')
    digest = serializers.RegexField(DIGEST_PATTERN)
    size = serializers.IntegerField(min_value=0, required=False)
    annotations = serializers.DictField(child=serializers.CharField(allow_blank=True), required=False, default=dict)
    platform = serializers.DictField(required=False)

    def validate_digest(self, value):
        return value.lower()


class OCILayoutSerializer(serializers.Serializer):
    imageLayoutVersion = serializers.CharField()


class OCIIndexSerializer(serializers.Serializer):
    """index.json, or a nested image index blob"""

    schemaVersion = serializers.IntegerField()
    mediaType = serializers.CharField(required=False, allow_blank=True, default='')
    manifests = DescriptorSerializer(many=True)

    def validate_manifests(self, value):
        if not value:
            raise serializers.ValidationError("Index lists no manifests")
        return value


class OCIManifestSerializer(serializers.Serializer):
    schemaVersion = serializers.IntegerField()
    mediaType = serializers.CharField(required=False, allow_blank=True, default='')
    config = DescriptorSerializer()
    layers = DescriptorSerializer(many=True, allow_empty=True)


class ImageRuntimeConfigSerializer(serializers.Serializer):
    """The runtime part ("config") of an image configuration blob"""

    Env = serializers.ListField(child=serializers.CharField(allow_blank=True), required=False, allow_null=True)
    WorkingDir = serializers.CharField(required=False, allow_blank=True, allow_null=True)


class RootfsSerializer(serializers.Serializer):
    type = serializers.CharField(required=False)
    diff_ids = serializers.ListField(child=serializers.RegexField(DIGEST_PATTERN), required=False, default=list)


class ImageConfigSerializer(serializers.Serializer):
    """Image configuration blob; only the fields udss uses"""

    config = ImageRuntimeConfigSerializer(required=False, allow_null=True)
    rootfs = RootfsSerializer(required=False)

    def to_internal_value(self, data):
        # docker writes "config": null for scratch images
        values = super().to_internal_value(data)
        runtime = values.get('config') or {}
        values['env'] = tuple(runtime.get('Env') or ())
        values['workdir'] = runtime.get('WorkingDir') or None
        values['diff_ids'] = list((values.get('rootfs') or {}).get('diff_ids', []))
        return values


class DockerSaveEntrySerializer(serializers.Serializer):
    """One element of a docker-save manifest.json"""

    Config = serializers.CharField()
    RepoTags = serializers.ListField(child=serializers.CharField(), required=False, allow_null=True)
    Layers = serializers.ListField(child=serializers.CharField())

    def validate_Layers(self, value):
        for location in value:
            if location.startswith('/') or '..' in location.split('/'):
                raise serializers.ValidationError(f"Layer path leaves the archive: {location}")
        return value

    def validate_Config(self, value):
        if value.startswith('/') or '..' in value.split('/'):
            raise serializers.ValidationError(f"Config path leaves the archive: {value}")
        return value
