"""Exception types shared across the toolkit."""


class GeometryError(ValueError):
    """Invalid geometric input: bad rotation, malformed box, non-finite point."""


class BehindCameraError(GeometryError):
    """3D point at or behind the camera plane; no projection exists."""


class MissingInstanceError(LookupError):
    """Requested instance id has no pixels in the mask."""


class ConfigurationError(ValueError):
    """Invalid generation or run parameters."""


class EmptySceneError(ValueError):
    """Operation requires at least one placed instance."""


class SchemaError(ValueError):
    """Keypoint schema violated: bad group, wrong slot count, unknown tag."""


class MappingError(SchemaError):
    """Schema mapping is not applicable to the given record."""


class ConsistencyError(ValueError):
    """Frame, scene, and annotations disagree (e.g. mask id absent from scene)."""


class ManifestError(ValueError):
    """Dataset manifest is malformed or internally inconsistent."""


class MergeError(ManifestError):
    """Manifests cannot be merged (incompatible schemas, no mapping)."""


class ConversionError(ManifestError):
    """Manifest cannot be converted to the requested format."""


class EvaluationError(ValueError):
    """Predictions and ground truth cannot be compared."""


class AggregationError(EvaluationError):
    """Per-dataset results cannot be aggregated."""
