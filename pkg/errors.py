"""Exception hierarchy for the augmentation toolkit."""


class AugmentError(Exception):
    """Base class for every error raised by this project."""


class InvalidParameterError(AugmentError, ValueError):
    """A value violates a documented precondition or invariant."""


class DegenerateMaskError(AugmentError):
    """A mask has no set pixels where at least one is required."""


class RejectedInstanceError(AugmentError):
    """An instance is occluded beyond the 99% end of the bucket taxonomy."""


class DegenerateAssetError(AugmentError):
    """Resizing an asset would collapse one of its dimensions to zero."""


class PlacementError(AugmentError):
    """A paste footprint does not land on any pixel of the background."""


class PlacementInfeasibleError(PlacementError):
    """No valid paste location exists for the requested footprint."""


class FullyOccludedError(PlacementError):
    """The occluder hides every pixel of the placed pedestrian."""


class GenerationFailedError(AugmentError):
    """A record produced zero successful placements."""


class MissingFreespaceError(AugmentError):
    """A background without a freespace mask was handed to PDA."""


class EmptyPoolError(AugmentError):
    """The asset pool is empty."""


class NoOccludersError(AugmentError):
    """A background without occluder regions was handed to ODA."""


class InvalidDepthError(AugmentError, ValueError):
    """Depth inputs of the occluded-box estimator are out of range."""


class UndefinedMetricError(AugmentError):
    """A metric is undefined because there is no ground truth."""


class ConfigError(AugmentError):
    """Run configuration is incomplete or inconsistent."""


class ManifestError(AugmentError):
    """Base class for corpus manifest problems."""


class ManifestFileMissingError(ManifestError):
    """A file referenced by the manifest does not exist."""


class DuplicateIdError(ManifestError):
    """Two manifest entries share an id."""


class MalformedPolygonError(ManifestError):
    """An occluder polygon has fewer than three vertices or bad coordinates."""


class UnknownVocabularyError(ManifestError):
    """A posture, source, orientation or occluder kind is not in the vocabulary."""
