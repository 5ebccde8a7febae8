"""Exception types shared across the toolkit."""


class DualModSegError(Exception):
    """Base class for all toolkit errors."""


# volume I/O
class BadMagic(DualModSegError):
    """File is not a single-file NIfTI-1 volume."""


class UnsupportedDatatype(DualModSegError):
    """NIfTI datatype code outside the supported {4, 8, 16} set."""


class TruncatedFile(DualModSegError):
    """Fewer voxel bytes than the header dims require."""


class CompressedInput(DualModSegError):
    """Input starts with the gzip magic; decompress externally first."""


class HeaderMismatch(DualModSegError):
    """Portable payload size disagrees with its sidecar header."""


class MissingSidecar(DualModSegError):
    """Portable volume sidecar (.json) not found."""


class NonBinaryMask(DualModSegError):
    """Mask contains values outside {0, 1}."""


# data pipeline
class MissingLabel(DualModSegError):
    """Operation requires a label volume that is absent."""


class CropLargerThanImage(DualModSegError):
    """Requested crop exceeds the image extent."""


class TooFewPatients(DualModSegError):
    """Splitting needs at least two patients."""


class EmptySplit(DualModSegError):
    """A split would leave the labeled or test set empty."""


class InvalidSpec(DualModSegError):
    """Phantom specification is inconsistent or does not fit the volume."""


class EmptyLabeledSet(DualModSegError):
    """Batch assembly requires a non-empty labeled set."""


# network
class BadSpatialDims(DualModSegError):
    """Input height/width not divisible by 16."""


class ShapeMismatch(DualModSegError):
    """Tensor shapes disagree with the operation contract."""


class BottleneckWidthMismatch(DualModSegError):
    """Decoder bottleneck has the wrong channel count."""


# objectives / trainer
class EmptyLabeledBatch(DualModSegError):
    """Supervised loss needs at least one labeled sample."""


class NonFiniteLoss(DualModSegError):
    """A loss term became NaN or infinite."""


class CorruptCheckpoint(DualModSegError):
    """Checkpoint manifest and payload disagree or are unreadable."""


# evaluation
class NonBinary(DualModSegError):
    """Metric input contains values outside {0, 1}."""


class EmptyTestSet(DualModSegError):
    """Evaluation requires at least one test record."""
