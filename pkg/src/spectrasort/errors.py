"""Exception hierarchy shared across the package.

Everything derives from SpectraSortError so callers (notably the CLI) can
map any contract violation on input data to a single exit path.
"""


class SpectraSortError(Exception):
    """Base class for all spectrasort errors."""


class DataError(SpectraSortError):
    """Input data violates a documented contract (CLI exit code 2)."""


# --- raw spectrum parsing -------------------------------------------------

class NoDataRows(DataError):
    """A raw spectrum file contained zero parseable data rows."""


class NonMonotoneWavelengths(DataError):
    """Data-row wavelengths are not strictly increasing."""


class IntensityOutOfRange(DataError):
    """An intensity lies outside [0, 1] beyond tolerance."""


# --- dataset files --------------------------------------------------------

class SchemaMismatch(DataError):
    """Dataset file header or row layout disagrees with the expected grid."""


class LabelOutOfRange(DataError):
    """A class label is negative or not covered by the class-name list."""


# --- dataset assembly -----------------------------------------------------

class MixedGrids(DataError):
    """Spectra or datasets with different wavelength grids were combined."""


class ClassNameMismatch(DataError):
    """Datasets with different class-name lists were merged."""


class UnknownSampleId(DataError):
    """A requested sample id is not present in the dataset."""


class InsufficientRows(DataError):
    """A class has fewer rows than a subsampling request needs."""


# --- scaling and models ---------------------------------------------------

class EmptyDataset(DataError):
    """An operation requires more rows than the dataset provides."""


class DimensionMismatch(DataError):
    """Feature dimensions of the input do not match the fitted object."""


class SingleClass(DataError):
    """Training requires at least two distinct classes."""


class BadK(DataError):
    """Invalid neighbor count for k-NN (must be odd and within range)."""


class VersionUnsupported(DataError):
    """Model file declares a format version this build cannot read."""


class CorruptModel(DataError):
    """Model file is truncated or fails its checksum."""


# --- evaluation -----------------------------------------------------------

class TooFewRows(DataError):
    """A class has fewer rows than the number of cross-validation folds."""


class UnmappedClass(DataError):
    """A class name is missing from the alloy taxonomy."""


# --- synthetic generation -------------------------------------------------

class UnknownElement(DataError):
    """A composition references an element absent from the line catalog."""


class PresetFormatError(DataError):
    """A catalog or composition preset file is malformed."""


# --- CLI ------------------------------------------------------------------

class InvalidManifest(DataError):
    """An ingest manifest violates its invariants."""
