"""Exception types shared across the package."""


class PseudoscanError(Exception):
    """Base class for all package errors."""


class NonPositiveScale(PseudoscanError):
    """A scale factor was zero or negative."""


class EmptyMesh(PseudoscanError):
    """No non-degenerate triangles left to work with."""


class InvalidWindow(PseudoscanError):
    """Azimuth window is not a valid arc."""


class ParseError(PseudoscanError):
    """A text or JSON artifact failed to parse.

    Carries enough context (path, line, field) to point at the offending spot.
    """

    def __init__(self, message, path=None, line=None, field=None):
        ctx = []
        if path is not None:
            ctx.append(str(path))
        if line is not None:
            ctx.append(f"line {line}")
        if field is not None:
            ctx.append(f"field '{field}'")
        prefix = ": ".join(ctx)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.field = field


class NoAssets(PseudoscanError):
    """Library build found nothing usable."""


class AssetParseError(PseudoscanError):
    """One asset file could not be parsed (skipped and reported)."""


class EmptyLibrary(PseudoscanError):
    """Selection requested from a library with no entries."""


class DegenerateModel(PseudoscanError):
    """Model canonical dimensions too small to scale."""


class AllFramesEmpty(PseudoscanError):
    """Every frame yielded zero detections above the confidence floor."""


class MissingFrame(PseudoscanError):
    """Replay file has no record for the requested frame id."""


class ScaleNotRecorded(PseudoscanError):
    """Replay file has no record close enough to the requested scale."""


class TruncatedFile(PseudoscanError):
    """Binary file size inconsistent with its record layout."""


class NonFiniteValue(PseudoscanError):
    """A reader hit NaN or infinity; carries the record index."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (record {index})")
        self.index = index


class IoError(PseudoscanError):
    """Wrapper for failed reads/writes of artifacts."""
