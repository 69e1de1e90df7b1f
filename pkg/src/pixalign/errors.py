"""Exception hierarchy.

Everything raised on bad input data derives from :class:`PixAlignError`,
which the command line maps to exit code 3.
"""


class PixAlignError(Exception):
    """Base class for data and processing errors."""


# --- corpus ---------------------------------------------------------------

class UnsupportedFormat(PixAlignError, ValueError):
    pass


class CorruptImage(PixAlignError, ValueError):
    pass


class WrongPointCount(PixAlignError, ValueError):
    def __init__(self, n, path=None):
        self.n = n
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"expected 68 landmarks, found {n}{where}")


class MalformedLine(PixAlignError, ValueError):
    def __init__(self, lineno, text, path=None):
        self.lineno = lineno
        self.text = text
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{lineno}: cannot parse {text!r} as 'x y'")


class DegenerateEyes(PixAlignError, ValueError):
    pass


class DuplicateRecord(PixAlignError, ValueError):
    pass


class EmptyManifest(PixAlignError, ValueError):
    pass


# --- warping --------------------------------------------------------------

class EmptyInput(PixAlignError, ValueError):
    pass


class OutOfGrid(PixAlignError, ValueError):
    pass


class TooFewPoints(PixAlignError, ValueError):
    pass


class AllCollinear(PixAlignError, ValueError):
    pass


class DegenerateTriangle(PixAlignError, ValueError):
    pass


class TriangulationFailed(PixAlignError, ValueError):
    pass


class MapsMissing(PixAlignError, ValueError):
    pass


# --- patches / features ---------------------------------------------------

class PatchTooLarge(PixAlignError, ValueError):
    pass


class IndexOutOfRange(PixAlignError, IndexError):
    pass


class GridMismatch(PixAlignError, ValueError):
    pass


# --- discriminant analysis ------------------------------------------------

class SingleClass(PixAlignError, ValueError):
    pass


class TooFewSamples(PixAlignError, ValueError):
    pass


class NumericalFailure(PixAlignError, ArithmeticError):
    pass


class ZeroDiscriminant(NumericalFailure):
    """Between-class scatter vanishes, so there is no direction to keep."""


class DimensionMismatch(PixAlignError, ValueError):
    pass


class InsufficientClasses(PixAlignError, ValueError):
    pass


# --- matching / evaluation ------------------------------------------------

class ZeroVector(PixAlignError, ValueError):
    pass


class EmptySet(PixAlignError, ValueError):
    pass


class TooFewImages(PixAlignError, ValueError):
    pass


class TooFewImagesWarning(UserWarning):
    pass


class SourceOutOfImageWarning(UserWarning):
    pass


class NoGenuinePairs(PixAlignError, ValueError):
    pass


class NoImpostorPairs(PixAlignError, ValueError):
    pass


class FarUnreachable(PixAlignError, ValueError):
    """Too few impostor pairs to resolve the requested false-accept rate.

    ``floor`` is the smallest non-zero FAR the curve can express and ``vr``
    the verification rate at the most permissive threshold that still keeps
    FAR at or under the request.
    """

    def __init__(self, far_target, floor, vr):
        self.far_target = far_target
        self.floor = floor
        self.vr = vr
        super().__init__(
            f"FAR {far_target:g} unreachable: only {round(1 / floor)} impostor pairs "
            f"(floor {floor:g})")
