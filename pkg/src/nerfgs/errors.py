"""Exception types. Every error carries a machine-readable ``code``."""


class NerfGSError(Exception):
    code = "Error"


class ShapeMismatch(NerfGSError, ValueError):
    code = "ShapeMismatch"


class OutOfImage(NerfGSError, ValueError):
    code = "OutOfImage"


class NonUnitQuaternion(NerfGSError, ValueError):
    code = "NonUnitQuaternion"


class InvalidCamera(NerfGSError, ValueError):
    code = "InvalidCamera"


class DegenerateRay(NerfGSError, ValueError):
    code = "DegenerateRay"


class EmptyBatch(NerfGSError, ValueError):
    code = "EmptyBatch"


class MalformedRegion(NerfGSError, ValueError):
    code = "MalformedRegion"


class UnknownId(NerfGSError, KeyError):
    code = "UnknownId"


class NoSurface(NerfGSError, RuntimeError):
    code = "NoSurface"


class TooFewPoints(NerfGSError, ValueError):
    code = "TooFewPoints"


class TooSmall(NerfGSError, ValueError):
    code = "TooSmall"


class DegenerateSpec(NerfGSError, ValueError):
    code = "DegenerateSpec"


class ConfigError(NerfGSError, ValueError):
    code = "ConfigError"


class FormatError(NerfGSError, ValueError):
    code = "FormatError"


class FileNotFound(NerfGSError, FileNotFoundError):
    code = "FileNotFound"
