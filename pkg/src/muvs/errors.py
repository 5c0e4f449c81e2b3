"""Exception types raised across the fitting engine."""


class MuvsError(Exception):
    """Base class for all engine errors."""

    code = "error"

    def record(self) -> dict:
        """Machine-readable description, used by the CLI on failure."""
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class InvalidArgument(MuvsError, ValueError):
    code = "invalid-argument"


class BehindCameraError(MuvsError, ValueError):
    code = "behind-camera"


class InvalidStart(MuvsError, ValueError):
    code = "invalid-start"


class UnfittableFrame(MuvsError):
    code = "unfittable-frame"


class SequenceFailure(MuvsError):
    code = "sequence-failure"


class ParseError(MuvsError, ValueError):
    code = "parse-error"


class ValidationError(MuvsError, ValueError):
    code = "validation-error"
