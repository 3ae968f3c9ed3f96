"""Exception hierarchy shared across the package."""

from __future__ import annotations


class HMRError(Exception):
    """Base class for every error raised by this package."""


# grounding protocol
class MalformedToken(HMRError):
    pass


class OutOfRange(HMRError):
    pass


class UnknownAcupoint(HMRError):
    def __init__(self, name: str):
        super().__init__(f"acupoint {name!r} is not in the registry")
        self.name = name


class InvalidBox(HMRError):
    pass


# dataset tools
class ParseError(HMRError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(HMRError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class DegenerateResult(HMRError):
    pass


class NotVisible(HMRError):
    pass


# benchmark
class UnknownImage(HMRError):
    pass


class EmptyGroundTruth(HMRError):
    pass


# grounding client
class GroundingClientError(HMRError):
    """Infrastructure failure talking to a grounding source."""


class Timeout(GroundingClientError):
    pass


class HttpStatus(GroundingClientError):
    def __init__(self, status: int):
        super().__init__(f"HTTP status {status}")
        self.status = status


class ConnectionFailed(GroundingClientError):
    pass


class MissingRecording(GroundingClientError):
    def __init__(self, filename: str):
        super().__init__(filename)
        self.filename = filename


# perception
class InvalidDepth(HMRError):
    pass


class BehindCamera(HMRError):
    pass


class TooFewPoints(HMRError):
    pass


class NoConsensus(HMRError):
    pass


class Degenerate(HMRError):
    pass


class ZeroVector(HMRError):
    pass


class DegeneratePlane(HMRError):
    pass


# kinematics / trajectory / simulation
class DimensionMismatch(HMRError):
    pass


class NotConverged(HMRError):
    def __init__(self, residual: float, q=None, iterations: int = 0):
        super().__init__(f"IK did not converge (residual {residual:.3e})")
        self.residual = residual
        self.q = q
        self.iterations = iterations


class Unreachable(NotConverged):
    def __init__(self, residual: float, q=None, iterations: int = 0):
        HMRError.__init__(self, f"target unreachable (residual stagnated at {residual:.3e})")
        self.residual = residual
        self.q = q
        self.iterations = iterations


class IkFailed(HMRError):
    def __init__(self, index: int, cause: Exception | None = None):
        super().__init__(f"IK failed at waypoint {index}" + (f": {cause}" if cause else ""))
        self.index = index
        self.cause = cause


class LimitViolation(HMRError):
    pass


class NonmonotonicTiming(HMRError):
    pass


class TrajectoryOutOfRange(OutOfRange):
    pass


class ConfigError(HMRError):
    pass
