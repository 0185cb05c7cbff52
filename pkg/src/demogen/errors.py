"""Exception types raised by the pipeline.

Every error that names an offending entity carries it as an attribute so
callers can report actionable messages without parsing strings.
"""

from __future__ import annotations


class DemogenError(Exception):
    """Base class for all pipeline errors."""


# --- geometry ---------------------------------------------------------------

class NonPositiveDepth(DemogenError):
    pass


class OutOfBounds(DemogenError):
    pass


class DegenerateConfiguration(DemogenError):
    pass


class NoConsensus(DemogenError):
    pass


# --- manifest ---------------------------------------------------------------

class ManifestSyntaxError(DemogenError):
    """Document is not well-formed JSON."""


class SchemaError(DemogenError):
    def __init__(self, message: str, entry: str | None = None, field: str | None = None):
        super().__init__(message)
        self.entry = entry
        self.field = field


class SemanticError(DemogenError):
    def __init__(self, message: str, entry: str | None = None, field: str | None = None):
        super().__init__(message)
        self.entry = entry
        self.field = field


# --- layout -----------------------------------------------------------------

class PlacementExhausted(DemogenError):
    def __init__(self, name: str, attempts: int):
        super().__init__(f"could not place {name!r} after {attempts} attempts")
        self.name = name
        self.attempts = attempts


class CyclicSupport(DemogenError):
    def __init__(self, name: str):
        super().__init__(f"support graph cycle through {name!r}")
        self.name = name


class SettleFailed(DemogenError):
    def __init__(self, name: str, correction: float):
        super().__init__(
            f"settle correction {correction:.4f} m for {name!r} exceeds safe bound"
        )
        self.name = name
        self.correction = correction


# --- track grounding --------------------------------------------------------

class MaskTooSmall(DemogenError):
    pass


class InsufficientCorrespondences(DemogenError):
    def __init__(self, frame: int, count: int):
        super().__init__(f"frame {frame}: only {count} usable correspondences (need 3)")
        self.frame = frame
        self.count = count


class TooFewSurvivors(DemogenError):
    def __init__(self, count: int):
        super().__init__(f"only {count} tracks survive outlier removal (need 3)")
        self.count = count


# --- kinematics -------------------------------------------------------------

class JointLimitViolation(DemogenError):
    def __init__(self, joint: str, value: float, lo: float, hi: float):
        super().__init__(f"joint {joint!r} value {value:.4f} outside [{lo:.4f}, {hi:.4f}]")
        self.joint = joint
        self.value = value


class IkDiverged(DemogenError):
    def __init__(self, pos_error: float, ang_error: float, step: int | None = None):
        where = "" if step is None else f" at step {step}"
        super().__init__(
            f"IK did not converge{where}: pos error {pos_error:.6f} m, "
            f"ang error {ang_error:.6f} rad"
        )
        self.pos_error = pos_error
        self.ang_error = ang_error
        self.step = step


class JointJumpExceeded(DemogenError):
    def __init__(self, step: int, jump: float, limit: float):
        super().__init__(
            f"joint jump {jump:.4f} rad between steps {step - 1} and {step} "
            f"exceeds {limit:.4f}"
        )
        self.step = step
        self.jump = jump


# --- providers --------------------------------------------------------------

class RoleMismatch(DemogenError):
    def __init__(self, role: str, wanted: str):
        super().__init__(f"provider bound to role {role!r} cannot serve {wanted!r}")
        self.role = role
        self.wanted = wanted


class MissingArtifact(DemogenError):
    def __init__(self, path: str):
        super().__init__(f"provider artifact not found: {path}")
        self.path = path


class TargetOutOfView(DemogenError):
    def __init__(self, frame: int):
        super().__init__(f"target leaves the camera frustum at frame {frame}")
        self.frame = frame


# --- dataset ----------------------------------------------------------------

class DuplicateEpisode(DemogenError):
    def __init__(self, episode_id: int):
        super().__init__(f"episode {episode_id} already exists")
        self.episode_id = episode_id


class IoFailure(DemogenError):
    pass


class DiscontinuousChain(DemogenError):
    def __init__(self, index: int, gap: float):
        super().__init__(
            f"segment {index} -> {index + 1} end-effector gap {gap * 1000:.2f} mm "
            f"exceeds 5 mm"
        )
        self.index = index
        self.gap = gap


class UnknownFormat(DemogenError):
    pass


# --- cli --------------------------------------------------------------------

class ConfigError(DemogenError):
    pass
