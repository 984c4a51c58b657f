"""taplab: a desk-scale workbench for TAP-augmented denoising control policies."""

from .action import ACTION_DIM, Action
from .geometry import AxisMask, Frame, Pose, PoseDelta, compose, interpolate, project_locked
from .taps import (
    EMPTY,
    ControllerState,
    RoutineParams,
    TapCommand,
    TapEvent,
    TapKind,
    TapLibrary,
    TapSpec,
    controller_tick,
    resolve_simultaneous,
    routine_step_sequence,
    routine_trajectory,
    waypoint_step,
)
from .teleop import (
    CommandVocabulary,
    GainSetting,
    ParsedCommand,
    TeleopInput,
    levenshtein,
    map_input,
    normalize_phrase,
    parse_command,
)

__version__ = "0.1.0"
