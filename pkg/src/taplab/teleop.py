"""Operator input mapping, gains, and text-command matching.

Text commands (transcribed speech or a UI text box) are matched against a
per-task vocabulary by Levenshtein distance after normalization; a distance
above the vocabulary's max_distance yields no match, which the UI renders as
the "no valid command" cue.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .action import Action
from .geometry import AxisMask, Pose, PoseDelta, compose, pose_difference, project_locked
from .taps import EMPTY, TapCommand, TapLibrary

MAX_GAIN = 10.0


@dataclass
class GainSetting:
    translation_gain: float = 1.0
    rotation_gain: float = 1.0

    def __post_init__(self) -> None:
        for name in ("translation_gain", "rotation_gain"):
            v = getattr(self, name)
            if not 0.0 < v <= MAX_GAIN:
                raise ValueError(f"{name} must be in (0, {MAX_GAIN}], got {v}")


@dataclass
class TeleopInput:
    """One tick of operator input: hand motion, gripper, and at most one trigger."""

    delta: PoseDelta = field(default_factory=PoseDelta)
    gripper: float = 0.0
    tap_button: TapCommand = EMPTY
    text_command: str | None = None

    def __post_init__(self) -> None:
        if self.tap_button is not EMPTY and self.text_command is not None:
            raise ValueError("at most one of tap_button/text_command per tick")


def map_input(
    tele: TeleopInput,
    gain: GainSetting,
    mask: AxisMask | None,
    reference: Pose | None,
    current: Pose,
) -> Action:
    """Scale operator motion by the gains and emit the per-tick action.

    When a lock mask stands, the scaled target pose is projected against the
    lock reference so the emitted action cannot move locked components.
    """
    scaled = tele.delta.scaled(gain.translation_gain, gain.rotation_gain)
    if mask is not None and mask.any_locked():
        target = compose(current, scaled)
        projected = project_locked(target, reference, mask)
        scaled = pose_difference(current, projected)
    return Action(scaled, tele.gripper)


# ---------------------------------------------------------------------------
# text command matching
# ---------------------------------------------------------------------------

def normalize_phrase(text: str) -> str:
    """Lowercase and collapse whitespace; the vocabulary's canonical form."""
    return re.sub(r"\s+", " ", text.strip().lower())


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert/delete/substitute), classic rolling-row DP."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # delete from a
                    current[j - 1] + 1,  # insert into a
                    previous[j - 1] + (ca != cb),  # substitute
                )
            )
        previous = current
    return previous[-1]


@dataclass(frozen=True)
class ParsedCommand:
    """Outcome of matching a text command; tap_id None means no match."""

    tap_id: TapCommand
    distance: int
    phrase: str | None

    @property
    def matched(self) -> bool:
        return self.tap_id is not EMPTY


class CommandVocabulary:
    """Ordered (phrase, tap id) entries; ties in distance break by list index."""

    def __init__(self, entries: list[tuple[str, int]], max_distance: int = 3):
        if max_distance < 0:
            raise ValueError("max_distance must be nonnegative")
        normalized = [(normalize_phrase(p), tap_id) for p, tap_id in entries]
        phrases = [p for p, _ in normalized]
        if len(set(phrases)) != len(phrases):
            raise ValueError("vocabulary phrases must be unique after normalization")
        self.entries = normalized
        self.max_distance = max_distance

    def __len__(self) -> int:
        return len(self.entries)

    def validate_against(self, library: TapLibrary) -> None:
        for phrase, tap_id in self.entries:
            if not library.has(tap_id):
                raise ValueError(f"vocabulary phrase {phrase!r} names unknown TAP id {tap_id}")


def parse_command(text: str, vocab: CommandVocabulary) -> ParsedCommand:
    """Match a transcribed string to the closest vocabulary phrase.

    Returns the minimal-distance entry (lowest index on ties); a best distance
    above max_distance is reported as no match. Total on every input.
    """
    if len(vocab) == 0:
        raise ValueError("cannot parse against an empty vocabulary")
    query = normalize_phrase(text)
    best_id: TapCommand = EMPTY
    best_phrase: str | None = None
    best_distance = -1
    for phrase, tap_id in vocab.entries:
        d = levenshtein(query, phrase)
        if best_distance < 0 or d < best_distance:
            best_id, best_phrase, best_distance = tap_id, phrase, d
    if best_distance > vocab.max_distance:
        return ParsedCommand(EMPTY, best_distance, None)
    return ParsedCommand(best_id, best_distance, best_phrase)
