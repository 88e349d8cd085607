"""Agent-response grammar: serializer, tolerant parser, validation.

An agent answers each turn with a two-stage response: the landmark it
believes is closest to the current view, plus a discrete two-axis motion
command. The canonical wire form is a single line:

    <response><landmark index="I">NAME</landmark><reasoning>TEXT</reasoning>\
<move x_dir="DX" x_mag="EX" y_dir="DY" y_mag="EY"/></response>

with fixed attribute order and uppercase enum values. ``parse`` is the
robust inverse for raw model output: it tolerates surrounding prose,
whitespace, attribute reordering, and case in enum values, extracts the
first well-formed ``<response>`` block, and never raises on any input --
every outcome is an :class:`AgentResponse` or a :class:`ParseError`
value.

Per-axis canonicalization rule: direction CENTER and magnitude NONE
imply each other. Inconsistent pairs (e.g. LEFT/NONE or CENTER/LARGE)
describe a zero or undefined displacement; they are canonicalized to
CENTER/NONE and a warning is recorded rather than rejecting the
response.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .nametable import DEFAULT_TABLE, LANDMARK_COUNT, NameTable


class XDirection(str, Enum):
    LEFT = "LEFT"
    CENTER = "CENTER"
    RIGHT = "RIGHT"


class YDirection(str, Enum):
    UP = "UP"
    CENTER = "CENTER"
    DOWN = "DOWN"


class Magnitude(str, Enum):
    NONE = "NONE"
    SMALL = "SMALL"
    MODERATE = "MODERATE"
    LARGE = "LARGE"


MAGNITUDE_MM: dict[Magnitude, float] = {
    Magnitude.NONE: 0.0,
    Magnitude.SMALL: 30.0,
    Magnitude.MODERATE: 60.0,
    Magnitude.LARGE: 90.0,
}

STEP_MAGNITUDES_MM = (0.0, 30.0, 60.0, 90.0)


def canonical_axis(direction, magnitude):
    """Apply the CENTER<->NONE coupling; returns (dir, mag, warning|None)."""
    centered = direction.value == "CENTER"
    none = magnitude == Magnitude.NONE
    if centered == none:
        return direction, magnitude, None
    center = type(direction)("CENTER")
    warning = (
        f"inconsistent axis pair ({direction.value}, {magnitude.value}) "
        "canonicalized to (CENTER, NONE)"
    )
    return center, Magnitude.NONE, warning


@dataclass(frozen=True)
class MotionCommand:
    """Discrete 2D motion command (x direction/magnitude, y direction/magnitude)."""

    d_x: XDirection = XDirection.CENTER
    e_x: Magnitude = Magnitude.NONE
    d_y: YDirection = YDirection.CENTER
    e_y: Magnitude = Magnitude.NONE

    def __post_init__(self):
        for d, e in ((self.d_x, self.e_x), (self.d_y, self.e_y)):
            if (d.value == "CENTER") != (e == Magnitude.NONE):
                raise ValueError(
                    f"non-canonical axis pair ({d.value}, {e.value}); "
                    "use canonical_axis() first"
                )

    @classmethod
    def zero(cls) -> "MotionCommand":
        return cls()

    @property
    def is_zero(self) -> bool:
        return self.e_x == Magnitude.NONE and self.e_y == Magnitude.NONE


@dataclass(frozen=True)
class AgentResponse:
    """Parsed two-stage agent response: landmark guess plus motion command."""

    landmark_index: int
    landmark_name: str
    reasoning: str
    command: MotionCommand
    warnings: tuple[str, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class ParseError:
    """Why a piece of text is not a valid response, and where."""

    reason: str
    offset: int = 0

    def __str__(self):
        return f"{self.reason} (offset {self.offset})"


_ESCAPES = [("&", "&amp;"), ("<", "&lt;"), (">", "&gt;"),
            ("\n", "&#10;"), ("\r", "&#13;"), ("\t", "&#9;")]

_ENTITY = re.compile(r"&(amp|lt|gt|quot|apos|#\d+|#x[0-9a-fA-F]+);")
_NAMED = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}


def _escape(text: str) -> str:
    for raw, entity in _ESCAPES:
        text = text.replace(raw, entity)
    return text


def _unescape(text: str) -> str:
    def sub(m: re.Match) -> str:
        body = m.group(1)
        if body in _NAMED:
            return _NAMED[body]
        code = int(body[2:], 16) if body[1] in "xX" else int(body[1:])
        return chr(code) if 0 <= code < 0x110000 else m.group(0)

    return _ENTITY.sub(sub, text)


def serialize(resp: AgentResponse, table: NameTable = DEFAULT_TABLE) -> str:
    """Canonical single-line wire form of a valid response."""
    if not 1 <= resp.landmark_index <= LANDMARK_COUNT:
        raise ValueError(f"landmark index {resp.landmark_index} outside 1..{LANDMARK_COUNT}")
    resolved = table.resolve(resp.landmark_name)
    if resolved != resp.landmark_index:
        raise ValueError(
            f"landmark name {resp.landmark_name!r} does not resolve to "
            f"index {resp.landmark_index}"
        )
    c = resp.command
    return (
        f'<response><landmark index="{resp.landmark_index}">'
        f"{_escape(resp.landmark_name)}</landmark>"
        f"<reasoning>{_escape(resp.reasoning)}</reasoning>"
        f'<move x_dir="{c.d_x.value}" x_mag="{c.e_x.value}" '
        f'y_dir="{c.d_y.value}" y_mag="{c.e_y.value}"/></response>'
    )


_BLOCK_OPEN = re.compile(r"<\s*response\s*>", re.IGNORECASE)
_BLOCK_CLOSE = re.compile(r"</\s*response\s*>", re.IGNORECASE)
_LANDMARK = re.compile(
    r"<\s*landmark\s+index\s*=\s*(\"([^\"]*)\"|'([^']*)')\s*>(.*?)</\s*landmark\s*>",
    re.IGNORECASE | re.DOTALL,
)
_REASONING = re.compile(
    r"<\s*reasoning\s*>(.*?)</\s*reasoning\s*>", re.IGNORECASE | re.DOTALL
)
_MOVE = re.compile(r"<\s*move\b([^>]*?)/?\s*>", re.IGNORECASE | re.DOTALL)


def _attr(attrs: str, name: str, base: int):
    m = re.search(
        rf"{name}\s*=\s*(\"([^\"]*)\"|'([^']*)')", attrs, re.IGNORECASE
    )
    if m is None:
        return None, base
    value = m.group(2) if m.group(2) is not None else m.group(3)
    return value, base + m.start(1)


def _parse_block(inner: str, base: int, table: NameTable):
    lm = _LANDMARK.search(inner)
    if lm is None:
        return ParseError("missing or malformed <landmark> element", base)
    index_text = lm.group(2) if lm.group(2) is not None else lm.group(3)
    try:
        index = int(index_text.strip())
    except ValueError:
        return ParseError(
            f"landmark index {index_text!r} is not an integer", base + lm.start(1)
        )
    if not 1 <= index <= LANDMARK_COUNT:
        return ParseError(
            f"landmark index {index} outside 1..{LANDMARK_COUNT}",
            base + lm.start(1),
        )
    name = _unescape(lm.group(4)).strip()
    resolved = table.resolve(name)
    if resolved is None:
        return ParseError(
            f"unresolvable landmark name {name!r}", base + lm.start(4)
        )
    if resolved != index:
        return ParseError(
            f"landmark name {name!r} resolves to index {resolved}, not {index}",
            base + lm.start(4),
        )

    rm = _REASONING.search(inner)
    if rm is None:
        return ParseError("missing <reasoning> element", base)
    reasoning = _unescape(rm.group(1))

    mm = _MOVE.search(inner)
    if mm is None:
        return ParseError("missing <move> element", base)
    attrs = mm.group(1)
    attrs_base = base + mm.start(1)
    enums = {}
    for attr_name, enum_cls in (
        ("x_dir", XDirection),
        ("x_mag", Magnitude),
        ("y_dir", YDirection),
        ("y_mag", Magnitude),
    ):
        raw, offset = _attr(attrs, attr_name, attrs_base)
        if raw is None:
            return ParseError(f"missing move attribute {attr_name!r}", attrs_base)
        token = raw.strip().upper()
        try:
            enums[attr_name] = enum_cls(token)
        except ValueError:
            return ParseError(
                f"unknown {attr_name} token {raw.strip()!r}", offset
            )

    warnings: list[str] = []
    d_x, e_x, warn = canonical_axis(enums["x_dir"], enums["x_mag"])
    if warn:
        warnings.append(warn)
    d_y, e_y, warn = canonical_axis(enums["y_dir"], enums["y_mag"])
    if warn:
        warnings.append(warn)

    return AgentResponse(
        landmark_index=index,
        landmark_name=name,
        reasoning=reasoning,
        command=MotionCommand(d_x, e_x, d_y, e_y),
        warnings=tuple(warnings),
    )


def parse(text: str | bytes, table: NameTable = DEFAULT_TABLE):
    """Extract the first well-formed response block from raw agent text.

    Returns an :class:`AgentResponse` on success, else a
    :class:`ParseError` whose offset points into ``text`` (byte offset
    for bytes input, character offset for str). Never raises.
    """
    if isinstance(text, (bytes, bytearray)):
        # latin-1 maps bytes 1:1 onto code points, so offsets stay byte-true
        text = bytes(text).decode("latin-1")
    if not isinstance(text, str):
        return ParseError(f"unsupported input type {type(text).__name__}")

    first_error: ParseError | None = None
    found_block = False
    for open_match in _BLOCK_OPEN.finditer(text):
        close_match = _BLOCK_CLOSE.search(text, open_match.end())
        if close_match is None:
            error = ParseError("unterminated <response> block", open_match.start())
            first_error = first_error or error
            continue
        found_block = True
        inner = text[open_match.end():close_match.start()]
        result = _parse_block(inner, open_match.end(), table)
        if isinstance(result, AgentResponse):
            return result
        first_error = first_error or result
    if not found_block and first_error is None:
        return ParseError("no <response> block found")
    return first_error
