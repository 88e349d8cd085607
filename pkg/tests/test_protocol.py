import json
from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carmsim import protocol
from carmsim.nametable import DEFAULT_TABLE
from carmsim.protocol import (
    AgentResponse,
    Magnitude,
    MotionCommand,
    ParseError,
    XDirection,
    YDirection,
    parse,
    serialize,
)

ZERO = MotionCommand.zero()


def make_response(index=1, reasoning="r", command=ZERO):
    return AgentResponse(
        landmark_index=index,
        landmark_name=DEFAULT_TABLE.canonical(index),
        reasoning=reasoning,
        command=command,
    )


def test_canonical_form_exact():
    resp = make_response(
        index=2,
        reasoning="go",
        command=MotionCommand(
            XDirection.RIGHT, Magnitude.SMALL, YDirection.UP, Magnitude.LARGE
        ),
    )
    assert serialize(resp) == (
        '<response><landmark index="2">Right Humeral Head</landmark>'
        "<reasoning>go</reasoning>"
        '<move x_dir="RIGHT" x_mag="SMALL" y_dir="UP" y_mag="LARGE"/></response>'
    )


def test_zero_move_serialization():
    text = serialize(make_response())
    assert '<move x_dir="CENTER" x_mag="NONE" y_dir="CENTER" y_mag="NONE"/>' in text
    assert "\n" not in text


def test_noncanonical_command_rejected_at_construction():
    with pytest.raises(ValueError):
        MotionCommand(XDirection.CENTER, Magnitude.SMALL, YDirection.UP, Magnitude.SMALL)
    with pytest.raises(ValueError):
        MotionCommand(XDirection.LEFT, Magnitude.NONE, YDirection.CENTER, Magnitude.NONE)


def test_parse_with_surrounding_prose():
    text = "Sure thing!\n\n" + serialize(make_response()) + "\nLet me know."
    result = parse(text)
    assert isinstance(result, AgentResponse)
    assert result.landmark_index == 1


def test_canonicalization_with_warning():
    text = (
        '<response><landmark index="1">Skull</landmark><reasoning>x</reasoning>'
        '<move x_dir="LEFT" x_mag="NONE" y_dir="UP" y_mag="SMALL"/></response>'
    )
    result = parse(text)
    assert isinstance(result, AgentResponse)
    assert result.command.d_x == XDirection.CENTER
    assert result.command.e_x == Magnitude.NONE
    assert result.command.d_y == YDirection.UP
    assert len(result.warnings) == 1


def test_unknown_enum_token():
    text = (
        '<response><landmark index="1">Skull</landmark><reasoning>x</reasoning>'
        '<move x_dir="RIGHT" x_mag="HUGE" y_dir="UP" y_mag="SMALL"/></response>'
    )
    result = parse(text)
    assert isinstance(result, ParseError)
    assert "unknown x_mag" in result.reason
    assert result.offset > 0


def test_index_name_mismatch():
    text = (
        '<response><landmark index="3">Right Humeral Head</landmark>'
        '<reasoning>x</reasoning>'
        '<move x_dir="CENTER" x_mag="NONE" y_dir="CENTER" y_mag="NONE"/></response>'
    )
    result = parse(text)
    assert isinstance(result, ParseError)
    assert "resolves to index 2" in result.reason


def test_missing_block():
    result = parse("just some prose about the skull")
    assert isinstance(result, ParseError)
    assert "no <response> block" in result.reason


def test_bytes_input_offsets_are_byte_true():
    result = parse(b"\xff\xfe garbage bytes, no block")
    assert isinstance(result, ParseError)


def test_first_well_formed_block_wins():
    good = serialize(make_response(index=4))
    text = "<response>malformed</response>" + good
    result = parse(text)
    assert isinstance(result, AgentResponse)
    assert result.landmark_index == 4


directions_x = st.sampled_from(list(XDirection))
directions_y = st.sampled_from(list(YDirection))
magnitudes = st.sampled_from([Magnitude.SMALL, Magnitude.MODERATE, Magnitude.LARGE])


@st.composite
def commands(draw):
    if draw(st.booleans()):
        d_x, e_x = XDirection.CENTER, Magnitude.NONE
    else:
        d_x = draw(st.sampled_from([XDirection.LEFT, XDirection.RIGHT]))
        e_x = draw(magnitudes)
    if draw(st.booleans()):
        d_y, e_y = YDirection.CENTER, Magnitude.NONE
    else:
        d_y = draw(st.sampled_from([YDirection.UP, YDirection.DOWN]))
        e_y = draw(magnitudes)
    return MotionCommand(d_x, e_x, d_y, e_y)


@st.composite
def responses(draw):
    index = draw(st.integers(min_value=1, max_value=14))
    name = draw(st.sampled_from(DEFAULT_TABLE.variants(index)))
    reasoning = draw(st.text(max_size=200))
    return AgentResponse(
        landmark_index=index,
        landmark_name=name,
        reasoning=reasoning,
        command=draw(commands()),
    )


@settings(max_examples=300, deadline=None)
@given(responses())
def test_roundtrip_identity(resp):
    assert parse(serialize(resp)) == resp


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=300))
def test_parse_never_raises_on_bytes(data):
    result = parse(data)
    assert isinstance(result, (AgentResponse, ParseError))


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=300))
def test_parse_never_raises_on_text(text):
    result = parse(text)
    assert isinstance(result, (AgentResponse, ParseError))
    if isinstance(result, AgentResponse):
        # enum universe is closed
        assert result.command.e_x in list(Magnitude)
        assert result.command.e_y in list(Magnitude)


def test_conformance_vectors_pass():
    data = resources.files("carmsim").joinpath("data/protocol_vectors.jsonl")
    for line in data.read_text().splitlines():
        case = json.loads(line)
        outcome = parse(case["text"])
        if case["valid"]:
            assert isinstance(outcome, AgentResponse), (case["name"], outcome)
            expect = case.get("expect", {})
            got = {
                "landmark_index": outcome.landmark_index,
                "x_dir": outcome.command.d_x.value,
                "x_mag": outcome.command.e_x.value,
                "y_dir": outcome.command.d_y.value,
                "y_mag": outcome.command.e_y.value,
            }
            for key, value in expect.items():
                assert got[key] == value, case["name"]
            if "canonical" in case:
                assert serialize(outcome) == case["canonical"], case["name"]
        else:
            assert isinstance(outcome, ParseError), (case["name"], outcome)
            if "error_contains" in case:
                assert case["error_contains"] in outcome.reason, case["name"]


def test_magnitude_map_is_exact():
    assert protocol.MAGNITUDE_MM == {
        Magnitude.NONE: 0.0,
        Magnitude.SMALL: 30.0,
        Magnitude.MODERATE: 60.0,
        Magnitude.LARGE: 90.0,
    }
