import base64
import json
import socket
import sys
import threading
from importlib import resources
from pathlib import Path

import pytest

from carmsim.errors import TransportError
from carmsim.gateway import (
    FrameError,
    WireAgent,
    build_request_frame,
    connect_tcp,
    decode_frame,
    encode_frame,
    serve_subprocess,
)
from carmsim.geometry import CArmPose
from carmsim.navloop import AgentTurn, EpisodeConfig, run_episode
from carmsim.projector import png_bytes_to_array, render

HELPERS = Path(__file__).parent / "helpers"
TINY = CArmPose((0.0, 0.0, 0.0), detector_res=(16, 16))


def make_turn(volume, landmarks, step=1, feedback=None, prior=None):
    pose = TINY.with_isocenter(landmarks.get(1).position_mm)
    image = render(volume, pose)
    return AgentTurn(
        episode_id="ep0000",
        step=step,
        image=image,
        prior_response=prior,
        feedback=feedback,
        prompt_template_id="nearest3-v1",
    )


def test_frame_conformance_vectors():
    data = resources.files("carmsim").joinpath("data/gateway_frames.jsonl")
    for line in data.read_text().splitlines():
        case = json.loads(line)
        if case["valid"]:
            frame = decode_frame(case["line"])
            assert frame["type"] == case["expect_type"], case["name"]
            # canonical re-encode stays decodable
            assert decode_frame(encode_frame(frame)) == frame
        else:
            with pytest.raises(FrameError) as excinfo:
                decode_frame(case["line"])
            if "error_contains" in case:
                assert case["error_contains"] in str(excinfo.value), case["name"]


def test_stream_splits_into_frames():
    # self-delimiting: N complete frames plus at most one trailing error
    frame = {"v": 1, "type": "error", "reason": "x"}
    stream = encode_frame(frame) * 3 + b'{"v":1,"type":"error","reason":"tail'
    lines = stream.split(b"\n")
    complete, trailing = lines[:-1], lines[-1]
    assert len(complete) == 3
    for line in complete:
        assert decode_frame(line) == frame
    with pytest.raises(FrameError):
        decode_frame(trailing)


def test_request_frame_image_matches_detector_res(phantom42, warm_kernel):
    volume, landmarks = phantom42
    turn = make_turn(volume, landmarks)
    frame = build_request_frame(turn)
    decode_frame(encode_frame(frame))
    image = png_bytes_to_array(base64.b64decode(frame["image_png_b64"]))
    assert image.shape == TINY.detector_res
    assert frame["prior_response"] is None
    assert frame["feedback"] is None


def test_subprocess_echo_agent_runs_to_max_steps(phantom42, warm_kernel):
    volume, landmarks = phantom42
    cmd = [sys.executable, str(HELPERS / "echo_agent.py")]
    config = EpisodeConfig(start=1, target=9, max_steps=3)
    with serve_subprocess(cmd, timeout=30) as agent:
        trace = run_episode(
            volume, landmarks, agent, config, pose_template=TINY
        )
    assert trace.outcome == "MAX_STEPS"
    assert len(trace.steps) == 3
    assert all(step.parsed is not None for step in trace.steps)
    assert all(step.parsed.command.is_zero for step in trace.steps)


def test_subprocess_garbage_agent_is_parse_error_path(phantom42, warm_kernel):
    volume, landmarks = phantom42
    cmd = [sys.executable, str(HELPERS / "garbage_agent.py")]
    config = EpisodeConfig(start=1, target=9, max_steps=10)
    with serve_subprocess(cmd, timeout=30) as agent:
        trace = run_episode(volume, landmarks, agent, config, pose_template=TINY)
    assert trace.outcome == "AGENT_ERROR"
    assert len(trace.steps) == 3  # strike rule, no crash
    assert all(step.parse_error is not None for step in trace.steps)


def test_subprocess_invalid_frames_are_transport_error(phantom42, warm_kernel):
    volume, landmarks = phantom42
    cmd = [sys.executable, str(HELPERS / "raw_bytes_agent.py")]
    config = EpisodeConfig(start=1, target=9, max_steps=10)
    with serve_subprocess(cmd, timeout=30) as agent:
        trace = run_episode(volume, landmarks, agent, config, pose_template=TINY)
    assert trace.outcome == "AGENT_ERROR"
    assert "transport" in trace.error_cause


def test_subprocess_timeout(phantom42, warm_kernel):
    volume, landmarks = phantom42
    cmd = [sys.executable, "-c", "import time; time.sleep(60)"]
    with serve_subprocess(cmd, timeout=0.5) as agent:
        turn = make_turn(volume, landmarks)
        with pytest.raises(TransportError, match="timed out"):
            agent.respond(turn)


def test_error_frame_flows_into_strike_path(phantom42, warm_kernel):
    volume, landmarks = phantom42

    class ErrorChannel:
        def send_line(self, data):
            self.last = json.loads(data)

        def recv_line(self, timeout):
            return json.dumps(
                {"v": 1, "type": "error", "reason": "hook exploded"}
            ).encode()

    agent = WireAgent(ErrorChannel(), timeout=1)
    turn = make_turn(volume, landmarks)
    text = agent.respond(turn)
    assert "hook exploded" in text
    from carmsim.protocol import ParseError, parse

    assert isinstance(parse(text), ParseError)


def test_out_of_order_reply_rejected(phantom42, warm_kernel):
    volume, landmarks = phantom42

    class WrongStep:
        def send_line(self, data):
            pass

        def recv_line(self, timeout):
            return json.dumps(
                {"v": 1, "type": "reply", "episode_id": "ep0000", "step": 99,
                 "raw_text": "x", "latency_ms": 0}
            ).encode()

    agent = WireAgent(WrongStep(), timeout=1)
    with pytest.raises(TransportError, match="out-of-order"):
        agent.respond(make_turn(volume, landmarks))


def _tcp_fixture_server(reply_builder):
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.bind(("127.0.0.1", 0))
    server.listen(1)
    port = server.getsockname()[1]

    def serve():
        conn, _ = server.accept()
        buffer = b""
        with conn:
            while True:
                chunk = conn.recv(65536)
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    reply = reply_builder(json.loads(line))
                    if reply is None:
                        return
                    conn.sendall(json.dumps(reply).encode() + b"\n")
        server.close()

    thread = threading.Thread(target=serve, daemon=True)
    thread.start()
    return port


def test_tcp_agent(phantom42, warm_kernel):
    volume, landmarks = phantom42
    fixed = (
        '<response><landmark index="1">Skull</landmark><reasoning>tcp</reasoning>'
        '<move x_dir="CENTER" x_mag="NONE" y_dir="CENTER" y_mag="NONE"/></response>'
    )

    def reply(req):
        return {
            "v": 1, "type": "reply", "episode_id": req["episode_id"],
            "step": req["step"], "raw_text": fixed, "latency_ms": 0.1,
        }

    port = _tcp_fixture_server(reply)
    config = EpisodeConfig(start=1, target=9, max_steps=2)
    with connect_tcp("127.0.0.1", port, timeout=30) as agent:
        trace = run_episode(volume, landmarks, agent, config, pose_template=TINY)
    assert trace.outcome == "MAX_STEPS"
    assert len(trace.steps) == 2


def test_version_mismatch_rejected(phantom42, warm_kernel):
    volume, landmarks = phantom42

    def reply(req):
        return {
            "v": 7, "type": "reply", "episode_id": req["episode_id"],
            "step": req["step"], "raw_text": "x", "latency_ms": 0.0,
        }

    port = _tcp_fixture_server(reply)
    with connect_tcp("127.0.0.1", port, timeout=5) as agent:
        with pytest.raises(TransportError, match="version"):
            agent.respond(make_turn(volume, landmarks))
