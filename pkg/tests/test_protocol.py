"""Protocol session tests: scripted exchanges, error paths, fuzzing."""

import json
import math
import socket
import threading
from pathlib import Path

import numpy as np
import pytest

from asap.bandit import restore
from asap.protocol import PROTOCOL_VERSION, Session, serve_socket, serve_stdio
from asap.rewards import AlphaSchedule


def say(session, **msg):
    out = session.handle_line(json.dumps(msg))
    assert len(out) <= 1
    return json.loads(out[0]) if out else None


def summary(dot=0.0, na=1.0, nt=1.0):
    return {"dot": dot, "norm_aux": na, "norm_target": nt}


def start_session(num_arms=2, horizon=10, beta=0.5, probes=None, **session_kw):
    session = Session(beta=beta, **session_kw)
    hello = say(session, type="hello", protocol=PROTOCOL_VERSION,
                num_arms=num_arms, horizon=horizon)
    assert hello["type"] == "hello"
    if probes is not None:
        for arm, (loss, cos_num) in enumerate(probes):
            ack = say(session, type="init_probe", arm=arm, loss_aux=loss,
                      grad_summary=summary(dot=cos_num))
            assert ack["type"] == "ack" and ack["turn"] == 0
    return session


class TestHandshake:
    def test_hello_echoes_effective_settings(self):
        session = Session(beta=0.25)
        reply = say(session, type="hello", protocol=PROTOCOL_VERSION,
                    num_arms=3, horizon=7)
        assert reply["num_arms"] == 3 and reply["horizon"] == 7
        assert reply["beta"] == 0.25
        assert reply["protocol"] == PROTOCOL_VERSION

    def test_version_mismatch_names_both_versions(self):
        session = Session()
        reply = say(session, type="hello", protocol="asap/9", num_arms=2, horizon=5)
        assert reply["type"] == "error" and reply["code"] == "protocol"
        assert "asap/9" in reply["message"] and "asap/1" in reply["message"]
        assert session.closed

    def test_empty_pool_is_config_error(self):
        session = Session()
        reply = say(session, type="hello", protocol=PROTOCOL_VERSION,
                    num_arms=0, horizon=5)
        assert reply["type"] == "error" and reply["code"] == "config"

    def test_client_beta_overrides_default(self):
        session = Session(beta=0.25)
        reply = say(session, type="hello", protocol=PROTOCOL_VERSION,
                    num_arms=2, horizon=5, beta=0.75)
        assert reply["beta"] == 0.75

    def test_client_schedule_override(self):
        session = Session()
        reply = say(session, type="hello", protocol=PROTOCOL_VERSION, num_arms=2,
                    horizon=5, alpha_schedule={"kind": "constant", "alpha0": 1.0})
        assert reply["alpha_schedule"]["kind"] == "constant"


class TestScriptedSessions:
    def test_probe_estimates_use_half_half_mix(self):
        # probes engineered to land on estimates [0.5, -0.5]
        session = start_session(probes=[(-2.0, -1.0), (2.0, 1.0)])
        sel = say(session, type="select_request", turn=1)
        assert sel == {"type": "selected", "turn": 1, "arm": 0,
                       "ucb_scores": [0.5, -0.5]}

    def test_full_session_matches_in_process_policy(self):
        # 3 arms, 5 turns with fixed reports; mirror the arithmetic with
        # the in-process ops and demand identical selections
        from asap.bandit import new_policy_state, select_arm, update_estimate
        from asap.rewards import alignment_reward, alpha_at, combine, GradientSummary

        probes = [(1.0, 0.8), (0.5, -0.2), (2.0, 0.5)]
        reports = [(-1.0 + 0.3 * t, 0.1 * t % 1.0) for t in range(1, 6)]
        schedule = AlphaSchedule()

        mirror = new_policy_state(3, 5, smoothing=0.5)
        for arm, (loss, dot) in enumerate(probes):
            pm = -loss
            pt = alignment_reward(GradientSummary(dot, 1.0, 1.0))
            mirror.estimates[arm] = 0.5 * pm + 0.5 * pt

        session = start_session(num_arms=3, horizon=5, probes=probes)
        for t in range(1, 6):
            sel = say(session, type="select_request", turn=t)
            mirror.turn = t
            expected = select_arm(mirror)
            assert sel["arm"] == expected
            loss, dot = reports[t - 1]
            ack = say(session, type="report", turn=t, arm=sel["arm"],
                      loss_aux=loss, grad_summary=summary(dot=dot))
            pt = alignment_reward(GradientSummary(dot, 1.0, 1.0))
            update_estimate(mirror, expected,
                            combine(-loss, pt, alpha_at(schedule, t, 5)))
            assert ack["estimate_after"] == mirror.estimates[expected]

    def test_post_update_mode_requires_loss_post(self):
        session = start_session(probes=[(1.0, 0.0), (1.0, 0.0)],
                                pm_eval="post_update")
        sel = say(session, type="select_request", turn=1)
        reply = say(session, type="report", turn=1, arm=sel["arm"],
                    loss_aux=1.0, grad_summary=summary())
        assert reply["type"] == "error" and reply["code"] == "protocol"

    def test_post_update_mode_uses_loss_post(self):
        session = start_session(probes=[(1.0, 0.0), (1.0, 0.0)],
                                pm_eval="post_update", beta=1.0)
        sel = say(session, type="select_request", turn=1)
        ack = say(session, type="report", turn=1, arm=sel["arm"], loss_aux=9.0,
                  grad_summary=summary(), loss_aux_post=0.25)
        # alpha at t=1 of 10 is 0.45 (linear from 0.5); pm = -0.25, pt = 0
        assert ack["estimate_after"] == pytest.approx(0.45 * -0.25, abs=1e-15)

    def test_shutdown_echo_and_close(self):
        session = start_session(probes=[(0.0, 0.0), (0.0, 0.0)])
        reply = say(session, type="shutdown")
        assert reply == {"type": "shutdown"}
        assert session.closed
        assert session.handle_line('{"type":"select_request","turn":1}') == []


class TestProtocolErrors:
    def test_probe_out_of_order(self):
        session = start_session()
        reply = say(session, type="init_probe", arm=1, loss_aux=0.0,
                    grad_summary=summary())
        assert reply["code"] == "protocol"

    def test_select_before_probes_done(self):
        session = start_session()
        reply = say(session, type="select_request", turn=1)
        assert reply["code"] == "protocol"

    def test_turn_must_increment(self):
        session = start_session(probes=[(0.0, 0.0), (0.0, 0.0)])
        reply = say(session, type="select_request", turn=5)
        assert reply["code"] == "protocol"

    def test_report_arm_must_match_selected(self):
        session = start_session(probes=[(0.0, 0.5), (0.0, 0.0)])
        sel = say(session, type="select_request", turn=1)
        reply = say(session, type="report", turn=1, arm=1 - sel["arm"],
                    loss_aux=0.0, grad_summary=summary())
        assert reply["code"] == "protocol"

    def test_nan_loss_is_reward_domain(self):
        session = start_session(probes=[(0.0, 0.0), (0.0, 0.0)])
        sel = say(session, type="select_request", turn=1)
        reply = say(session, type="report", turn=1, arm=sel["arm"],
                    loss_aux=math.nan, grad_summary=summary())
        assert reply["code"] == "reward_domain"
        assert session.closed

    def test_inconsistent_summary_is_reward_domain(self):
        session = start_session(probes=[(0.0, 0.0), (0.0, 0.0)])
        say(session, type="select_request", turn=1)
        reply = say(session, type="report", turn=1, arm=0, loss_aux=0.0,
                    grad_summary=summary(dot=5.0, na=1.0, nt=1.0))
        assert reply["code"] == "reward_domain"

    def test_garbage_line_is_decode_error(self):
        session = Session()
        reply = json.loads(session.handle_line("{{{ nope")[0])
        assert reply["code"] == "decode"

    def test_unknown_type_is_protocol_error(self):
        session = Session()
        reply = say(session, type="gradient_dump")
        assert reply["code"] == "protocol"


class TestCheckpointRetention:
    def test_checkpoint_tracks_last_completed_turn(self, tmp_path):
        path = tmp_path / "session.ckpt"
        session = start_session(probes=[(0.0, 0.5), (0.0, -0.5)],
                                checkpoint_path=path)
        for t in (1, 2):
            sel = say(session, type="select_request", turn=t)
            say(session, type="report", turn=t, arm=sel["arm"], loss_aux=0.1,
                grad_summary=summary(dot=0.2))
        # transport drops here; no shutdown. Blob holds turn 2.
        state = restore(path.read_bytes())
        assert state.turn == 2
        assert state.plays.sum() == 2 + 2


class TestFuzzing:
    def test_random_message_order_never_crashes(self):
        rng = np.random.default_rng(0)
        vocab = [
            {"type": "hello", "protocol": PROTOCOL_VERSION, "num_arms": 2, "horizon": 4},
            {"type": "hello", "protocol": "bogus/7", "num_arms": 2, "horizon": 4},
            {"type": "init_probe", "arm": 0, "loss_aux": 1.0, "grad_summary": summary()},
            {"type": "init_probe", "arm": 1, "loss_aux": 1.0, "grad_summary": summary()},
            {"type": "select_request", "turn": 1},
            {"type": "select_request", "turn": 3},
            {"type": "report", "turn": 1, "arm": 0, "loss_aux": 0.5,
             "grad_summary": summary()},
            {"type": "report", "turn": 1, "arm": 0, "loss_aux": math.inf,
             "grad_summary": summary()},
            {"type": "shutdown"},
            {"type": "mystery"},
            {"nonsense": True},
            "not even an object",
        ]
        for trial in range(300):
            session = Session()
            for _ in range(int(rng.integers(1, 12))):
                msg = vocab[int(rng.integers(0, len(vocab)))]
                line = json.dumps(msg) if not isinstance(msg, str) else msg
                for reply in session.handle_line(line):
                    decoded = json.loads(reply)  # always well-formed JSON
                    assert "type" in decoded
                if session.closed:
                    break

    def test_mutated_bytes_never_crash(self):
        rng = np.random.default_rng(1)
        base = json.dumps({"type": "hello", "protocol": PROTOCOL_VERSION,
                           "num_arms": 2, "horizon": 4})
        for _ in range(300):
            raw = list(base)
            for _ in range(int(rng.integers(1, 6))):
                raw[int(rng.integers(0, len(raw)))] = chr(int(rng.integers(32, 127)))
            session = Session()
            out = session.handle_line("".join(raw))
            for reply in out:
                json.loads(reply)


def test_documented_transcript_verbatim():
    """The conformance transcript in docs/protocol.md is real server output."""
    doc = (Path(__file__).resolve().parents[1] / "docs" / "protocol.md").read_text()
    block = doc.split("```")[-2].strip().splitlines()
    session = Session(beta=0.5)
    pending: list[str] = []
    for line in block:
        direction, payload = line[0], line[2:]
        if direction == ">":
            assert not pending, f"undelivered replies before {payload!r}"
            pending = session.handle_line(payload)
        else:
            assert pending, f"no reply queued for {payload!r}"
            assert pending.pop(0) == payload
    assert not pending


class TestTransports:
    def test_stdio_transport(self):
        import io

        lines = [
            json.dumps({"type": "hello", "protocol": PROTOCOL_VERSION,
                        "num_arms": 1, "horizon": 1}),
            json.dumps({"type": "init_probe", "arm": 0, "loss_aux": 1.0,
                        "grad_summary": summary()}),
            json.dumps({"type": "select_request", "turn": 1}),
            json.dumps({"type": "shutdown"}),
        ]
        stdin = io.StringIO("\n".join(lines) + "\n")
        stdout = io.StringIO()
        assert serve_stdio(Session(), stdin=stdin, stdout=stdout) == 0
        replies = [json.loads(l) for l in stdout.getvalue().splitlines()]
        assert [r["type"] for r in replies] == ["hello", "ack", "selected", "shutdown"]

    def test_socket_transport(self):
        session = Session()
        # port 0: let the OS pick; race-free via server socket in thread
        ready = threading.Event()
        result = {}

        def serve():
            with socket.create_server(("127.0.0.1", 0)) as server:
                result["port"] = server.getsockname()[1]
                ready.set()
                conn, _ = server.accept()
                with conn, conn.makefile("r") as r, conn.makefile("w") as w:
                    for line in r:
                        for reply in session.handle_line(line):
                            w.write(reply + "\n")
                        w.flush()
                        if session.closed:
                            return

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        ready.wait(5)
        with socket.create_connection(("127.0.0.1", result["port"]), timeout=5) as sock:
            f_in = sock.makefile("r")
            f_out = sock.makefile("w")

            def roundtrip(msg):
                f_out.write(json.dumps(msg) + "\n")
                f_out.flush()
                return json.loads(f_in.readline())

            hello = roundtrip({"type": "hello", "protocol": PROTOCOL_VERSION,
                               "num_arms": 1, "horizon": 2})
            assert hello["type"] == "hello"
            ack = roundtrip({"type": "init_probe", "arm": 0, "loss_aux": 0.5,
                             "grad_summary": summary()})
            assert ack["type"] == "ack"
            bye = roundtrip({"type": "shutdown"})
            assert bye["type"] == "shutdown"
        thread.join(5)
