"""Sidecar wire protocol: newline-delimited JSON messages, version ``asap/1``.

An external training process drives the scheduler without ever shipping
model parameters or data across the boundary; each message carries at most
a loss value and the three-number gradient summary, so traffic is O(1) in
model size.

Session shape (client lines on the left, server responses on the right)::

    hello {protocol, num_arms, horizon, beta?, alpha_schedule?}   -> hello (echo of effective settings)
    init_probe {arm, loss_aux, grad_summary} x num_arms, in order -> ack {turn: 0, estimate_after}
    repeat:
      select_request {turn}                                       -> selected {turn, arm, ucb_scores}
      report {turn, arm, loss_aux, grad_summary, loss_aux_post?}  -> ack {turn, estimate_after}
    shutdown                                                      -> shutdown

Exchanges alternate strictly; turn numbers must increase by one starting at
1; ``report.arm`` must equal the arm just selected. Any violation yields an
``error`` message with a structured code and closes the session:

    error {code: decode | protocol | config | reward_domain, message}

The full grammar with a conformance transcript lives in docs/protocol.md.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import sys
from pathlib import Path

from .bandit import (
    PolicyState,
    argmax_lowest_index,
    checkpoint,
    new_policy_state,
    ucb_scores,
    update_estimate,
)
from .errors import ConfigError, ProtocolError, RewardDomainError
from .rewards import (
    AlphaSchedule,
    GradientSummary,
    alignment_reward,
    alpha_at,
    convergence_reward,
    make_components,
)

PROTOCOL_VERSION = "asap/1"

log = logging.getLogger("asap.protocol")


def encode(message: dict) -> str:
    """One message per line, compact separators, insertion-ordered keys."""
    return json.dumps(message, separators=(",", ":"))


def _get(msg: dict, key: str, kinds, where: str):
    if key not in msg:
        raise ProtocolError("protocol", f"{where} message is missing field {key!r}")
    value = msg[key]
    if isinstance(value, bool):
        raise ProtocolError("protocol", f"{where}.{key} has type bool")
    if kinds is float and isinstance(value, int):
        value = float(value)  # JSON writers may drop the decimal point
    if not isinstance(value, kinds):
        raise ProtocolError(
            "protocol", f"{where}.{key} has type {type(value).__name__}"
        )
    return value


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise ProtocolError("reward_domain", f"{what} is not finite ({value})")
    return value


def _summary_from_wire(payload, where: str) -> GradientSummary:
    if not isinstance(payload, dict):
        raise ProtocolError("protocol", f"{where}.grad_summary must be an object")
    dot = _finite(_get(payload, "dot", float, where), f"{where}.grad_summary.dot")
    na = _finite(_get(payload, "norm_aux", float, where), f"{where}.grad_summary.norm_aux")
    nt = _finite(
        _get(payload, "norm_target", float, where), f"{where}.grad_summary.norm_target"
    )
    try:
        return GradientSummary(dot=dot, norm_aux=na, norm_target=nt)
    except RewardDomainError as exc:
        raise ProtocolError("reward_domain", str(exc)) from exc


class Session:
    """Single-client protocol session: a strict phase machine over the policy.

    Phases: awaiting_hello -> probing -> serving -> closed. The session
    applies exactly the same probe and reward arithmetic as the in-process
    driver, so a client feeding the same numbers observes the same
    selections.
    """

    def __init__(
        self,
        beta: float = 0.1,
        alpha_schedule: AlphaSchedule | None = None,
        pm_eval: str = "pre_update",
        normalization: str = "raw",
        checkpoint_path: str | Path | None = None,
    ):
        if pm_eval not in ("pre_update", "post_update"):
            raise ConfigError(f"unknown pm_eval mode {pm_eval!r}")
        if normalization not in ("raw", "running_minmax"):
            raise ConfigError(f"unknown normalization mode {normalization!r}")
        self.default_beta = beta
        self.default_schedule = alpha_schedule or AlphaSchedule()
        self.pm_eval = pm_eval
        self.normalization = normalization
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None

        self.phase = "awaiting_hello"
        self.state: PolicyState | None = None
        self.schedule = self.default_schedule
        self.horizon = 0
        self.probes_done = 0
        self.pending_turn: int | None = None
        self.last_selected: int | None = None
        self.completed_turns = 0

    @property
    def closed(self) -> bool:
        return self.phase == "closed"

    def handle_line(self, line: str) -> list[str]:
        """Process one client line; returns the server lines to send back."""
        if self.phase == "closed":
            return []
        try:
            reply = self._dispatch(line)
        except ProtocolError as exc:
            log.info("session error (%s): %s", exc.code, exc)
            self.phase = "closed"
            return [encode({"type": "error", "code": exc.code, "message": str(exc)})]
        return [encode(reply)] if reply is not None else []

    def _dispatch(self, line: str) -> dict | None:
        line = line.strip()
        if not line:
            return None
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError("decode", f"message is not valid JSON: {exc}")
        if not isinstance(msg, dict):
            raise ProtocolError("decode", "message must be a JSON object")
        mtype = msg.get("type")
        if mtype == "shutdown":
            self.phase = "closed"
            return {"type": "shutdown"}
        handler = {
            "hello": self._on_hello,
            "init_probe": self._on_init_probe,
            "select_request": self._on_select_request,
            "report": self._on_report,
        }.get(mtype)
        if handler is None:
            raise ProtocolError("protocol", f"unknown message type {mtype!r}")
        return handler(msg)

    def _on_hello(self, msg: dict) -> dict:
        if self.phase != "awaiting_hello":
            raise ProtocolError("protocol", f"hello not valid in phase {self.phase}")
        version = _get(msg, "protocol", str, "hello")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                "protocol",
                f"protocol version mismatch: client speaks {version!r}, "
                f"server speaks {PROTOCOL_VERSION!r}",
            )
        num_arms = _get(msg, "num_arms", int, "hello")
        horizon = _get(msg, "horizon", int, "hello")
        beta = _get(msg, "beta", float, "hello") if "beta" in msg else self.default_beta
        if "alpha_schedule" in msg:
            raw = msg["alpha_schedule"]
            if not isinstance(raw, dict):
                raise ProtocolError("protocol", "hello.alpha_schedule must be an object")
            try:
                schedule = AlphaSchedule(
                    kind=raw.get("kind", "linear"),
                    alpha0=float(raw.get("alpha0", 0.5)),
                    alpha_min=float(raw.get("alpha_min", 0.0)),
                    decay=float(raw.get("decay", 0.99)),
                )
            except ConfigError as exc:
                raise ProtocolError("config", str(exc)) from exc
        else:
            schedule = self.default_schedule
        if num_arms < 1:
            raise ProtocolError("config", f"num_arms must be >= 1, got {num_arms}")
        if horizon < 1:
            raise ProtocolError("config", f"horizon must be >= 1, got {horizon}")
        try:
            self.state = new_policy_state(
                num_arms=num_arms,
                horizon=horizon,
                smoothing=beta,
                normalize=self.normalization == "running_minmax",
            )
        except ConfigError as exc:
            raise ProtocolError("config", str(exc)) from exc
        self.horizon = horizon
        self.schedule = schedule
        self.phase = "probing"
        self.probes_done = 0
        return {
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "num_arms": num_arms,
            "horizon": horizon,
            "beta": beta,
            "alpha_schedule": {
                "kind": schedule.kind,
                "alpha0": schedule.alpha0,
                "alpha_min": schedule.alpha_min,
                "decay": schedule.decay,
            },
            "pm_eval": self.pm_eval,
            "normalization": self.normalization,
        }

    def _on_init_probe(self, msg: dict) -> dict:
        if self.phase != "probing":
            raise ProtocolError("protocol", f"init_probe not valid in phase {self.phase}")
        arm = _get(msg, "arm", int, "init_probe")
        if arm != self.probes_done:
            raise ProtocolError(
                "protocol",
                f"init_probe arms must arrive in index order; expected "
                f"{self.probes_done}, got {arm}",
            )
        loss_aux = _finite(_get(msg, "loss_aux", float, "init_probe"), "init_probe.loss_aux")
        summary = _summary_from_wire(msg.get("grad_summary"), "init_probe")
        pm0 = convergence_reward(loss_aux)
        pt0 = alignment_reward(summary)
        estimate0 = 0.5 * pm0 + 0.5 * pt0
        self.state.estimates[arm] = estimate0
        if self.state.normalize:
            self.state.reward_range.observe(estimate0)
        self.probes_done += 1
        if self.probes_done == self.state.num_arms:
            self.phase = "serving"
            self._write_checkpoint()
        return {"type": "ack", "turn": 0, "estimate_after": estimate0}

    def _on_select_request(self, msg: dict) -> dict:
        if self.phase != "serving":
            raise ProtocolError(
                "protocol", f"select_request not valid in phase {self.phase}"
            )
        if self.pending_turn is not None:
            raise ProtocolError(
                "protocol", f"turn {self.pending_turn} still awaits its report"
            )
        turn = _get(msg, "turn", int, "select_request")
        if turn != self.completed_turns + 1:
            raise ProtocolError(
                "protocol",
                f"turn numbers must increase by one; expected "
                f"{self.completed_turns + 1}, got {turn}",
            )
        if turn > self.horizon:
            raise ProtocolError(
                "protocol", f"turn {turn} exceeds the session horizon {self.horizon}"
            )
        self.state.turn = turn
        # Scores are always finite here: the probe phase leaves every arm
        # with one play, so no arm carries the infinite unplayed bonus.
        scores = ucb_scores(self.state)
        arm = argmax_lowest_index(scores)
        self.pending_turn = turn
        self.last_selected = arm
        return {"type": "selected", "turn": turn, "arm": arm, "ucb_scores": scores}

    def _on_report(self, msg: dict) -> dict:
        if self.phase != "serving":
            raise ProtocolError("protocol", f"report not valid in phase {self.phase}")
        if self.pending_turn is None:
            raise ProtocolError("protocol", "report without a preceding select_request")
        turn = _get(msg, "turn", int, "report")
        arm = _get(msg, "arm", int, "report")
        if turn != self.pending_turn:
            raise ProtocolError(
                "protocol", f"report turn {turn} != selected turn {self.pending_turn}"
            )
        if arm != self.last_selected:
            raise ProtocolError(
                "protocol", f"report arm {arm} != selected arm {self.last_selected}"
            )
        loss_aux = _finite(_get(msg, "loss_aux", float, "report"), "report.loss_aux")
        summary = _summary_from_wire(msg.get("grad_summary"), "report")
        if self.pm_eval == "post_update":
            if "loss_aux_post" not in msg:
                raise ProtocolError(
                    "protocol", "server runs pm_eval=post_update; report needs loss_aux_post"
                )
            loss_for_pm = _finite(
                _get(msg, "loss_aux_post", float, "report"), "report.loss_aux_post"
            )
        else:
            loss_for_pm = loss_aux
        reward = make_components(
            pm=convergence_reward(loss_for_pm),
            pt=alignment_reward(summary),
            alpha=alpha_at(self.schedule, turn, self.horizon),
        )
        update_estimate(self.state, arm, reward.combined)
        self.pending_turn = None
        self.last_selected = None
        self.completed_turns = turn
        self._write_checkpoint()
        return {
            "type": "ack",
            "turn": turn,
            "estimate_after": float(self.state.estimates[arm]),
        }

    def _write_checkpoint(self) -> None:
        # Retained across transport loss: restart resumes from the last
        # completed turn.
        if self.checkpoint_path is not None and self.state is not None:
            self.state.turn = self.completed_turns
            self.checkpoint_path.write_bytes(checkpoint(self.state))


def serve_stdio(session: Session, stdin=None, stdout=None) -> int:
    """Serve one session over stdin/stdout; returns a process exit code."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        for reply in session.handle_line(line):
            stdout.write(reply + "\n")
        stdout.flush()
        if session.closed:
            break
    return 0


def serve_socket(session: Session, host: str, port: int) -> int:
    """Listen for exactly one connection and serve the session over it."""
    with socket.create_server((host, port)) as server:
        log.info("listening on %s:%d", host, port)
        conn, peer = server.accept()
        log.info("session from %s", peer)
        with conn, conn.makefile("r", encoding="utf-8") as reader, conn.makefile(
            "w", encoding="utf-8"
        ) as writer:
            for line in reader:
                for reply in session.handle_line(line):
                    writer.write(reply + "\n")
                writer.flush()
                if session.closed:
                    break
    return 0
