"""Trace persistence and the offline audit.

A run produces three sibling files:

* ``<name>.csv``       per-turn records, header
  ``turn,selected,loss_target,loss_aux,pm,pt,alpha,reward,estimate_after,
  plays_after,target_loss_after,ucb_0..ucb_{K-1}``
* ``<name>.init.csv``  probe records, header ``init_arm,loss,cosine,estimate0``
* ``<name>.meta.json`` scheduler settings, config digest, and content hashes

Floats are printed with 17 significant digits so parsing them back yields
bit-identical values; infinities appear as the literals ``inf``/``-inf``.
That makes the audit exact: ``verify_trace`` replays the recorded rewards
through the real policy arithmetic and demands bitwise agreement on every
derived column, then checks the content hashes, so any single-field edit is
detected.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bandit import PolicyState, ucb_scores, update_estimate
from .errors import ConfigError
from .rewards import AlphaSchedule, alpha_at

TRACE_SCHEMA_VERSION = 1

FIXED_COLUMNS = [
    "turn",
    "selected",
    "loss_target",
    "loss_aux",
    "pm",
    "pt",
    "alpha",
    "reward",
    "estimate_after",
    "plays_after",
    "target_loss_after",
]
INIT_COLUMNS = ["init_arm", "loss", "cosine", "estimate0"]


def fmt(x: float) -> str:
    """Round-trip-exact float rendering; infinities as bare literals."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def init_path(trace_path: Path) -> Path:
    return trace_path.with_name(trace_path.stem + ".init.csv")


def meta_path(trace_path: Path) -> Path:
    return trace_path.with_name(trace_path.stem + ".meta.json")


@dataclass
class TraceRow:
    turn: int
    selected: int
    loss_target: float
    loss_aux: float
    pm: float
    pt: float
    alpha: float
    reward: float
    estimate_after: float
    plays_after: int
    target_loss_after: float
    ucb: list[float]


@dataclass
class InitRow:
    arm: int
    loss: float
    cosine: float
    estimate0: float


def write_trace(trace, config, path: Path) -> None:
    """Write the records CSV, the probe companion, and the metadata file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = len(trace.init_records)

    header = FIXED_COLUMNS + [f"ucb_{i}" for i in range(k)]
    lines = [",".join(header)]
    for r in trace.records:
        lines.append(
            ",".join(
                [
                    str(r.turn),
                    str(r.selected),
                    fmt(r.loss_target),
                    fmt(r.loss_aux),
                    fmt(r.reward.pm),
                    fmt(r.reward.pt),
                    fmt(r.reward.alpha),
                    fmt(r.reward.combined),
                    fmt(r.estimate_after),
                    str(r.plays_after),
                    fmt(r.target_loss_after_step),
                ]
                + [fmt(s) for s in r.ucb_scores]
            )
        )
    records_bytes = ("\n".join(lines) + "\n").encode("utf-8")

    init_lines = [",".join(INIT_COLUMNS)]
    for p in trace.init_records:
        init_lines.append(
            ",".join([str(p.arm), fmt(p.loss), fmt(p.cosine), fmt(p.estimate0)])
        )
    init_bytes = ("\n".join(init_lines) + "\n").encode("utf-8")

    meta = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "config_digest": trace.config_digest,
        "policy": trace.policy,
        "k": k,
        "horizon": config.horizon,
        "beta": config.beta,
        "alpha_schedule": {
            "kind": config.alpha_schedule.kind,
            "alpha0": config.alpha_schedule.alpha0,
            "alpha_min": config.alpha_schedule.alpha_min,
            "decay": config.alpha_schedule.decay,
        },
        "pm_eval": config.pm_eval,
        "normalization": config.normalization,
        "seed": config.seed,
        "completed": trace.completed,
        "records_sha256": hashlib.sha256(records_bytes).hexdigest(),
        "init_sha256": hashlib.sha256(init_bytes).hexdigest(),
    }
    meta_bytes = (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode("utf-8")

    path.write_bytes(records_bytes)
    init_path(path).write_bytes(init_bytes)
    meta_path(path).write_bytes(meta_bytes)


def _parse_float(s: str) -> float:
    return float(s)


def read_trace(path: Path) -> tuple[dict, list[InitRow], list[TraceRow]]:
    """Parse the three trace files; raises ConfigError on schema violations."""
    path = Path(path)
    try:
        meta = json.loads(meta_path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"missing trace metadata file: {exc.filename}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"trace metadata is not valid JSON: {exc}") from exc
    if meta.get("schema_version") != TRACE_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported trace schema version {meta.get('schema_version')!r}"
        )

    init_rows = []
    init_lines = init_path(path).read_text().splitlines()
    if not init_lines or init_lines[0] != ",".join(INIT_COLUMNS):
        raise ConfigError(f"bad init-trace header in {init_path(path)}")
    for line in init_lines[1:]:
        arm, loss, cosine, est0 = line.split(",")
        init_rows.append(
            InitRow(
                arm=int(arm),
                loss=_parse_float(loss),
                cosine=_parse_float(cosine),
                estimate0=_parse_float(est0),
            )
        )

    lines = path.read_text().splitlines()
    if not lines:
        raise ConfigError(f"empty trace file {path}")
    header = lines[0].split(",")
    if header[: len(FIXED_COLUMNS)] != FIXED_COLUMNS:
        raise ConfigError(f"bad trace header in {path}")
    k = len(header) - len(FIXED_COLUMNS)
    if [f"ucb_{i}" for i in range(k)] != header[len(FIXED_COLUMNS) :]:
        raise ConfigError(f"bad ucb column names in {path}")

    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(header):
            raise ConfigError(f"row with {len(parts)} fields, expected {len(header)}")
        rows.append(
            TraceRow(
                turn=int(parts[0]),
                selected=int(parts[1]),
                loss_target=_parse_float(parts[2]),
                loss_aux=_parse_float(parts[3]),
                pm=_parse_float(parts[4]),
                pt=_parse_float(parts[5]),
                alpha=_parse_float(parts[6]),
                reward=_parse_float(parts[7]),
                estimate_after=_parse_float(parts[8]),
                plays_after=int(parts[9]),
                target_loss_after=_parse_float(parts[10]),
                ucb=[_parse_float(s) for s in parts[11:]],
            )
        )
    return meta, init_rows, rows


def verify_trace(path: Path) -> list[str]:
    """Re-derive every scheduler-owned column and check the content hashes.

    Returns a list of human-readable problems; an empty list means the
    trace is internally consistent and untampered.
    """
    path = Path(path)
    problems: list[str] = []
    try:
        meta, init_rows, rows = read_trace(path)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        return [f"unreadable trace: {exc}"]

    k = meta["k"]
    policy = meta["policy"]
    beta = meta["beta"]
    schedule = AlphaSchedule(**meta["alpha_schedule"])
    horizon = meta["horizon"]
    normalization = meta["normalization"]

    if len(init_rows) != k:
        problems.append(f"init trace has {len(init_rows)} arms, metadata says {k}")
        return problems

    for p in init_rows:
        expected0 = 0.5 * (-p.loss) + 0.5 * p.cosine
        if p.estimate0 != expected0:
            problems.append(
                f"init arm {p.arm}: estimate0 {p.estimate0!r} != 0.5*(-loss)+0.5*cosine"
            )
        if not -1.0 <= p.cosine <= 1.0:
            problems.append(f"init arm {p.arm}: cosine {p.cosine!r} outside [-1, 1]")

    # Mirror of the run-time policy state, advanced with the recorded rewards.
    state = PolicyState(
        estimates=np.array([p.estimate0 for p in init_rows]),
        plays=np.ones(k),
        turn=0,
        horizon=max(horizon, 1),
        smoothing=beta,
        normalize=normalization == "running_minmax",
    )
    if state.normalize:
        for p in init_rows:
            state.reward_range.observe(p.estimate0)

    rng = np.random.default_rng(np.random.SeedSequence(meta["seed"]))

    for i, row in enumerate(rows):
        t = i + 1
        where = f"turn {row.turn}"
        if row.turn != t:
            problems.append(f"{where}: expected turn {t} at row {i}")
            break
        if len(row.ucb) != k:
            problems.append(f"{where}: {len(row.ucb)} ucb scores, expected {k}")
            break

        state.turn = t
        expected_scores = ucb_scores(state)
        for a, (got, want) in enumerate(zip(row.ucb, expected_scores)):
            if got != want and not (math.isnan(got) and math.isnan(want)):
                problems.append(f"{where}: ucb_{a} is {got!r}, recomputed {want!r}")

        if policy == "ucb":
            want_sel = _argmax_lowest(expected_scores)
        elif policy == "round_robin":
            want_sel = (t - 1) % k
        elif policy == "fixed_best_initial":
            want_sel = _argmax_lowest([p.estimate0 for p in init_rows])
        elif policy == "uniform_random":
            want_sel = int(rng.integers(0, k))
        else:  # all_mixed
            want_sel = -1
        if row.selected != want_sel:
            problems.append(
                f"{where}: selected arm {row.selected}, policy {policy} re-derives {want_sel}"
            )

        try:
            want_alpha = alpha_at(schedule, t, horizon)
        except ConfigError:
            problems.append(f"{where}: turn outside the metadata horizon {horizon}")
            break
        if row.alpha != want_alpha:
            problems.append(f"{where}: alpha {row.alpha!r}, schedule gives {want_alpha!r}")
        want_reward = row.alpha * row.pm + (1.0 - row.alpha) * row.pt
        if row.reward != want_reward:
            problems.append(
                f"{where}: reward {row.reward!r} != alpha*pm + (1-alpha)*pt = {want_reward!r}"
            )
        if not -1.0 <= row.pt <= 1.0:
            problems.append(f"{where}: pt {row.pt!r} outside [-1, 1]")
        if meta["pm_eval"] == "pre_update" and row.pm != -row.loss_aux:
            problems.append(f"{where}: pm {row.pm!r} != -loss_aux {(-row.loss_aux)!r}")

        if policy == "all_mixed":
            if not math.isnan(row.estimate_after) or row.plays_after != 0:
                problems.append(f"{where}: all_mixed rows must carry no arm update")
        elif not 0 <= row.selected < k:
            problems.append(f"{where}: selected arm {row.selected} out of range")
        elif not math.isfinite(row.reward):
            problems.append(f"{where}: non-finite observed reward {row.reward!r}")
        else:
            update_estimate(state, row.selected, row.reward)
            new_estimate = float(state.estimates[row.selected])
            new_plays = int(state.plays[row.selected])
            if row.estimate_after != new_estimate:
                problems.append(
                    f"{where}: estimate_after {row.estimate_after!r}, "
                    f"recomputed {new_estimate!r}"
                )
                # resync so a single bad field does not cascade
                state.estimates[row.selected] = row.estimate_after
            if row.plays_after != new_plays:
                problems.append(
                    f"{where}: plays_after {row.plays_after}, recomputed {new_plays}"
                )
                state.plays[row.selected] = float(row.plays_after)

        if len(problems) > 25:
            problems.append("... further problems suppressed")
            break

    for file, key in ((path, "records_sha256"), (init_path(path), "init_sha256")):
        digest = hashlib.sha256(file.read_bytes()).hexdigest()
        if digest != meta.get(key):
            problems.append(
                f"content hash mismatch for {file.name}: file {digest[:12]}..., "
                f"metadata {str(meta.get(key))[:12]}..."
            )
    return problems


def _argmax_lowest(scores) -> int:
    best = 0
    best_score = scores[0]
    for i in range(1, len(scores)):
        if scores[i] > best_score:
            best = i
            best_score = scores[i]
    return best
