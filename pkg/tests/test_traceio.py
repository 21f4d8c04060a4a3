"""Trace persistence and audit tests."""

import json
import math

import pytest

from conftest import table_config

from asap import traceio
from asap.driver import RunConfig, run, run_baseline
from asap.environment import make_aligned_suite


def small_run(tmp_path, horizon=15, beta=0.25, policy=None, **cfg_kw):
    env_cfg, _ = make_aligned_suite(dim=4, num_aux=3, aligned_index=1,
                                    alignment_cos=0.8, seed=7)
    path = tmp_path / "trace.csv"
    cfg = RunConfig(horizon=horizon, environment=env_cfg, beta=beta,
                    trace_path=path, **cfg_kw)
    trace = run(cfg) if policy is None else run_baseline(cfg, policy)
    return path, trace


class TestRoundTrip:
    def test_floats_round_trip_exactly(self, tmp_path):
        path, trace = small_run(tmp_path)
        meta, init_rows, rows = traceio.read_trace(path)
        for row, rec in zip(rows, trace.records):
            assert row.ucb == rec.ucb_scores
            assert row.reward == rec.reward.combined
            assert row.estimate_after == rec.estimate_after
            assert row.target_loss_after == rec.target_loss_after_step

    def test_infinity_rendering(self):
        assert traceio.fmt(math.inf) == "inf"
        assert traceio.fmt(-math.inf) == "-inf"
        assert float(traceio.fmt(math.pi)) == math.pi

    def test_init_companion(self, tmp_path):
        path, trace = small_run(tmp_path)
        _, init_rows, _ = traceio.read_trace(path)
        assert [p.arm for p in init_rows] == [0, 1, 2]
        for p, rec in zip(init_rows, trace.init_records):
            assert p.loss == rec.loss and p.cosine == rec.cosine


class TestVerify:
    @pytest.mark.parametrize("policy", [None, "uniform_random", "round_robin",
                                        "fixed_best_initial", "all_mixed"])
    def test_clean_traces_verify(self, tmp_path, policy):
        path, _ = small_run(tmp_path, policy=policy)
        assert traceio.verify_trace(path) == []

    def test_normalized_run_verifies(self, tmp_path):
        path, _ = small_run(tmp_path, normalization="running_minmax")
        assert traceio.verify_trace(path) == []

    def test_post_update_run_verifies(self, tmp_path):
        path, _ = small_run(tmp_path, pm_eval="post_update")
        assert traceio.verify_trace(path) == []

    @pytest.mark.parametrize("column", range(11))
    def test_any_single_field_tamper_detected(self, tmp_path, column):
        path, _ = small_run(tmp_path)
        lines = path.read_text().splitlines()
        parts = lines[5].split(",")
        old = parts[column]
        if "." in old or "e" in old or "inf" in old:
            parts[column] = traceio.fmt(float(old) + 0.125)
        else:
            parts[column] = str(int(old) + 1)
        lines[5] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        assert traceio.verify_trace(path) != []

    def test_selected_arm_tamper_names_turn(self, tmp_path):
        path, trace = small_run(tmp_path)
        lines = path.read_text().splitlines()
        parts = lines[3].split(",")
        parts[1] = "2" if parts[1] != "2" else "0"
        lines[3] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        problems = traceio.verify_trace(path)
        assert any("turn 3" in p for p in problems)

    def test_ucb_column_tamper_detected(self, tmp_path):
        path, _ = small_run(tmp_path)
        lines = path.read_text().splitlines()
        parts = lines[7].split(",")
        parts[11] = traceio.fmt(float(parts[11]) * 1.0000001)
        lines[7] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        assert any("ucb_0" in p for p in traceio.verify_trace(path))

    def test_init_tamper_detected(self, tmp_path):
        path, _ = small_run(tmp_path)
        ipath = traceio.init_path(path)
        lines = ipath.read_text().splitlines()
        parts = lines[1].split(",")
        parts[3] = traceio.fmt(float(parts[3]) + 0.5)
        lines[1] = ",".join(parts)
        ipath.write_text("\n".join(lines) + "\n")
        assert traceio.verify_trace(path) != []

    def test_meta_hash_catches_env_only_fields(self, tmp_path):
        # loss_target is not re-derivable without the environment; the
        # content hash must still flag the edit
        path, _ = small_run(tmp_path)
        lines = path.read_text().splitlines()
        parts = lines[4].split(",")
        parts[2] = traceio.fmt(float(parts[2]) + 1.0)
        lines[4] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        problems = traceio.verify_trace(path)
        assert any("hash" in p for p in problems)

    def test_missing_meta_reported(self, tmp_path):
        path, _ = small_run(tmp_path)
        traceio.meta_path(path).unlink()
        assert traceio.verify_trace(path) != []

    def test_table_run_verifies(self, tmp_path):
        cfg = table_config([1.0, -1.0, 0.0], init_estimates=[0.5, -0.5, 0.0],
                           horizon=6, trace_path=tmp_path / "t.csv")
        run(cfg)
        assert traceio.verify_trace(tmp_path / "t.csv") == []


class TestByteDeterminism:
    def test_identical_config_identical_bytes(self, tmp_path):
        p1, _ = small_run(tmp_path / "a", seed=4)
        p2, _ = small_run(tmp_path / "b", seed=4)
        assert p1.read_bytes() == p2.read_bytes()
        assert traceio.init_path(p1).read_bytes() == traceio.init_path(p2).read_bytes()
        assert traceio.meta_path(p1).read_bytes() == traceio.meta_path(p2).read_bytes()

    def test_meta_is_canonical_json(self, tmp_path):
        path, _ = small_run(tmp_path)
        meta = json.loads(traceio.meta_path(path).read_text())
        assert meta["schema_version"] == 1
        assert meta["policy"] == "ucb"
        assert len(meta["records_sha256"]) == 64
