"""Closed-loop harness tests: scenario parsing, determinism, log round-trips.

The oracles here are structural rather than numeric: a frozen one-slot
scenario whose record is computable by hand, byte-identical reruns, exact
CSV round-trips, and stream-isolation checks that toggling one mechanism
leaves the untouched streams bit-identical.
"""

import copy
import json
import math
import os

import numpy as np
import pytest

from lendlab.equilibrium import equilibrium_rate
from lendlab.harness import (
    CSV_COLUMNS,
    Scenario,
    ScenarioError,
    emit_csv,
    load_scenario,
    parse_csv,
    planner_experiment_dict,
    reproduce_planner_experiment,
    reproduce_rate_experiment,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
    write_run,
)
from lendlab.market import regime_at
from lendlab.pool import PoolInvariantError


def _static_doc(**overrides) -> dict:
    """A frozen market: no price moves, no flows, no interest."""
    doc = {
        "name": "static",
        "horizon": 1,
        "seed": 0,
        "initial_pool": {"p0": 2.0, "L0": 1000.0, "B0": 400.0},
        "protocol": {"r": 0.0, "c": 0.5, "lt": 0.8, "li": 0.05},
        "regimes": [
            {
                "mu": 0.0,
                "sigma": 0.0,
                "r_ext_lend": 0.04,
                "r_ext_borrow": 0.10,
                "eta_lend": 0.0,
                "eta_borrow": 0.0,
                "alpha": 1.0,
                "zeta": 0.0,
                "duration": 1,
            }
        ],
        "controller": {
            "kind": "baseline",
            "R0": 0.0,
            "R_slope1": 0.0,
            "R_slope2": 0.0,
            "u_opt": 0.8,
        },
    }
    doc.update(overrides)
    return doc


def _lse_doc(**overrides) -> dict:
    """A small stochastic scenario with the regression controller."""
    doc = {
        "name": "lse-small",
        "horizon": 200,
        "seed": 42,
        "initial_pool": {"p0": 1.0, "L0": 1e9, "B0": 4e8},
        "protocol": {"r": 0.08, "c": 0.5, "lt": 0.8, "li": 0.05},
        "regimes": [
            {
                "mu": 0.0,
                "sigma": 1e-3,
                "r_ext_lend": 0.04,
                "r_ext_borrow": 0.12,
                "eta_lend": 50.0,
                "eta_borrow": 50.0,
                "alpha": 1.0,
                "zeta": 0.1,
                "duration": 200,
            }
        ],
        "controller": {
            "kind": "lse",
            "r_min": 0.05,
            "r_max": 0.20,
            "delta": 1e-3,
            "t_sleep": 20,
            "nu": 0.1,
            "W": 50,
        },
        "flow_caps": {"max_inflow_frac": 0.1, "max_outflow_frac": 0.1},
    }
    doc.update(overrides)
    return doc


class TestScenarioParsing:
    def test_round_trip_through_dict(self):
        s = scenario_from_dict(_lse_doc())
        s2 = scenario_from_dict(scenario_to_dict(s))
        assert s2 == s

    def test_unknown_top_level_key_rejected(self):
        doc = _static_doc()
        doc["extra"] = 1
        with pytest.raises(ScenarioError, match="extra"):
            scenario_from_dict(doc)

    @pytest.mark.parametrize(
        "section", ["initial_pool", "protocol", "controller", "flow_caps"]
    )
    def test_unknown_nested_key_rejected(self, section):
        doc = _lse_doc()
        doc.setdefault(section, {})
        doc[section]["bogus"] = 1.0
        with pytest.raises(ScenarioError, match="bogus"):
            scenario_from_dict(doc)

    def test_unknown_regime_key_rejected(self):
        doc = _static_doc()
        doc["regimes"][0]["typo"] = 3
        with pytest.raises(ScenarioError, match="typo"):
            scenario_from_dict(doc)

    def test_missing_required_key_rejected(self):
        doc = _static_doc()
        del doc["protocol"]["lt"]
        with pytest.raises(ScenarioError, match="lt"):
            scenario_from_dict(doc)

    def test_bool_rejected_for_numeric_field(self):
        doc = _static_doc()
        doc["protocol"]["r"] = True
        with pytest.raises(ScenarioError, match="protocol.r"):
            scenario_from_dict(doc)

    def test_horizon_beyond_schedule_rejected(self):
        doc = _static_doc(horizon=2)
        with pytest.raises(ScenarioError, match="horizon"):
            scenario_from_dict(doc)

    def test_default_collateral_fully_margined(self):
        s = scenario_from_dict(_static_doc())
        # C0 = B0 / (c * p0) = 400 / (0.5 * 2)
        assert s.pool.C == pytest.approx(400.0)

    def test_load_scenario_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ScenarioError, match="JSON"):
            load_scenario(str(path))

    def test_load_scenario_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="cannot read"):
            load_scenario(str(tmp_path / "absent.json"))


class TestRunScenario:
    def test_static_slot_preserves_state(self):
        records = run_scenario(scenario_from_dict(_static_doc()))
        assert len(records) == 1
        rec = records[0]
        assert rec.t == 0
        assert rec.p == 2.0
        assert rec.L == 1000.0
        assert rec.B == 400.0
        assert rec.U == pytest.approx(0.4)
        assert rec.applied_dB == 0.0 and rec.applied_dL == 0.0
        assert rec.default_fraction == 0.0 and rec.liquidated_fraction == 0.0
        assert not rec.clipped_flag and not rec.adversarial_flag

    def test_slot_index_runs_to_horizon(self):
        records = run_scenario(scenario_from_dict(_lse_doc(horizon=37)))
        assert [r.t for r in records] == list(range(37))

    def test_rerun_is_identical(self):
        s = scenario_from_dict(_lse_doc())
        assert run_scenario(s) == run_scenario(s)

    def test_utilization_consistent_with_books(self):
        for rec in run_scenario(scenario_from_dict(_lse_doc())):
            assert rec.U == pytest.approx(rec.B / rec.L, rel=1e-12)

    def test_equilibrium_columns_match_closed_form(self):
        s = scenario_from_dict(_lse_doc(horizon=5))
        records = run_scenario(s)
        regime = regime_at(s.schedule, 0)
        for rec in records:
            assert rec.r_star == pytest.approx(
                equilibrium_rate(regime, rec.c), rel=1e-12
            )

    def test_no_equilibrium_logs_nan(self):
        doc = _lse_doc(horizon=3)
        doc["regimes"][0]["r_ext_borrow"] = -0.5  # risk terms cannot rescue this
        records = run_scenario(scenario_from_dict(doc))
        assert all(math.isnan(r.r_star) and math.isnan(r.u_star) for r in records)

    def test_clipped_flag_marks_capped_flows(self):
        doc = _lse_doc(horizon=50)
        doc["flow_caps"] = {"max_inflow_frac": 0.001, "max_outflow_frac": 0.001}
        records = run_scenario(scenario_from_dict(doc))
        clipped = [r for r in records if r.clipped_flag]
        assert clipped, "tiny caps must clip the noisy flows somewhere"
        cap_hits = [
            r
            for r in clipped
            if r.applied_dB != 0.0 or r.applied_dL != 0.0
        ]
        assert cap_hits

    def test_pool_failure_reports_slot(self):
        # lt * (1 + li) > 1 makes the liquidation target unreachable once
        # the trigger fires; a crash must carry the slot index.
        doc = _lse_doc(horizon=400)
        doc["protocol"] = {"r": 0.08, "c": 0.9, "lt": 0.97, "li": 0.05}
        doc["regimes"][0]["sigma"] = 0.15
        doc["regimes"][0]["duration"] = 400
        with pytest.raises(PoolInvariantError, match=r"slot \d+"):
            run_scenario(scenario_from_dict(doc))


class TestStreamIsolation:
    def test_disabled_adversary_equals_absent_adversary(self):
        base = run_scenario(scenario_from_dict(_lse_doc()))
        doc = _lse_doc()
        doc["adversary"] = {"beta": 0.0, "mode": "flip-sign"}
        with_zero = run_scenario(scenario_from_dict(doc))
        assert with_zero == base

    def test_adversary_leaves_price_stream_untouched(self):
        base = run_scenario(scenario_from_dict(_lse_doc()))
        doc = _lse_doc()
        doc["adversary"] = {"beta": 0.3, "mode": "flip-sign"}
        tampered = run_scenario(scenario_from_dict(doc))
        assert any(r.adversarial_flag for r in tampered)
        assert [r.p for r in tampered] == [r.p for r in base]

    def test_adversary_mode_changes_only_after_first_hit(self):
        doc_a = _lse_doc()
        doc_a["adversary"] = {"beta": 0.3, "mode": "flip-sign"}
        doc_b = _lse_doc()
        doc_b["adversary"] = {"beta": 0.3, "mode": "constant-push-up", "magnitude": 0.5}
        recs_a = run_scenario(scenario_from_dict(doc_a))
        recs_b = run_scenario(scenario_from_dict(doc_b))
        flags_a = [r.adversarial_flag for r in recs_a]
        flags_b = [r.adversarial_flag for r in recs_b]
        first_hit = flags_a.index(True)
        assert flags_a[: first_hit + 1] == flags_b[: first_hit + 1]
        assert recs_a[:first_hit] == recs_b[:first_hit]
        assert recs_a[first_hit].applied_dB != recs_b[first_hit].applied_dB

    def test_informed_run_without_adversary_matches_blind(self):
        s = scenario_from_dict(_lse_doc())
        assert run_scenario(s, informed=True) == run_scenario(s, informed=False)

    def test_informed_run_diverges_only_through_decisions(self):
        doc = _lse_doc()
        doc["adversary"] = {"beta": 0.3, "mode": "constant-push-up", "magnitude": 1.0}
        s = scenario_from_dict(doc)
        blind = run_scenario(s, informed=False)
        informed = run_scenario(s, informed=True)
        assert [r.p for r in informed] == [r.p for r in blind]
        assert [r.adversarial_flag for r in informed] == [
            r.adversarial_flag for r in blind
        ]
        assert informed != blind  # dropping tainted samples changes the fits

    def test_informed_robust_survives_taint_before_any_clean_sample(self):
        """A tainted observation arriving while the window is still empty must
        land in the exploration path, not crash the robust fitter (regression:
        the trimmed fit used to be called with an empty window and rejected
        its own k=0)."""
        doc = _lse_doc(horizon=30, seed=8)
        doc["controller"] = {
            "kind": "lse-robust", "r_min": 0.05, "r_max": 0.20,
            "delta": 1e-5, "t_sleep": 20, "nu": 0.2, "W": 25,
            "keep_frac": 0.7,
        }
        doc["regimes"] = [{
            "mu": 0.0, "sigma": 1e-3, "r_ext_lend": 0.04,
            "r_ext_borrow": 0.12, "eta_lend": 2.0, "eta_borrow": 2.0,
            "alpha": 1.0, "zeta": 0.005, "duration": 30,
        }]
        doc["adversary"] = {"beta": 0.45, "mode": "flip-sign"}
        doc["flow_caps"] = {"max_inflow_frac": 0.5, "max_outflow_frac": 0.5}
        records = run_scenario(scenario_from_dict(doc), informed=True)
        assert records[0].adversarial_flag  # seed chosen to taint slot 0
        assert len(records) == 30


class TestCsvRoundTrip:
    def test_parse_inverts_emit(self, tmp_path):
        records = run_scenario(scenario_from_dict(_lse_doc()))
        path = str(tmp_path / "run.csv")
        emit_csv(records, path)
        assert parse_csv(path) == records

    def test_emit_is_byte_deterministic(self, tmp_path):
        s = scenario_from_dict(_lse_doc())
        p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        emit_csv(run_scenario(s), p1)
        emit_csv(run_scenario(s), p2)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_schema_drift_names_missing_column(self, tmp_path):
        records = run_scenario(scenario_from_dict(_static_doc()))
        path = str(tmp_path / "run.csv")
        emit_csv(records, path)
        lines = open(path).read().splitlines()
        lines[0] = lines[0].replace("r_star", "rstar")
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="r_star"):
            parse_csv(path)

    def test_header_field_count_enforced(self, tmp_path):
        path = str(tmp_path / "run.csv")
        open(path, "w").write(",".join(CSV_COLUMNS) + "\n1,2,3\n")
        with pytest.raises(ValueError, match="cells"):
            parse_csv(path)

    def test_write_run_emits_log_and_echo(self, tmp_path):
        s = scenario_from_dict(_lse_doc())
        records = run_scenario(s)
        run_dir = write_run(str(tmp_path), s, records)
        assert os.path.isdir(run_dir)
        assert parse_csv(os.path.join(run_dir, "run.csv")) == records
        echoed = load_scenario(os.path.join(run_dir, "scenario.json"))
        assert echoed == s


class TestCannedExperiments:
    def test_rate_experiment_layout_and_direction(self, tmp_path):
        summary = reproduce_rate_experiment(5, str(tmp_path))
        names = {
            "rate_eta50_lse",
            "rate_eta50_baseline",
            "rate_eta5_lse",
            "rate_eta5_baseline",
        }
        assert set(summary["runs"]) == names
        for name in names:
            assert os.path.isfile(str(tmp_path / name / "run.csv"))
        assert os.path.isfile(str(tmp_path / "rate_summary.json"))
        runs = summary["runs"]
        assert (
            runs["rate_eta50_lse"]["median_terminal_error"]
            < runs["rate_eta50_baseline"]["median_terminal_error"]
        )
        assert (
            runs["rate_eta5_lse"]["median_terminal_error"]
            < runs["rate_eta5_baseline"]["median_terminal_error"]
        )

    def test_rate_experiment_deterministic(self, tmp_path):
        a = reproduce_rate_experiment(9, str(tmp_path / "a"))
        b = reproduce_rate_experiment(9, str(tmp_path / "b"))
        assert a == b

    def test_planner_experiment_replans_downward(self, tmp_path):
        summary = reproduce_planner_experiment(11, str(tmp_path))
        fires = summary["fires"]
        assert len(fires) >= 4
        step_slot = 3000
        pre = [f["c"] for f in fires if f["t"] < step_slot]
        post = [f["c"] for f in fires if f["t"] >= step_slot]
        assert pre and post
        assert max(post) < min(pre)
        assert summary["final_c"] == post[-1]
        assert os.path.isfile(str(tmp_path / "planner_volstep" / "run.csv"))
        assert os.path.isfile(str(tmp_path / "planner_summary.json"))

    def test_planner_experiment_scenario_is_valid_document(self):
        doc = planner_experiment_dict(1)
        s = scenario_from_dict(doc)
        assert isinstance(s, Scenario)
        assert s.planner is not None
        echoed = json.loads(json.dumps(scenario_to_dict(s)))
        assert scenario_from_dict(copy.deepcopy(echoed)) == s
