import json
from pathlib import Path

import pytest

from flowvol.cli import EXIT_OK, EXIT_PARTIAL, EXIT_VALIDATION, main
from flowvol.model import toy_model
from flowvol.service.schemas import ModelPayload


@pytest.fixture
def workspace(tmp_path):
    spec = ModelPayload.from_model(toy_model(0.5, 0.2, 0.3)).model_dump(mode="json")
    spec_path = tmp_path / "toy.json"
    spec_path.write_text(json.dumps(spec))
    config_path = tmp_path / "run.cfg"
    config_path.write_text(
        "dictionary_size = 1\n"
        "tau_max = 1.0\n"
        "baseline_bins = 1\n"
        "session_open = 0\n"
        "session_close = 2000\n"
        "min_events = 200\n"
        "seed = 5\n"
        "control_replicates = 2\n"
        "window_days = 4\n"
    )
    return tmp_path, str(config_path), str(spec_path)


def run(argv):
    return main(argv)


class TestSimulateCommand:
    def test_writes_events_and_truth(self, workspace):
        tmp, cfg, spec = workspace
        out = tmp / "sim"
        assert run([
            "simulate", "--config", cfg, "--spec", spec,
            "--horizon", "2000", "--out", str(out),
        ]) == EXIT_OK
        assert (out / "events.csv").exists()
        truth = json.loads((out / "truth.json").read_text())
        assert truth["sigma2"] == pytest.approx(1.6528925619834713, rel=1e-9)

    def test_idempotent_outputs(self, workspace):
        tmp, cfg, spec = workspace
        out1, out2 = tmp / "s1", tmp / "s2"
        for out in (out1, out2):
            assert run([
                "simulate", "--config", cfg, "--spec", spec,
                "--horizon", "500", "--out", str(out),
            ]) == EXIT_OK
        assert (out1 / "events.csv").read_bytes() == (out2 / "events.csv").read_bytes()
        assert (out1 / "truth.json").read_bytes() == (out2 / "truth.json").read_bytes()

    def test_unstable_spec_refused(self, workspace):
        tmp, cfg, _ = workspace
        bad = ModelPayload.from_model(toy_model(0.5, 0.7, 0.6)).model_dump(mode="json")
        bad_path = tmp / "bad.json"
        bad_path.write_text(json.dumps(bad))
        code = run([
            "simulate", "--config", cfg, "--spec", str(bad_path),
            "--horizon", "100", "--out", str(tmp / "nope"),
        ])
        assert code == EXIT_VALIDATION
        assert not (tmp / "nope" / "events.csv").exists()

    def test_zero_baseline_empty_file_with_header(self, workspace):
        tmp, cfg, _ = workspace
        spec = ModelPayload.from_model(toy_model(0.5, 0.2, 0.3)).model_dump(mode="json")
        spec["baseline_values"] = [[0.0], [0.0]]
        path = tmp / "zero.json"
        path.write_text(json.dumps(spec))
        out = tmp / "zero_out"
        assert run([
            "simulate", "--config", cfg, "--spec", str(path),
            "--horizon", "100", "--out", str(out),
        ]) == EXIT_OK
        assert (out / "events.csv").read_text() == (
            "ts_ns,agent_id,event_type,delta_half_ticks\n"
        )

    def test_bad_config_exits_2(self, workspace):
        tmp, _, spec = workspace
        bad_cfg = tmp / "bad.cfg"
        bad_cfg.write_text("tau_min = -1\n")
        assert run([
            "simulate", "--config", str(bad_cfg), "--spec", spec,
            "--horizon", "100", "--out", str(tmp / "x"),
        ]) == EXIT_VALIDATION


class TestFitAttributeFlow:
    def simulate_days(self, tmp, cfg, spec, n_days, horizon="2000"):
        paths = []
        for d in range(n_days):
            out = tmp / f"day{d}"
            assert run([
                "simulate", "--config", cfg, "--spec", spec,
                "--horizon", horizon, "--seed", str(100 + d), "--out", str(out),
            ]) == EXIT_OK
            renamed = out / f"events_d{d:02d}.csv"
            (out / "events.csv").rename(renamed)
            paths.append(str(renamed))
        return paths

    def test_fit_then_attribute(self, workspace):
        tmp, cfg, spec = workspace
        events = self.simulate_days(tmp, cfg, spec, 3)
        fits_dir = tmp / "fits"
        assert run([
            "fit", "--config", cfg, "--events", *events, "--jobs", "2",
            "--out", str(fits_dir),
        ]) == EXIT_OK
        fit_files = sorted(str(p) for p in fits_dir.glob("fits_*.json"))
        assert len(fit_files) == 3
        doc = json.loads(Path(fit_files[0]).read_text())
        assert doc["panel"] == ["A", "__rest__"]  # fixed panel keeps the rest slot
        assert doc["schema_version"] == 1

        rep_dir = tmp / "rep"
        assert run([
            "attribute", "--config", cfg, "--fits", *fit_files, "--out", str(rep_dir),
        ]) == EXIT_OK
        report = json.loads((rep_dir / "report.json").read_text())
        assert len(report["reports"]) == 3
        sigma2 = report["reports"][0]["sigma2"]
        assert sigma2 == pytest.approx(1.6529, rel=0.35)
        assert len(report["sigma2_mu_ratio"]) == 3
        csv_text = (rep_dir / "report.csv").read_text().splitlines()
        assert csv_text[0].startswith("day,row_type,agent")
        # 16 component rows (A + empty rest slot) and 2 agent rows per day
        assert len(csv_text) == 1 + 3 * (16 + 2)

        rerun_dir = tmp / "rep_rerun"
        assert run([
            "attribute", "--config", cfg, "--fits", *fit_files, "--out", str(rerun_dir),
        ]) == EXIT_OK
        assert (rerun_dir / "report.json").read_bytes() == (rep_dir / "report.json").read_bytes()
        assert (rerun_dir / "report.csv").read_bytes() == (rep_dir / "report.csv").read_bytes()

    def test_fit_idempotent(self, workspace):
        tmp, cfg, spec = workspace
        events = self.simulate_days(tmp, cfg, spec, 1)
        out1, out2 = tmp / "f1", tmp / "f2"
        for out in (out1, out2):
            assert run([
                "fit", "--config", cfg, "--events", *events, "--out", str(out),
            ]) == EXIT_OK
        a = (out1 / "fits_d00.json").read_bytes()
        b = (out2 / "fits_d00.json").read_bytes()
        assert a == b

    def test_partial_failure_exit_code(self, workspace):
        tmp, cfg, spec = workspace
        events = self.simulate_days(tmp, cfg, spec, 1)
        empty = tmp / "events_empty.csv"
        empty.write_text("ts_ns,agent_id,event_type,delta_half_ticks\n")
        fits_dir = tmp / "fits_partial"
        code = run([
            "fit", "--config", cfg, "--events", events[0], str(empty),
            "--out", str(fits_dir),
        ])
        assert code == EXIT_PARTIAL
        summary = json.loads((fits_dir / "fit_summary.json").read_text())
        assert summary["days"]["d00"] == "ok"
        assert "NoEligibleAgents" in summary["days"]["empty"] or "failed" in summary["days"]["empty"]

    def test_fixed_panel_survives_agent_absence(self, workspace):
        # agent B trades on day 0 only; day 1 still carries the full panel
        # with B's blocks zeroed, so the ratio series stays well defined
        tmp, cfg, spec = workspace
        spec_b = json.loads(Path(spec).read_text())
        spec_b["components"] = [["B", "P+"], ["B", "P-"]]
        spec_b_path = tmp / "toy_b.json"
        spec_b_path.write_text(json.dumps(spec_b))

        day0 = tmp / "mk0"
        assert run([
            "simulate", "--config", cfg, "--spec", spec, "--horizon", "2000",
            "--seed", "61", "--out", str(day0),
        ]) == EXIT_OK
        day0b = tmp / "mk0b"
        assert run([
            "simulate", "--config", cfg, "--spec", str(spec_b_path),
            "--horizon", "2000", "--seed", "62", "--out", str(day0b),
        ]) == EXIT_OK
        from flowvol.events import merge_streams, write_events_csv
        from flowvol.pipeline import ingest_events_csv

        merged = merge_streams(
            [
                ingest_events_csv(day0 / "events.csv", session=(0.0, 2000.0)).stream,
                ingest_events_csv(day0b / "events.csv", session=(0.0, 2000.0)).stream,
            ],
            session=(0.0, 2000.0),
        )
        events0 = tmp / "events_m0.csv"
        write_events_csv(merged, events0)
        day1 = tmp / "mk1"
        assert run([
            "simulate", "--config", cfg, "--spec", spec, "--horizon", "2000",
            "--seed", "63", "--out", str(day1),
        ]) == EXIT_OK
        events1 = tmp / "events_m1.csv"
        (day1 / "events.csv").rename(events1)

        fits_dir = tmp / "fits_absent"
        assert run([
            "fit", "--config", cfg, "--events", str(events0), str(events1),
            "--out", str(fits_dir),
        ]) == EXIT_OK
        doc0 = json.loads((fits_dir / "fits_m0.json").read_text())
        doc1 = json.loads((fits_dir / "fits_m1.json").read_text())
        assert doc0["panel"] == doc1["panel"] == ["A", "B", "__rest__"]
        assert "B" in doc1["skipped"]
        rep_dir = tmp / "rep_absent"
        assert run([
            "attribute", "--config", cfg,
            "--fits", str(fits_dir / "fits_m0.json"), str(fits_dir / "fits_m1.json"),
            "--out", str(rep_dir),
        ]) == EXIT_OK
        report = json.loads((rep_dir / "report.json").read_text())
        assert all(r["stable"] for r in report["reports"])
        assert all(v is not None for v in report["sigma2_mu_ratio"])
        day1_agents = {a["agent"]: a for a in report["reports"][1]["agents"]}
        assert day1_agents["B"]["rho"] == 0.0  # absent agent removes nothing

    def test_control_command(self, workspace):
        tmp, cfg, spec = workspace
        events = self.simulate_days(tmp, cfg, spec, 1)
        out = tmp / "ctl"
        assert run([
            "control", "--config", cfg, "--events", *events, "--out", str(out),
        ]) == EXIT_OK
        report = json.loads((out / "control_report.json").read_text())
        row = report["results"][0]["agents"][0]
        assert row["rho_residual"] == 0.0  # single agent: shuffle is the identity
        assert report["results"][0]["replicates"] == 2

    def test_deciles_with_features(self, workspace):
        tmp, cfg, spec = workspace
        events = self.simulate_days(tmp, cfg, spec, 12, horizon="600")
        fits_dir = tmp / "fits12"
        cfg12 = tmp / "run12.cfg"
        cfg12.write_text(
            "dictionary_size = 1\nbaseline_bins = 1\nsession_close = 600\n"
            "min_events = 50\nseed = 5\nwindow_days = 4\n"
        )
        assert run([
            "fit", "--config", str(cfg12), "--events", *events, "--out", str(fits_dir),
        ]) == EXIT_OK
        fit_files = sorted(str(p) for p in fits_dir.glob("fits_*.json"))
        header = (
            "agent_id,day,eod_position_ratio,order_lifetime_median_s,"
            "inter_event_time_median_s,aggressive_volume_fraction,presence_l1,"
            "count_P+,count_P-,count_Ta,count_Tb,count_La,count_Lb,count_Ca,count_Cb"
        )
        rows = [header]
        for d in range(12):
            rows.append(f"A,d{d:02d},{float(d)},0.5,0.1,25.0,50.0,1,1,0,0,0,0,0,0")
        features_path = tmp / "features.csv"
        features_path.write_text("\n".join(rows) + "\n")
        rep_dir = tmp / "rep12"
        assert run([
            "attribute", "--config", str(cfg12), "--fits", *fit_files,
            "--features", str(features_path), "--out", str(rep_dir),
        ]) == EXIT_OK
        report = json.loads((rep_dir / "report.json").read_text())
        assert "deciles" in report
        assert any(d["feature"] == "eod_position_ratio" for d in report["deciles"])
        for summary in report["deciles"]:
            assert len(summary["means"]) == 10


class TestRemoteServer:
    def test_cli_against_running_service(self, workspace):
        import socket
        import threading
        import time as time_mod

        import uvicorn

        from flowvol.service.app import app

        with socket.socket() as sock:
            sock.bind(("127.0.0.1", 0))
            port = sock.getsockname()[1]
        config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time_mod.time() + 10
        while not server.started:
            if time_mod.time() > deadline:
                pytest.fail("service did not start")
            time_mod.sleep(0.05)
        try:
            tmp, cfg, spec = workspace
            out = tmp / "remote"
            code = run([
                "simulate", "--config", cfg, "--spec", spec, "--horizon", "500",
                "--server", f"http://127.0.0.1:{port}", "--out", str(out),
            ])
            assert code == EXIT_OK
            remote = (out / "events.csv").read_bytes()
            local_out = tmp / "local"
            assert run([
                "simulate", "--config", cfg, "--spec", spec, "--horizon", "500",
                "--out", str(local_out),
            ]) == EXIT_OK
            assert remote == (local_out / "events.csv").read_bytes()
        finally:
            server.should_exit = True
            thread.join(timeout=10)


class TestFeaturesCommand:
    def test_features_flow(self, workspace, tmp_path):
        tmp, cfg, _ = workspace
        raw = tmp / "raw_d00.csv"
        raw.write_text(
            "ts_ns,agent_id,action,side,price_ht,size,order_id,bb_pre,ba_pre,bb_post,ba_post,aggressor\n"
            "1000000000,A,insert,bid,9000,1,o1,9000,9006,9000,9006,0\n"
            "2000000000,A,cancel,bid,9000,1,o1,9000,9006,9000,9006,0\n"
            "3000000000,B,trade,ask,9006,5,o2,9000,9006,9000,9006,1\n"
        )
        out = tmp / "feat"
        assert run([
            "features", "--config", cfg, "--raw", str(raw), "--out", str(out),
        ]) == EXIT_OK
        text = (out / "features.csv").read_text().splitlines()
        assert text[0].startswith("agent_id,day,eod_position_ratio")
        assert len(text) == 3  # header + 2 agents
        assert (out / "events_d00.csv").exists()

    def test_missing_raw_file_exits_2(self, workspace):
        tmp, cfg, _ = workspace
        assert run([
            "features", "--config", cfg, "--raw", str(tmp / "nope.csv"),
            "--out", str(tmp / "o"),
        ]) == EXIT_VALIDATION
