import json
import math

import numpy as np
import pytest

from forensic_bf.asymptotics import _resolve_workers
from forensic_bf.cli import (
    AnalysisConfig,
    IngestError,
    export_csv,
    ingest_background,
    ingest_csv,
    ingest_observation_set,
    main,
    run_estimate,
)
from forensic_bf.types import BackgroundDatabase, ObservationSet

from conftest import make_background


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


BG_TEXT = "source_id,item_id,f1\n" + "".join(
    f"w{i},{j},{0.1 * i + 0.01 * j}\n" for i in range(1, 4) for j in range(1, 6)
)


class TestIngest:
    def test_single_row_single_source(self, tmp_path):
        path = write(tmp_path / "x.csv", "source_id,item_id,f1\nw1,1,0.5\n")
        parsed = ingest_csv(path)
        assert isinstance(parsed, ObservationSet)
        assert parsed.n == 1 and parsed.p == 1
        assert parsed.items[0, 0] == 0.5

    def test_two_sources_five_items(self, tmp_path):
        text = "source_id,item_id,f1\n" + "".join(
            f"w{i},{j},{i + 0.1 * j}\n" for i in (1, 2) for j in range(1, 6)
        )
        parsed = ingest_csv(write(tmp_path / "bg.csv", text))
        assert isinstance(parsed, BackgroundDatabase)
        assert parsed.n_sources == 2
        assert parsed.counts == (5, 5)

    def test_row_order_preserved(self, tmp_path):
        text = "source_id,item_id,f1\nw1,1,1.0\nw1,2,2.0\nw1,3,3.0\n"
        parsed = ingest_csv(write(tmp_path / "x.csv", text))
        np.testing.assert_array_equal(parsed.items.ravel(), [1.0, 2.0, 3.0])

    @pytest.mark.parametrize(
        "text,code,row",
        [
            ("", "empty-file", None),
            ("source_id,item_id,f1\n", "empty-file", None),
            ("a,b,c\nw1,1,0.5\n", "bad-header", 1),
            ("source_id,item_id,g1\nw1,1,0.5\n", "bad-header", 1),
            ("source_id,item_id,f1\nw1,1\n", "ragged-row", 2),
            ("source_id,item_id,f1\nw1,1,0.5,9\n", "ragged-row", 2),
            ("source_id,item_id,f1\nw1,1,abc\n", "non-numeric", 2),
            ("source_id,item_id,f1\nw1,1,0.5\nw1,2,NaN\n", "non-numeric", 3),
            ("source_id,item_id,f1\nw1,1,0.5\nw1,1,0.7\n", "duplicate-item", 3),
        ],
    )
    def test_error_codes(self, tmp_path, text, code, row):
        path = write(tmp_path / "bad.csv", text)
        with pytest.raises(IngestError) as info:
            ingest_csv(path)
        assert info.value.code == code
        assert info.value.row == row

    def test_shape_guards(self, tmp_path):
        single = write(tmp_path / "one.csv", "source_id,item_id,f1\nw1,1,0.5\n")
        with pytest.raises(IngestError):
            ingest_background(single)
        multi = write(tmp_path / "two.csv", BG_TEXT)
        with pytest.raises(IngestError):
            ingest_observation_set(multi)

    def test_round_trip(self, tmp_path, rng):
        db = make_background(rng, n_a=4, n_w=3)
        out = tmp_path / "export.csv"
        export_csv(db, out)
        assert ingest_csv(out) == db
        obs = ObservationSet("u", rng.standard_normal((3, 2)))
        out2 = tmp_path / "obs.csv"
        export_csv(obs, out2)
        assert ingest_csv(out2) == obs


def base_config(tmp_path, rng, framework="common-source", n_a=25, seed=11, n_b=1):
    db = make_background(rng, n_a=n_a)
    export_csv(db, tmp_path / "bg.csv")
    export_csv(
        ObservationSet("u1", rng.normal(0.0, 1.4, size=n_b)), tmp_path / "xb.csv"
    )
    export_csv(ObservationSet("u2", [0.1]), tmp_path / "xc.csv")
    config = {
        "framework": framework,
        "background": "bg.csv",
        "x_b": "xb.csv",
        "x_c": "xc.csv",
        "prior": {
            "m0": [0.0], "V0": [[4.0]],
            "nu_b": 5, "S_b": [[3.0]],
            "nu_w": 5, "S_w": [[3.0]],
            "m0_b": [0.0], "V0_b": [[4.0]],
            "nu_wb": 5, "S_wb": [[3.0]],
        },
        "chain": {"iterations": 2600, "burn_in": 600, "seed": seed},
        "alpha": 0.05,
    }
    return config


class TestAnalysisConfig:
    def test_requires_seed(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        del config["chain"]["seed"]
        path = write(tmp_path / "cfg.json", json.dumps(config))
        with pytest.raises(Exception, match="seed"):
            AnalysisConfig.from_file(path)
        # the --seed override satisfies the requirement
        cfg = AnalysisConfig.from_file(path, seed_override=3)
        assert cfg.chain.seed == 3

    def test_missing_file_is_validation_error(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        config["background"] = "absent.csv"
        path = write(tmp_path / "cfg.json", json.dumps(config))
        assert main(["estimate", "--config", str(path)]) == 2

    def test_alpha_domain(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        config["alpha"] = 1.5
        path = write(tmp_path / "cfg.json", json.dumps(config))
        assert main(["estimate", "--config", str(path)]) == 2


class TestEstimateCommand:
    def test_full_run_and_determinism(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        path = write(tmp_path / "cfg.json", json.dumps(config))
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert main(["estimate", "--config", str(path), "--out", str(out1)]) == 0
        assert main(["estimate", "--config", str(path), "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        report = json.loads(out1.read_text())
        assert set(report["estimates"]) == {
            "posterior_mean_m2", "inverse_mean_m1", "prior_form",
        }
        interval = report["interval"]
        assert interval["lower"] <= report["estimates"]["posterior_mean_m2"]["value"]
        assert report["inputs"]["background"]["sha256"]

    def test_unit_lr_fixture_reports_bf_near_one(self, tmp_path, rng):
        # subject population constructed to match the background marginal:
        # every form lands near 1 and the interval contains 1
        config = base_config(
            tmp_path, rng, framework="specific-source", n_a=60, n_b=60
        )
        path = write(tmp_path / "cfg.json", json.dumps(config))
        out = tmp_path / "report.json"
        assert main(["estimate", "--config", str(path), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        for est in report["estimates"].values():
            assert 0.4 < est["value"] < 2.5
        assert report["interval"]["lower"] <= 1.0 <= report["interval"]["upper"]

    def test_framework_override_conflict(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        path = write(tmp_path / "cfg.json", json.dumps(config))
        code = main(
            ["estimate", "--config", str(path), "--framework", "specific-source"]
        )
        assert code == 2

    def test_derived_prior_config(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        heldout = make_background(rng, n_a=20, label_prefix="h")
        export_csv(heldout, tmp_path / "heldout.csv")
        config["prior"] = {"derive_from": "heldout.csv"}
        config["forms"] = ["posterior_mean_m2"]
        path = write(tmp_path / "cfg.json", json.dumps(config))
        out = tmp_path / "r.json"
        assert main(["estimate", "--config", str(path), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert "prior_heldout" in report["inputs"]

    def test_export_draws(self, tmp_path, rng):
        import csv as csv_mod

        config = base_config(tmp_path, rng)
        config["forms"] = ["posterior_mean_m2", "inverse_mean_m1"]
        path = write(tmp_path / "cfg.json", json.dumps(config))
        prefix = tmp_path / "draws"
        assert main(
            ["estimate", "--config", str(path), "--out", str(tmp_path / "r.json"),
             "--export-draws", str(prefix)]
        ) == 0
        with open(tmp_path / "draws_m2.csv", newline="") as handle:
            rows = list(csv_mod.reader(handle))
        assert rows[0] == ["draw", "chain", "mu_1", "sigma_b_1_1", "sigma_w_1_1"]
        assert len(rows) == 1 + 2000  # header + kept draws
        assert float(rows[1][3]) > 0.0  # covariance draws positive
        assert (tmp_path / "draws_m1.csv").exists()

    def test_seed_flag_changes_report(self, tmp_path, rng):
        config = base_config(tmp_path, rng)
        path = write(tmp_path / "cfg.json", json.dumps(config))
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        main(["estimate", "--config", str(path), "--out", str(out1)])
        main(["estimate", "--config", str(path), "--seed", "99", "--out", str(out2)])
        a = json.loads(out1.read_text())
        b = json.loads(out2.read_text())
        assert a["seed"] != b["seed"]
        assert a["estimates"]["posterior_mean_m2"]["log_value"] != (
            b["estimates"]["posterior_mean_m2"]["log_value"]
        )


class TestIntervalCommand:
    def test_published_row(self, tmp_path, capsys):
        out = tmp_path / "interval.json"
        code = main(
            ["interval", "--bf", "779.30", "--sigma", "249.7349",
             "--alpha", "0.05", "--out", str(out)]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "289.82" in printed and "1268.77" in printed
        report = json.loads(out.read_text())
        assert report["interval"]["lower"] == pytest.approx(289.83, rel=5e-3)

    def test_truncation(self, capsys):
        assert main(["interval", "--bf", "5.10e-6", "--sigma", "9.84e-5"]) == 0
        printed = capsys.readouterr().out
        assert printed.startswith("(0,")

    def test_invalid_alpha_exit_code(self):
        assert main(["interval", "--bf", "1", "--sigma", "1", "--alpha", "2"]) == 2


class TestIngestCheckCommand:
    def test_ok(self, tmp_path, capsys):
        path = write(tmp_path / "bg.csv", BG_TEXT)
        assert main(["ingest-check", str(path)]) == 0
        assert "3 sources" in capsys.readouterr().out

    def test_failure_exit_code(self, tmp_path, capsys):
        path = write(tmp_path / "bad.csv", "source_id,item_id,f1\nw1,1,oops\n")
        assert main(["ingest-check", str(path)]) == 2
        assert "non-numeric" in capsys.readouterr().err


class TestExperimentCommand:
    def test_consistency_writes_outputs(self, tmp_path, capsys):
        config = {
            "framework": "common-source",
            "truth": {"mu": [0.0], "sigma_b": [[1.0]], "sigma_w": [[1.0]]},
            "generating_model": "M1",
            "n_b": 1, "n_c": 1, "n_w": 5,
            "freeze_seed": 5,
            "schedule": [20, 40],
            "replicates": 20,
            "estimator": "posterior_mean_m2",
            "prior": {
                "m0": [0.0], "V0": [[4.0]],
                "nu_b": 5, "S_b": [[3.0]], "nu_w": 5, "S_w": [[3.0]],
            },
            "chain": {"iterations": 1400, "burn_in": 400, "seed": 1},
            "workers": 2,
        }
        cfg = write(tmp_path / "exp.json", json.dumps(config))
        out = tmp_path / "consistency"
        assert main(["experiment", "--kind", "consistency", "--config", str(cfg),
                     "--out", str(out)]) == 0
        rows = (tmp_path / "consistency.csv").read_text().splitlines()
        assert len(rows) == 1 + 2 * 20  # header + replicates
        summary = json.loads((tmp_path / "consistency.json").read_text())
        assert summary["complete"] is True
        assert [e["n"] for e in summary["summary"]] == [20, 40]
        table = capsys.readouterr().out
        assert "abs_rel_error_median" in table

    def test_unknown_kind_rejected(self, tmp_path):
        cfg = write(tmp_path / "exp.json", "{}")
        with pytest.raises(SystemExit):
            main(["experiment", "--kind", "bogus", "--config", str(cfg), "--out", "x"])


class TestWorkerCap:
    def test_env_cap_applies(self, monkeypatch):
        monkeypatch.setenv("FORENSIC_BF_THREADS", "1")
        assert _resolve_workers(8) == 1
        monkeypatch.setenv("FORENSIC_BF_THREADS", "4")
        assert _resolve_workers(2) == 2
        assert _resolve_workers(None) == 4
        monkeypatch.delenv("FORENSIC_BF_THREADS")
        assert _resolve_workers(None) == 1
