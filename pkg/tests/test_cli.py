import json

import pytest

from volcast import cli
from volcast.marketdata import read_ohlc_csv


def run(capsys, tmp_path, command, cfg=None, seed=0, out=None):
    argv = [command, "--seed", str(seed)]
    if cfg is not None:
        p = tmp_path / f"{command}.json"
        p.write_text(json.dumps(cfg))
        argv += ["--config", str(p)]
    if out is not None:
        argv += ["--out", str(out)]
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSimulation:
    def test_gbm_csv(self, capsys, tmp_path):
        code, _, _ = run(capsys, tmp_path, "simulate-gbm", {"n_days": 5, "n_steps": 10}, out=tmp_path / "S.csv")
        assert code == 0
        s = read_ohlc_csv(tmp_path / "S.csv")
        assert len(s) == 5
        assert s.bars[1].open == s.bars[0].close

    def test_garch_fit_and_forecast(self, capsys, tmp_path):
        code, out, _ = run(capsys, tmp_path, "simulate-garch", {"n": 500})
        assert code == 0
        (tmp_path / "r.json").write_text(out)
        code, _, _ = run(capsys, tmp_path, "garch-fit", {"returns": str(tmp_path / "r.json"), "n_restarts": 1},
                         out=tmp_path / "fit.json")
        assert code == 0
        code, out, _ = run(capsys, tmp_path, "garch-forecast", {"fit": str(tmp_path / "fit.json"), "horizon": 4})
        doc = json.loads(out)
        assert code == 0 and len(doc["variance"]) == 4

    def test_estimate_tsv(self, capsys, tmp_path):
        run(capsys, tmp_path, "simulate-gbm", {"n_days": 3, "n_steps": 10}, out=tmp_path / "S.csv")
        code, out, _ = run(capsys, tmp_path, "estimate",
                           {"prices": str(tmp_path / "S.csv"), "kinds": ["parkinson", "garman_klass"]})
        lines = out.strip().split("\n")
        assert code == 0 and len(lines) == 1 + 6
        assert lines[0].split("\t")[1] == "estimator_kind"

    def test_efficiency(self, capsys, tmp_path):
        code, out, _ = run(capsys, tmp_path, "efficiency", {"n_days": 2000, "n_steps": 100})
        doc = json.loads(out)
        assert code == 0
        assert doc["efficiency"]["garman_klass"] > doc["efficiency"]["parkinson"] > 1


class TestWorkflow:
    def test_end_to_end(self, capsys, tmp_path):
        workdir = tmp_path
        code, out, _ = run(capsys, workdir, "simulate-corpus", {"n_stocks": 2, "n_days": 80},
                           out=workdir / "market")
        assert code == 0
        files = json.loads(out)["files"]

        code, out, _ = run(capsys, workdir, "align", {"headlines": files["headlines"], "holidays": files["holidays"],
                                                      "prices": files["prices"]})
        assert code == 0
        assert sum(json.loads(out)["histogram"].values()) > 0

        model = {"n": 4, "d_a": 4, "T": 3, "l_n": 4, "l_s": 8, "d_MN": 4, "d_MP": 4, "d_JR": 8}
        ds_cfg = {**files, "model": model, "split_fractions": [0.6, 0.2]}
        code, _, err = run(capsys, workdir, "build-dataset", ds_cfg, out=workdir / "ds.json")
        assert code == 0, err

        code, out, err = run(capsys, workdir, "train", {"dataset": str(workdir / "ds.json"),
                                                        "train": {"max_epochs": 2}}, out=workdir / "ckpt.json")
        assert code == 0, err
        hist = json.loads(out)["history"]
        assert [h["epoch"] for h in hist] == [0, 1, 2]

        code, out, _ = run(capsys, workdir, "predict", {"dataset": str(workdir / "ds.json"),
                                                        "checkpoint": str(workdir / "ckpt.json")})
        assert code == 0
        assert out.splitlines()[0].startswith("stock_id\tdate")

        code, out, err = run(capsys, workdir, "evaluate", {"dataset": str(workdir / "ds.json"),
                                                           "checkpoints": {"full": str(workdir / "ckpt.json")}})
        assert code == 0, err
        rows = [r.split("\t") for r in out.strip().split("\n")[1:]]
        keys = {(r[0], r[1], r[2]) for r in rows}
        assert len(keys) == len(rows)
        assert {r[0] for r in rows} == {"full", "garch"}


class TestIngest:
    def test_surface_form_matching_and_rejects(self, capsys, tmp_path):
        (tmp_path / "forms.json").write_text(json.dumps({"AAA": ["acme"], "BBB": ["bolt"]}))
        lines = [
            {"utc": "2016-09-20T13:00:00+00:00", "text": "Acme and Bolt merge"},
            {"stock": "AAA", "utc": "2016-09-20T13:00:00+00:00", "text": "acme beats"},
            {"utc": "2016-09-20T13:00:00+00:00", "text": "nobody named"},
            {"stock": "AAA", "utc": "2016-09-20T13:00:00", "text": "no offset"},
        ]
        (tmp_path / "h.jsonl").write_text("\n".join(json.dumps(x) for x in lines) + "\nnot json\n")
        code, out, err = run(capsys, tmp_path, "ingest", {"headlines": str(tmp_path / "h.jsonl"),
                                                         "surface_forms": str(tmp_path / "forms.json")})
        assert code == 0
        stocks = [json.loads(x)["stock"] for x in out.strip().split("\n")]
        assert stocks == ["AAA", "BBB", "AAA"]
        assert [r["line"] for r in json.loads(err)["rejected"]] == [3, 4, 5]


class TestErrors:
    def test_missing_config_key(self, capsys, tmp_path):
        code, _, err = run(capsys, tmp_path, "estimate", {})
        doc = json.loads(err)
        assert code == 1
        assert doc["command"] == "estimate" and "prices" in doc["message"]

    def test_bad_csv(self, capsys, tmp_path):
        (tmp_path / "bad.csv").write_text("date,open,high,low,close\n2020-01-01,1,0.5,1,1\n")
        code, _, err = run(capsys, tmp_path, "estimate", {"prices": str(tmp_path / "bad.csv")})
        assert code == 1 and json.loads(err)["error"] == "PriceError"

    def test_config_not_object(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        assert cli.main(["gradcheck", "--config", str(p)]) == 1
        assert "JSON object" in capsys.readouterr().err

    def test_train_needs_out(self, capsys, tmp_path):
        code, _, err = run(capsys, tmp_path, "train", {"dataset": "x"})
        assert code == 1 and "--out" in json.loads(err)["message"]

    def test_gradcheck_failure_exit(self, capsys, tmp_path):
        code, out, _ = run(capsys, tmp_path, "gradcheck", {"cases": ["op:add"], "tolerance": -1})
        assert code == 1 and json.loads(out)["failed"] == ["op:add"]

    def test_gradcheck_ok(self, capsys, tmp_path):
        code, out, _ = run(capsys, tmp_path, "gradcheck", {"cases": ["op:add", "block:lstm_step"]})
        assert code == 0 and json.loads(out)["failed"] == []

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            cli.main(["nope"])
