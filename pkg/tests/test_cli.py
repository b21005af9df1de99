import json

import pytest

from triptime.cli import main
from conftest import sinusoid_spec

CONFIG = """
bbox = [40.68, 40.84, -74.05, -73.90]
cell_size = 50
tau = 3
methods = ["lr", "avg", "temp_rel"]
train_start = "1970-01-05T00:00:00"
train_end   = "1970-01-26T00:00:00"
test_start  = "1970-01-26T00:00:00"
test_end    = "1970-02-02T00:00:00"
seed = 1
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = sinusoid_spec(20_000, weeks=4.0, seed=3, outlier_fraction=0.02,
                         distinct_endpoints=True)
    (root / "spec.json").write_text(spec.to_json())
    (root / "cfg.toml").write_text(CONFIG)
    assert main(["synth", "--spec", str(root / "spec.json"),
                 "--out", str(root / "trips.csv")]) == 0
    return root


class TestPipeline:
    def test_synth_wrote_csv_and_truth(self, workdir):
        lines = (workdir / "trips.csv").read_text().splitlines()
        assert len(lines) == 20_001
        truth = json.loads((workdir / "trips.csv.truth.json").read_text())
        assert truth["n_outliers"] == 400

    def test_stats(self, workdir, capsys):
        rc = main(["stats", "--input", str(workdir / "trips.csv"),
                   "--config", str(workdir / "cfg.toml")])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["count"] == 20_000

    def test_filter_then_index_then_estimate(self, workdir, capsys):
        rc = main(["filter", "--config", str(workdir / "cfg.toml"),
                   "--input", str(workdir / "trips.csv"),
                   "--out", str(workdir / "clean.csv"),
                   "--audit", str(workdir / "audit.json")])
        assert rc == 0
        audit = json.loads((workdir / "audit.json").read_text())
        assert len(audit) == 5 and all(st["converged"] for st in audit)

        rc = main(["build-index", "--config", str(workdir / "cfg.toml"),
                   "--input", str(workdir / "clean.csv"),
                   "--out", str(workdir / "index.npz")])
        assert rc == 0

        capsys.readouterr()
        rc = main(["estimate", "--config", str(workdir / "cfg.toml"),
                   "--index", str(workdir / "index.npz"), "--method", "temp_rel",
                   "--query", "40.73,-74.00,40.76,-73.97,1970-01-28T18:00:00"])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("method=temp_rel estimate_seconds=")
        assert "neighbors=" in out

    def test_estimate_batch_csv(self, workdir, capsys):
        rc = main(["estimate", "--config", str(workdir / "cfg.toml"),
                   "--train", str(workdir / "trips.csv"), "--method", "avg",
                   "--queries", str(workdir / "trips.csv"),
                   "--out", str(workdir / "batch.csv")])
        assert rc == 0
        header = (workdir / "batch.csv").read_text().splitlines()[0]
        assert header == "query_id,method,estimate_seconds,neighbor_count,status"

    def test_evaluate_with_reference_table(self, workdir, capsys):
        rc = main(["evaluate", "--config", str(workdir / "cfg.toml"),
                   "--input", str(workdir / "trips.csv"), "--paper-reference"])
        assert rc == 0
        out = capsys.readouterr().out
        head = json.loads(out[:out.index("published reference results")])
        assert set(head) == {"lr", "avg", "temp_rel"}
        assert "142.334" in out  # published best-method MAE printed alongside

    def test_fit_ref_csv(self, workdir, capsys):
        rc = main(["fit-ref", "--config", str(workdir / "cfg.toml"),
                   "--input", str(workdir / "trips.csv"), "--mode", "rel",
                   "--out", str(workdir / "ref.csv")])
        assert rc == 0
        assert (workdir / "ref.csv").read_text().startswith("slot,value,count,interpolated")

    def test_snapshot_matches_in_memory(self, workdir, capsys):
        q = "40.73,-74.00,40.76,-73.97,1970-01-28T18:00:00"
        capsys.readouterr()
        assert main(["estimate", "--config", str(workdir / "cfg.toml"),
                     "--index", str(workdir / "index.npz"), "--method", "avg",
                     "--query", q]) == 0
        from_snapshot = capsys.readouterr().out
        assert main(["estimate", "--config", str(workdir / "cfg.toml"),
                     "--train", str(workdir / "clean.csv"), "--method", "avg",
                     "--query", q]) == 0
        in_memory = capsys.readouterr().out
        assert from_snapshot == in_memory


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self):
        assert main(["estimate", "--nonsense"]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["stats", "--input", str(tmp_path / "absent.csv")]) == 2

    def test_malformed_query_is_usage_error(self, workdir):
        assert main(["estimate", "--config", str(workdir / "cfg.toml"),
                     "--index", str(workdir / "index.npz"), "--query", "1,2,3"]) == 1

    def test_bad_config_is_data_error(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("tau = -3\n")
        assert main(["stats", "--input", "x.csv", "--config", str(cfg)]) == 2

    def test_estimate_needs_exactly_one_source(self, workdir):
        assert main(["estimate", "--config", str(workdir / "cfg.toml"),
                     "--query", "1,2,3,4,1970-01-01T00:00:00"]) == 1
