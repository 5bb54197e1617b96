import json

import numpy as np
import pytest

from mmdica import cli
from mmdica.cli import (ConfigError, DataFormatError, ExperimentConfig, RunResult,
                        load_config, load_results, load_timeseries_csv, parse_config_text,
                        run_experiment, save_results, save_timeseries_csv, validate_config)

OICA_CFG = """
task = oica
seed = 0
replications = 2
dims.p = 2
dims.d = 4
data.n = 600
model.source = mog
train.batch = 64
train.iters = 20
train.lr = 5e-3
"""

SUB_CFG = """
task = subsampled
seed = 1
replications = 1
dims.n = 2
data.t = 120
data.k = 2
train.batch = 32
train.iters = 15
"""


def test_parse_config_text_types_and_comments():
    cfg = parse_config_text("a.b = 3\nflag = true\nname = laplace  # trailing\n"
                            "# full comment\nlist = 0.25, 0.5, 1\nx = 1e-3\n")
    assert cfg["a.b"] == 3 and cfg["flag"] is True and cfg["name"] == "laplace"
    assert cfg["list"] == (0.25, 0.5, 1)
    assert cfg["x"] == pytest.approx(1e-3)


def test_parse_config_rejects_bad_lines():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("a = 1\nbogus line\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a = 1\na = 2\n")


def test_validate_config_reports_missing_field():
    cfg = parse_config_text(OICA_CFG)
    del cfg["dims.d"]
    with pytest.raises(ConfigError, match="dims.d"):
        validate_config(cfg, "oica")


def test_validate_config_rejects_task_mismatch_and_ranges():
    cfg = parse_config_text(OICA_CFG)
    with pytest.raises(ConfigError, match="task"):
        validate_config(cfg, "subsampled")
    bad = dict(cfg)
    bad["replications"] = 0
    with pytest.raises(ConfigError, match="replications"):
        validate_config(bad, "oica")
    bad = dict(cfg)
    bad["dims.d"] = 1  # d < p
    with pytest.raises(ConfigError, match="dims.d"):
        validate_config(bad, "oica")


def test_validate_subsampled_needs_t_above_batch():
    cfg = parse_config_text(SUB_CFG)
    cfg["data.t"] = 20  # < batch+1
    with pytest.raises(ConfigError, match="data.t"):
        validate_config(cfg, "subsampled")


def test_csv_round_trip(tmp_path):
    path = tmp_path / "series.csv"
    m = np.array([[1.0, 2.5, -3.125], [0.1, 0.2, 0.3]])
    save_timeseries_csv(path, m, names=["alpha", "beta"])
    data, names = load_timeseries_csv(path)
    np.testing.assert_array_equal(data, m)
    assert names == ["alpha", "beta"]


def test_csv_small_file(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1,2\n3,4\n5,6\n")
    data, names = load_timeseries_csv(path)
    assert data.shape == (2, 3)
    np.testing.assert_array_equal(data, [[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]])


def test_csv_ragged_row_cites_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataFormatError, match="line 3"):
        load_timeseries_csv(path)


def test_csv_non_numeric_cites_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(DataFormatError, match="line 3"):
        load_timeseries_csv(path)


def test_csv_crlf_matches_lf(tmp_path):
    lf = tmp_path / "lf.csv"
    crlf = tmp_path / "crlf.csv"
    lf.write_bytes(b"a,b\n1,2\n3,4\n")
    crlf.write_bytes(b"a,b\r\n1,2\r\n3,4\r\n")
    da, na = load_timeseries_csv(lf)
    db, nb = load_timeseries_csv(crlf)
    np.testing.assert_array_equal(da, db)
    assert na == nb


def test_csv_empty_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataFormatError, match="empty"):
        load_timeseries_csv(path)


def test_run_experiment_deterministic_and_round_trips(tmp_path):
    ec = validate_config(parse_config_text(OICA_CFG), "oica")
    r1 = run_experiment(ec)
    r2 = run_experiment(ec)
    d1, d2 = r1.to_dict(), r2.to_dict()
    d1.pop("timing"), d2.pop("timing")
    assert d1 == d2

    path = tmp_path / "out.json"
    save_results(r1, path)
    loaded = load_results(path)
    got, want = loaded.to_dict(), r1.to_dict()
    assert got == want  # bit-exact float round trip via shortest repr
    assert len(r1.replications) == 2
    assert r1.replications[0].seed == 0 and r1.replications[1].seed == 1
    assert r1.median_mse is not None and r1.median_mse >= 0


def test_run_experiment_threads_match_serial():
    ec = validate_config(parse_config_text(OICA_CFG), "oica")
    serial = run_experiment(ec, threads=1).to_dict()
    parallel = run_experiment(ec, threads=2).to_dict()
    serial.pop("timing"), parallel.pop("timing")
    assert serial == parallel


def test_nan_serialized_as_null_with_flag(tmp_path):
    rep = cli.ReplicationResult(seed=0, mse=None, final_loss=None, diverged=True,
                                wall_time_s=0.1, notes={"diverged_at": 3})
    rr = RunResult(config={"task": "oica"}, replications=[rep],
                   mean_mse=None, median_mse=None, diverged_count=1)
    path = tmp_path / "d.json"
    save_results(rr, path)
    text = path.read_text()
    assert "NaN" not in text and "nan" not in text
    doc = json.loads(text)
    assert doc["replications"][0]["mse"] is None
    assert doc["replications"][0]["diverged"] is True


def test_main_exit_codes(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    out_path = tmp_path / "r.json"
    cfg_path.write_text(OICA_CFG)
    assert cli.main(["oica", "--config", str(cfg_path), "--out", str(out_path),
                     "--replications", "1", "--seed", "5"]) == cli.EXIT_OK
    doc = json.loads(out_path.read_text())
    assert doc["config"]["seed"] == 5 and len(doc["replications"]) == 1

    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("task = oica\ndims.p = 2\n")  # missing fields
    assert cli.main(["oica", "--config", str(bad_cfg), "--out", str(out_path)]) == cli.EXIT_CONFIG
    assert cli.main(["oica", "--config", str(tmp_path / "nope.cfg"), "--out", str(out_path)]) == cli.EXIT_CONFIG


def test_main_subsampled_csv_ingestion(tmp_path):
    csv = tmp_path / "ts.csv"
    rng = np.random.default_rng(0)
    save_timeseries_csv(csv, rng.standard_normal((2, 80)))
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"task = subsampled\ndims.n = 2\ndata.k = 2\ndata.csv = {csv}\n"
                   "train.batch = 16\ntrain.iters = 5\nreplications = 1\n")
    out = tmp_path / "r.json"
    assert cli.main(["subsampled", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["replications"][0]["mse"] is None  # no ground truth with real data
    assert "C" in doc["replications"][0]["estimates"]


def test_main_data_error_exit_code(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("a,b\n1,2\n3\n")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"task = subsampled\ndims.n = 2\ndata.k = 2\ndata.csv = {csv}\n"
                   "train.batch = 16\ntrain.iters = 5\n")
    assert cli.main(["subsampled", "--config", str(cfg), "--out",
                     str(tmp_path / "r.json")]) == cli.EXIT_DATA


def test_datagen_round_trip(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("task = datagen\ndatagen.kind = subsampled\ndims.n = 2\n"
                   "data.t = 40\ndata.k = 3\nseed = 4\n")
    out = tmp_path / "data.csv"
    assert cli.main(["datagen", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    data, names = load_timeseries_csv(out)
    assert data.shape == (2, 40)
    truth = json.loads((tmp_path / "data.csv.truth.json").read_text())
    assert truth["kind"] == "subsampled" and truth["C"]["rows"] == 2
    # regenerating from the same seed reproduces the matrix exactly
    from mmdica import synthdata as sd
    ds = sd.gen_var_dataset(2, 40, 3, "subsample", seed=4)
    np.testing.assert_array_equal(data, ds.data)


def test_experiment_config_missing_key_raises():
    ec = ExperimentConfig(task="oica", raw={"task": "oica"})
    with pytest.raises(ConfigError, match="dims.p"):
        ec["dims.p"]
    assert ec["train.batch"] == 256  # default fills in
