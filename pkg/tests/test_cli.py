import csv
import json

import numpy as np
import pytest

from _instances import FIXTURE_X
from apportion import Dictionary, build_design
from apportion.cli import main
from apportion.io import write_dictionary, write_labels
from apportion.simulation import CSV_COLUMNS


@pytest.fixture
def files(tmp_path):
    d = Dictionary(FIXTURE_X, ("f1", "f2", "f3", "f4"), ("x1", "x2", "x3"))
    write_dictionary(tmp_path / "dict.csv", d)
    write_labels(tmp_path / "labels.csv", build_design(["s1", "s1", "s2"], ["s1", "s2"]),
                 d.profile_ids)
    (tmp_path / "e1.csv").write_text("feature_id,intensity\nf1,1\nf2,0\nf3,0\nf4,0\n")
    return tmp_path


def run(files, *args):
    base = ["--dict", str(files / "dict.csv"), "--labels", str(files / "labels.csv")]
    cmd, rest = args[0], list(args[1:])
    return main([cmd, *base, *rest])


def test_estimate_rts_fixture(files):
    out = files / "r.json"
    code = run(files, "estimate", "--sample", str(files / "e1.csv"), "--method", "rts",
               "--se", "--out", str(out))
    assert code == 0
    rep = json.loads(out.read_text())
    np.testing.assert_allclose(rep["theta"], [1, 0], atol=1e-12)
    assert rep["categories"] == ["s1", "s2"]
    assert set(rep["provenance"]["inputs"]) == {"dictionary", "labels", "sample"}
    assert "timestamp" in rep["provenance"]


def test_estimate_atr_fixture(files, capsys):
    assert run(files, "estimate", "--sample", str(files / "e1.csv"), "--method", "atr") == 0
    np.testing.assert_allclose(json.loads(capsys.readouterr().out)["theta"], [1, -0.5], atol=1e-12)


def test_threshold_fixture(files, capsys):
    assert run(files, "threshold", "--no-timestamp") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["gamma_threshold"] == pytest.approx(1.0, abs=1e-10)
    assert rep["gamma_threshold_infinite"] is False


@pytest.mark.parametrize("extra", [
    ["--method", "gls"],
    ["--method", "rts", "--gamma", "1"],
    ["--method", "atr", "--se"],
    ["--method", "rts", "--bogus"],
    ["--method", "lasso"],
])
def test_flag_contract_exit_2(files, extra, capsys):
    assert run(files, "estimate", "--sample", str(files / "e1.csv"), *extra) == 2
    assert "usage" in capsys.readouterr().err


def test_invalid_file_exit_2(files, capsys):
    (files / "bad.csv").write_text("feature_id,intensity\nf1,NaN\nf2,0\nf3,0\nf4,0\n")
    assert run(files, "estimate", "--sample", str(files / "bad.csv"), "--method", "rts") == 2
    assert "NaN" in capsys.readouterr().err


def test_rank_deficient_dictionary_exit_3(tmp_path):
    (tmp_path / "d.csv").write_text("feature_id,a,b\nf1,1,2\nf2,2,4\nf3,3,6\n")
    (tmp_path / "l.csv").write_text("profile_id,source\na,s\nb,t\n")
    assert main(["threshold", "--dict", str(tmp_path / "d.csv"),
                 "--labels", str(tmp_path / "l.csv")]) == 3


def test_output_is_byte_identical_without_timestamp(files):
    outs = []
    for i in range(2):
        out = files / f"r{i}.json"
        run(files, "estimate", "--sample", str(files / "e1.csv"), "--method", "gls",
            "--gamma", "0.5", "--no-timestamp", "--out", str(out))
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert b"timestamp" not in outs[0]


def test_predict_writes_completed_profile(tmp_path):
    x = np.vstack([FIXTURE_X, [1, 2, 3]])
    d = Dictionary(x, ("240:300", "240:310", "250:300", "250:310", "260:300"), ("x1", "x2", "x3"))
    write_dictionary(tmp_path / "d.csv", d)
    write_labels(tmp_path / "l.csv", build_design(["s1", "s1", "s2"], ["s1", "s2"]), d.profile_ids)
    y = x @ np.array([0.5, 1.0, 0.25])
    (tmp_path / "s.csv").write_text(
        "feature_id,intensity\n" + "".join(f"{f},{float(v)!r}\n" for f, v in zip(d.feature_ids, y)))
    (tmp_path / "mask.txt").write_text("240:310\n")
    code = main(["predict", "--dict", str(tmp_path / "d.csv"), "--labels", str(tmp_path / "l.csv"),
                 "--sample", str(tmp_path / "s.csv"), "--method", "rts",
                 "--mask-features", str(tmp_path / "mask.txt"), "--out", str(tmp_path / "r.json")])
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["predicted_features"] == ["240:310"]
    with open(tmp_path / "r_completed.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["feature_id", "intensity"]
    np.testing.assert_allclose([float(r[1]) for r in rows[1:]], y, atol=1e-12)


def test_predict_mask_excitation_and_exclusive_flags(tmp_path):
    x = np.vstack([FIXTURE_X, [1, 2, 3]])
    d = Dictionary(x, ("240:300", "240:310", "250:300", "250:310", "260:300"), ("x1", "x2", "x3"))
    write_dictionary(tmp_path / "d.csv", d)
    write_labels(tmp_path / "l.csv", build_design(["s1", "s1", "s2"], ["s1", "s2"]), d.profile_ids)
    (tmp_path / "s.csv").write_text("feature_id,intensity\n240:300,1\n240:310,1\n250:300,0\n"
                                    "250:310,0\n260:300,2\n")
    base = ["predict", "--dict", str(tmp_path / "d.csv"), "--labels", str(tmp_path / "l.csv"),
            "--sample", str(tmp_path / "s.csv"), "--method", "atr",
            "--completed", str(tmp_path / "c.csv")]
    assert main(base + ["--mask-excitation", "260"]) == 0
    assert main(base + ["--mask-excitation", "260", "--mask-features", "x"]) == 2
    assert main(base) == 2  # fully observed sample and no mask: nothing to predict


def test_simulate_writes_report(tmp_path):
    (tmp_path / "study.cfg").write_text(
        "mode = estimation\np = 40\nK = 2\nn_per_category = 5\nalphas = 1.0\n"
        "theta_count = 2\nreplicates = 10\nseed = 3\n")
    outs = []
    for workers in ("1", "2"):
        out = tmp_path / f"out{workers}"
        assert main(["simulate", "--config", str(tmp_path / "study.cfg"), "--out", str(out),
                     "--workers", workers, "--no-timestamp"]) == 0
        outs.append(out)
    with open(outs[0] / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 2 * 4
    for name in ("report.csv", "thetas.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert summary["provenance"]["seed"] == 3 and "rng" in summary["provenance"]


def test_simulate_bad_config_exit_2(tmp_path):
    (tmp_path / "study.cfg").write_text("mode = estimation\nbogus = 1\n")
    assert main(["simulate", "--config", str(tmp_path / "study.cfg"),
                 "--out", str(tmp_path / "o")]) == 2
