from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from drowsyrank.cli import main
from drowsyrank.data import parse_manifest, write_trip_csv
from drowsyrank.evaluation import read_report
from drowsyrank.ranker import LinearModel

FAST = ["--iterations", "2000", "--lambda", "0,0.001"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory, small_data_dir):
    out = tmp_path_factory.mktemp("train") / "model.txt"
    assert main(["train", "--manifest", str(small_data_dir / "manifest.csv"), "--out", str(out),
                 "--loss-report-every", "500", *FAST]) == 0
    return out


def test_synth(tmp_path, capsys):
    assert main(["synth", "--drowsy", "2", "--normal", "3", "--min-len", "50", "--max-len", "60",
                 "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "trips").glob("*.csv"))) == 5
    assert (tmp_path / "manifest.csv").is_file() and (tmp_path / "synth-config.txt").is_file()
    assert "2 drowsy, 3 normal" in capsys.readouterr().out


def test_synth_missing_out(capsys):
    assert main(["synth", "--drowsy", "1"]) == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("flags", [["--drowsy", "-1"], ["--truth-threshold", "1.5"], ["--min-len", "0"]])
def test_synth_bad_values(tmp_path, flags):
    assert main(["synth", "--out", str(tmp_path), *flags]) == 2


def test_synth_inconsistent_lengths(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--min-len", "100", "--max-len", "50"]) in (1, 2)


def test_train_outputs(trained):
    model = LinearModel.load(trained)
    assert model.dim == 24 and model.lam in (0.0, 0.001)
    log = trained.with_name("model.txt.log.csv").read_text().splitlines()
    assert log[0] == "step,subsampled_loss"
    steps = [int(line.split(",")[0]) for line in log[1:]]
    losses = [float(line.split(",")[1]) for line in log[1:]]
    assert steps == [0, 500, 1000, 1500, 2000]
    assert losses[0] == 1.0 and losses[-1] < losses[0]
    assert trained.with_name("model.txt.pipeline.json").is_file()


def test_train_deterministic(trained, small_data_dir, tmp_path):
    again = tmp_path / "model.txt"
    assert main(["train", "--manifest", str(small_data_dir / "manifest.csv"), "--out", str(again),
                 "--loss-report-every", "500", *FAST]) == 0
    for suffix in ("", ".log.csv", ".pipeline.json"):
        assert trained.with_name("model.txt" + suffix).read_bytes() == again.with_name("model.txt" + suffix).read_bytes()


def test_train_without_drowsy_trips(tmp_path, small_data_dir, capsys):
    lines = (small_data_dir / "manifest.csv").read_text().splitlines()
    manifest = small_data_dir / "normals_only.csv"
    manifest.write_text("\n".join(line for line in lines if line.endswith("normal")) + "\n")
    assert main(["train", "--manifest", str(manifest), "--out", str(tmp_path / "m.txt"), *FAST]) == 1
    assert "drowsy" in capsys.readouterr().err


def test_train_missing_trip_file(tmp_path, capsys):
    (tmp_path / "manifest.csv").write_text("trips/nothing.csv,drowsy\n")
    assert main(["train", "--manifest", str(tmp_path / "manifest.csv"), "--out", str(tmp_path / "m.txt")]) == 1
    assert "not found" in capsys.readouterr().err


def test_train_bad_flags(tmp_path):
    base = ["train", "--manifest", "m.csv", "--out", str(tmp_path / "m.txt")]
    assert main(base + ["--iterations", "0"]) == 2
    assert main(base + ["--optimizer", "rmsprop"]) == 2
    assert main(base + ["--lambda", "-1"]) == 2
    assert main(base + ["--beta1", "1.0"]) == 2


def test_report_top(trained, capsys):
    assert main(["report", str(trained), "--top", "6"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 6
    weights = [abs(float(r.split()[-1])) for r in rows]
    assert weights == sorted(weights, reverse=True)


def test_report_csv(trained, tmp_path):
    assert main(["report", str(trained), "--out", str(tmp_path / "w.csv")]) == 0
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "rank,feature,weight" and len(lines) == 25


def test_score(trained, small_data_dir, tmp_path):
    out = tmp_path / "scores.csv"
    assert main(["score", "--manifest", str(small_data_dir / "manifest.csv"), "--model", str(trained),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    ds = parse_manifest(small_data_dir / "manifest.csv")
    assert lines[0] == "trip_id,t,score"
    assert len(lines) == 1 + sum(len(t) - 1 for t in ds)
    assert lines[1].split(",")[1] == "1.0"


def test_eval(trained, small_data_dir, tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["eval", "--manifest", str(small_data_dir / "manifest.csv"), "--model", str(trained),
                 "--out", str(out), "--auc2"]) == 0
    metrics = dict(line.split(",") for line in (out / "eval.csv").read_text().splitlines()[1:])
    assert 0.0 <= float(metrics["auc1"]) <= 1.0 and 0.0 <= float(metrics["auc2"]) <= 1.0
    assert (out / "roc_trip.csv").is_file() and (out / "roc_sample.csv").is_file()
    assert "AUC2" in capsys.readouterr().out


def test_eval_auc2_without_truth(trained, small_data_dir, tmp_path, capsys):
    ds = parse_manifest(small_data_dir / "manifest.csv")
    lines = []
    for trip in ds:
        trip.truth = None
        write_trip_csv(trip, tmp_path / "trips" / f"{trip.id}.csv")
        lines.append(f"trips/{trip.id}.csv,{trip.label.value}")
    (tmp_path / "manifest.csv").write_text("\n".join(lines) + "\n")
    args = ["eval", "--manifest", str(tmp_path / "manifest.csv"), "--model", str(trained),
            "--pipeline", str(trained.with_name("model.txt.pipeline.json")), "--out", str(tmp_path / "e")]
    assert main(args) == 0
    assert main(args + ["--auc2"]) == 1
    assert "truth" in capsys.readouterr().err


def _cv(data_dir, out):
    return main(["cv", "--manifest", str(data_dir / "manifest.csv"), "--out", str(out), "--k", "2",
                 "--methods", "proposed,logistic,anomaly", "--l1", "0.001", *FAST])


def test_cv_sections_and_determinism(small_data_dir, tmp_path):
    assert _cv(small_data_dir, tmp_path / "a") == 0
    assert _cv(small_data_dir, tmp_path / "b") == 0
    sections = read_report(tmp_path / "a" / "report.csv")
    assert list(sections) == ["proposed", "logistic", "anomaly"]
    assert all(len(rows) == 3 and rows[-1][0] == "mean" for rows in sections.values())
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "roc_proposed_sample.csv").is_file()


def test_cv_bad_flags(small_data_dir, tmp_path):
    base = ["cv", "--manifest", str(small_data_dir / "manifest.csv"), "--out", str(tmp_path)]
    assert main(base + ["--methods", "proposed,svm"]) == 2
    assert main(base + ["--k", "0"]) == 2
    assert main(base + ["--k", "9"]) == 1  # only 4 drowsy trips


def test_features(small_data_dir, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["features", "--manifest", str(small_data_dir / "manifest.csv"), "--out", str(out),
                 "--no-anomaly"]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert len(header) == 2 + 18 and "anomaly:speed" not in header


def test_config_file(small_data_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# fast run\nmanifest={small_data_dir / 'manifest.csv'}\niterations=500\nlambda=0.01\n"
                   "no-anomaly=true\n")
    out = tmp_path / "m.txt"
    assert main(["--config", str(cfg), "train", "--out", str(out)]) == 0
    model = LinearModel.load(out)
    assert model.lam == 0.01 and model.dim == 18
    # flags override file values
    assert main(["--config", str(cfg), "train", "--out", str(out), "--lambda", "0.0"]) == 0
    assert LinearModel.load(out).lam == 0.0
    cfg.write_text("bogus=1\n")
    assert main(["--config", str(cfg), "train", "--out", str(out)]) == 2
    assert main(["--config", str(tmp_path / "missing.cfg"), "train", "--out", str(out)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "drowsyrank", "report", str(tmp_path / "none.txt")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "drowsyrank", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout


def test_score_matches_library(trained, small_data_dir, tmp_path):
    from drowsyrank.features import FeaturePipeline
    out = tmp_path / "s.csv"
    main(["score", "--manifest", str(small_data_dir / "manifest.csv"), "--model", str(trained), "--out", str(out)])
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    pipe = FeaturePipeline.load(trained.with_name("model.txt.pipeline.json"))
    trip = parse_manifest(small_data_dir / "manifest.csv").trips[0]
    expected = pipe.transform(trip).X @ LinearModel.load(trained).theta
    got = np.array([float(r[2]) for r in rows if r[0] == trip.id])
    assert np.array_equal(got, expected)
