import csv
import json

import pytest

from diffmonitor import cli, config

TINY = ["--set", "participants=3", "--set", "windows_per_class=8", "--set", "channels=2",
        "--set", "diffusion_steps=6", "--set", "hidden=[8]", "--set", "time_embedding_dim=4",
        "--set", "repeats=1", "--set", "max_epochs=4", "--set", "monitor_interval=2",
        "--set", "probe_batch=4", "--set", "denoise_interval=2", "--set", "calib_points=8",
        "--set", "synthetic_per_model=6", "--set", "classifier_seeds=2",
        "--set", "classifier_epochs=20"]


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("synth-data", "--out", out, *TINY) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--out", out, *TINY, "--set", f"data_dir={corpus}",
               "--participant", 1, "--class", "Walking") == 0
    return out


def test_synth_data_files_and_determinism(corpus, tmp_path):
    assert sorted(p.name for p in corpus.glob("participant_*.csv")) == [
        "participant_1.csv", "participant_2.csv", "participant_3.csv"]
    assert run("synth-data", "--out", tmp_path, *TINY) == 0
    for f in corpus.glob("participant_*.csv"):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_resolved_config_round_trips(corpus):
    cfg = config.load(corpus / "config.json")
    assert cfg.participants == 3 and cfg.hidden == (8,)
    assert config.from_dict(json.loads(cfg.to_json())) == cfg


def test_bad_key_value(tmp_path, capsys):
    assert run("synth-data", "--out", tmp_path, "--set", "fundamentals_hz=[40.0,1.2]") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "fundamentals_hz" in err[0]


def test_unknown_key(tmp_path, capsys):
    assert run("synth-data", "--out", tmp_path, "--set", "nope=1") == 2
    assert "unknown config key 'nope'" in capsys.readouterr().err


def test_config_file_and_env(tmp_path, monkeypatch, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"participants": 2, "windows_per_class": 8}))
    monkeypatch.setenv(config.CONFIG_ENV, str(path))
    assert run("synth-data", "--out", tmp_path / "o") == 0
    assert len(list((tmp_path / "o").glob("participant_*.csv"))) == 2
    monkeypatch.setenv(config.CONFIG_ENV, str(tmp_path / "missing.json"))
    assert run("synth-data", "--out", tmp_path / "o2") == 2
    assert "config file not found" in capsys.readouterr().err


def test_calibrate_outputs(corpus, tmp_path):
    args = ("calibrate", "--out", tmp_path, *TINY, "--set", f"data_dir={corpus}",
            "--participant", 2)
    assert run(*args) == 0
    rows = list(csv.DictReader(open(tmp_path / "p2_Walking_grid.csv")))
    assert len(rows) == 8 and list(rows[0]) == ["sigma", "mean", "std"]
    first = (tmp_path / "p2_Walking_calibration.json").read_text()
    assert "fallback" in json.loads(first)
    assert run(*args) == 0
    assert (tmp_path / "p2_Walking_calibration.json").read_text() == first


def test_calibrate_empty_class(corpus, tmp_path, capsys):
    assert run("calibrate", "--out", tmp_path, *TINY, "--set", f"data_dir={corpus}",
               "--set", 'class_names=["Walking","Cycling","Rowing"]',
               "--set", "fundamentals_hz=[1.8,1.2,0.9]",
               "--set", "harmonics=[[1.0],[1.0],[1.0]]", "--participant", 1) == 1
    assert "Rowing" in capsys.readouterr().err


def test_train_monitored(trained):
    summary = json.loads((trained / "train_summary.json").read_text())
    assert {r["metric"] for r in summary} == {"copt_gak", "cosine_psd", "cosine_time"}
    assert all(r["epochs_used"] <= 4 for r in summary)
    header = next(csv.reader(open(trained / "p1_Walking_cosine_psd_trace.csv")))
    assert header == ["position", "mean", "std", "in_range_fraction", "decision"]
    assert (trained / "p1_Walking_copt_gak.npz").exists()
    assert (trained / "config.json").exists()


def test_train_unmonitored_runs_to_cap(corpus, tmp_path):
    assert run("train", "--out", tmp_path, *TINY, "--set", f"data_dir={corpus}",
               "--participant", 1, "--class", "Cycling", "--no-monitor") == 0
    summary = json.loads((tmp_path / "train_summary.json").read_text())
    assert summary == [{"participant": 1, "class": "Cycling", "sigma": None,
                        "target_range": None, "epochs_trained": 4, "metric": None,
                        "epochs_used": 4}]
    assert (tmp_path / "p1_Cycling_full.npz").exists()


def test_sample_unmonitored_uses_all_steps(trained, tmp_path):
    ck = trained / "p1_Walking_cosine_psd"
    assert run("sample", "--out", tmp_path / "a", *TINY, "--checkpoint", ck, "--batch", 2,
               "--seed", 4) == 0
    info = json.loads((tmp_path / "a" / "p1_Walking_cosine_psd_sample.json").read_text())
    assert info["steps_used"] == info["T"] == 6
    assert run("sample", "--out", tmp_path / "b", *TINY, "--checkpoint", f"{ck}.npz",
               "--batch", 2, "--seed", 4) == 0
    name = "p1_Walking_cosine_psd_samples.csv"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.reader(open(tmp_path / "a" / name)))
    assert len(rows) == 1 + 2 * 2 and len(rows[0]) == 2 + 160


def test_sample_monitored_records_stop(corpus, trained, tmp_path):
    assert run("sample", "--out", tmp_path, *TINY, "--set", f"data_dir={corpus}",
               "--checkpoint", trained / "p1_Walking_copt_gak", "--monitor", "copt_gak",
               "--batch", 3) == 0
    info = json.loads((tmp_path / "p1_Walking_copt_gak_sample.json").read_text())
    assert info["monitor"] == "copt_gak"
    assert info["steps_used"] <= info["T"]
    assert (tmp_path / "p1_Walking_copt_gak_denoise_trace.csv").exists()


def test_sample_missing_checkpoint(tmp_path, capsys):
    assert run("sample", "--out", tmp_path, "--checkpoint", tmp_path / "none") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("diffmonitor: error: FileNotFoundError")


def test_experiment_single_participant(corpus, tmp_path):
    assert run("experiment", "--out", tmp_path, *TINY, "--set", f"data_dir={corpus}",
               "--participant", 3, "--quiet") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["set_names"]) == 9 and rep["failures"] == []
    assert (tmp_path / "config.json").exists() and (tmp_path / "reduction.csv").exists()


def test_published_reduction(tmp_path, capsys):
    assert run("published-reduction", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "28.70%" in out and "21.62%" in out and "saved 41148" in out
