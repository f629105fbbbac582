import csv
import json
from pathlib import Path

import pytest
import yaml

from doatrack import config as cfgmod
from doatrack.cli import main

GOLDEN = Path(__file__).parent / "data" / "golden_kf_concat.json"

SMALL = {
    "scenario": {"duration": 2.0},
    "n_scenes": 2,
    "seed": 40,
    "trackers": [{"kind": "kf", "mode": "concat"}, {"kind": "pf", "mode": "miso-ar"}],
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root / "run.yaml", SMALL)
    assert main(["simulate", "--config", cfg, "--out", str(root / "data")]) == 0
    return root, cfg


def test_simulate_outputs(dataset):
    root, _ = dataset
    data = root / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert [s["seed"] for s in manifest["scenes"]] == [40, 41]
    assert all(s["initial_separation_deg"] >= 15 for s in manifest["scenes"])
    assert sorted(p.name for p in data.glob("scene_*")) == ["scene_00000040", "scene_00000041"]
    resolved = cfgmod.load(data / "config.yaml")
    assert resolved.scenario.duration == 2.0 and resolved.n_scenes == 2


def test_simulate_single_scene_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / name), "--seed", "7",
                     "--config", write_cfg(tmp_path / "c.yaml", {"n_scenes": 1, "scenario": {"duration": 1.0}})]) == 0
    assert len(list((tmp_path / "a").glob("scene_*"))) == 1
    ta = (tmp_path / "a" / "scene_00000007" / "trajectories.csv").read_bytes()
    tb = (tmp_path / "b" / "scene_00000007" / "trajectories.csv").read_bytes()
    assert ta == tb


def test_track_eval_end_to_end_deterministic(dataset, tmp_path):
    root, cfg = dataset
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["track", "--config", cfg, "--data", str(root / "data"), "--out", str(out)]) == 0
        outs.append(out)
    m1 = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("metrics_*.json"))
    assert len(m1) == 2 * 2 * 2  # trackers x scenes x targets
    for rel in m1:
        assert (outs[0] / rel).read_text() == (outs[1] / rel).read_text()
    assert (outs[0] / "kf-concat" / "scene_00000040" / "track_0.csv").exists()
    assert cfgmod.load(outs[0] / "config.yaml").to_dict() == cfgmod.load(cfg).to_dict()
    table = tmp_path / "table.csv"
    assert main(["eval", str(outs[0]), str(outs[1]), "--out", str(table)]) == 0
    rows = list(csv.DictReader(table.open()))
    assert [(r["tracker"], r["mode"]) for r in rows] == [("kf", "concat"), ("pf", "miso-ar")]
    assert main(["eval", str(outs[0])]) == 0


def test_golden_kf_concat(dataset, tmp_path):
    root, _ = dataset
    cfg = write_cfg(tmp_path / "kf.yaml", {**SMALL, "trackers": [{"kind": "kf", "mode": "concat"}]})
    assert main(["track", "--config", cfg, "--data", str(root / "data"), "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "results.csv").open()))
    got = {f"{r['seed']}-{r['target']}": float(r["mae_deg"]) for r in rows}
    golden = json.loads(GOLDEN.read_text())
    assert got.keys() == golden.keys()
    for k in golden:
        assert got[k] == pytest.approx(golden[k], abs=1e-9)


def test_eval_refuses_mixed_datasets(dataset, tmp_path):
    root, cfg = dataset
    other = tmp_path / "other"
    one = write_cfg(tmp_path / "one.yaml", {**SMALL, "n_scenes": 1, "trackers": [{"kind": "kf", "mode": "concat"}]})
    assert main(["simulate", "--config", one, "--out", str(other)]) == 0
    assert main(["track", "--config", one, "--data", str(other), "--out", str(tmp_path / "t1")]) == 0
    assert main(["track", "--config", one, "--data", str(root / "data"), "--out", str(tmp_path / "t2")]) == 0
    assert main(["eval", str(tmp_path / "t1"), str(tmp_path / "t2")]) == 2


def test_sweep_outputs(dataset, tmp_path):
    root, _ = dataset
    cfg = write_cfg(tmp_path / "sw.yaml", {"sweep": {"base": {"kind": "kf", "mode": "concat"},
                                                      "grid": {"sigma_phi_deg": [5.0, 20.0]}}})
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--data", str(root / "data"), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 2
    assert float(rows[0]["mae_deg"]) <= float(rows[1]["mae_deg"])
    long = list(csv.DictReader((out / "sweep_long.csv").open()))
    assert {r["metric"] for r in long} == {"mae_deg", "acc_pct"}
    best = yaml.safe_load((out / "best_config.yaml").read_text())
    assert best["trackers"][0]["sigma_phi_deg"] == float(rows[0]["sigma_phi_deg"])
    assert cfgmod.from_dict(best).trackers[0].kind == "kf"


def test_dry_run_does_no_work(dataset, tmp_path, capsys):
    root, cfg = dataset
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x"), "--dry-run"]) == 0
    assert main(["track", "--config", cfg, "--data", str(root / "data"), "--out", str(tmp_path / "y"),
                 "--dry-run"]) == 0
    assert not (tmp_path / "x").exists() and not (tmp_path / "y").exists()
    assert "config ok" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, dataset):
    root, _ = dataset
    bad = write_cfg(tmp_path / "bad.yaml", {"trackers": [{"kind": "ukf", "mode": "concat"}]})
    assert main(["track", "--config", bad, "--data", str(root / "data"), "--out", str(tmp_path / "o")]) == 2
    typo = write_cfg(tmp_path / "typo.yaml", {"n_scene": 3})
    assert main(["simulate", "--config", typo, "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["track", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--out", str(tmp_path / "o"), "--workers", "0"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_runtime_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"n_scenes": 1, "scenario": {"duration": 1.0, "corpus_dir": str(tmp_path)}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_defaults_reference_roundtrips(tmp_path):
    out = tmp_path / "ref.yaml"
    assert main(["defaults", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("# doatrack run configuration reference")
    cfg = cfgmod.from_dict(yaml.safe_load(text))
    assert cfg.to_dict() == cfgmod.RunConfig().to_dict()


def test_metric_gate_config():
    assert cfgmod.from_dict({"metric_gate_db": 30}).metric_gate_db == 30.0
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.from_dict({"metric_gate_db": -1})
