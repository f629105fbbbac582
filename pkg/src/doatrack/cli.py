"""Command line entry point: ``doatrack simulate|track|eval|sweep|defaults``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .metrics import aggregate
from .pipeline import prepare, sweep_params, track_target
from .scene import SceneError, load_bundle, sample_scene, save_bundle
from .stft import write_wav
from .trackers import TrackerConfig

log = logging.getLogger("doatrack")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RESULT_FIELDS = ["seed", "target", "label", "mae_deg", "acc_pct", "re_acc_pct", "final_re_acc_pct",
                 "n_frames", "si_sdr_db", "si_sdr_in_db"]


class RuntimeFailure(RuntimeError):
    pass


def _load_config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = args.workers
    return cfg


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# simulate


def _simulate_one(job):
    seed, cfg_dict, out = job
    cfg = cfgmod.from_dict(cfg_dict)
    bundle = sample_scene(seed, cfg.scenario, cfgmod.make_array(cfg), cfg.sfm)
    d = save_bundle(bundle, out)
    az = bundle.azimuths()
    sep = [float(np.degrees(abs(np.angle(np.exp(1j * (az[i, 0] - az[j, 0]))))))
           for i in range(len(az)) for j in range(i + 1, len(az))]
    return {"seed": seed, "dir": d.name, "crossings": bundle.meta.get("crossings", 0),
            "initial_separation_deg": min(sep) if sep else None, "snr_db": bundle.snr_db}


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    if args.dry_run:
        print(f"config ok: {cfg.n_scenes} scenes, seeds {cfg.seed}..{cfg.seed + cfg.n_scenes - 1}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    jobs = [(s, cfg.to_dict(), str(out)) for s in cfg.scene_seeds()]
    scenes = _map(_simulate_one, jobs, cfg.workers)
    manifest = {"scenes": scenes, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# track


def _dataset(path) -> tuple[Path, dict, str]:
    root = Path(path)
    mf = root / "manifest.json"
    if not mf.exists():
        raise ConfigError(f"{root}: no manifest.json (run `doatrack simulate` first)")
    text = mf.read_text()
    return root, json.loads(text), hashlib.sha256(text.encode()).hexdigest()[:16]


def _track_one(job):
    scene_dir, cfg_dict, out = job
    cfg = cfgmod.from_dict(cfg_dict)
    data = prepare(load_bundle(scene_dir))
    rows = []
    for tcfg in cfg.trackers:
        sdir = Path(out) / tcfg.label / Path(scene_dir).name
        sdir.mkdir(parents=True, exist_ok=True)
        for target in range(len(data.direct)):
            res = track_target(data, target, tcfg, cfg.enhancer, with_audio=cfg.save_audio,
                               gate_db=cfg.metric_gate_db)
            res.track.to_csv(sdir / f"track_{target}.csv")
            row = res.row()
            (sdir / f"metrics_{target}.json").write_text(json.dumps(row, indent=1, sort_keys=True))
            if cfg.save_audio and res.enhanced is not None:
                write_wav(sdir / f"enhanced_{target}.wav", res.enhanced, data.stft.sample_rate)
            rows.append(row)
    return rows


def cmd_track(args) -> int:
    cfg = _load_config(args)
    root, manifest, fingerprint = _dataset(args.data)
    out = Path(args.out)
    if args.dry_run:
        labels = ", ".join(t.label for t in cfg.trackers)
        print(f"config ok: {len(manifest['scenes'])} scenes x [{labels}] with {cfg.enhancer.kind}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    jobs = [(str(root / s["dir"]), cfg.to_dict(), str(out)) for s in manifest["scenes"]]
    rows = [r for part in _map(_track_one, jobs, cfg.workers) for r in part]
    _write_rows(out / "results.csv", rows)
    (out / "run.json").write_text(json.dumps({"dataset": str(root), "dataset_fingerprint": fingerprint,
                                              "n_rows": len(rows)}, indent=1))
    table = summarize(rows)
    _print_table(table)
    return EXIT_OK


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in RESULT_FIELDS:
            if k not in ("label",):
                r[k] = float(r[k]) if k not in ("seed", "target", "n_frames") else int(float(r[k]))
    return rows


def _ci(values) -> tuple[float, float]:
    v = [x for x in values if math.isfinite(x)]
    if not v:
        return float("nan"), float("nan")
    if len(v) < 2:
        return float(v[0]), float("nan")
    s = aggregate(v)
    return s.mean, s.ci95


def summarize(rows: list[dict]) -> list[dict]:
    """One row per tracker label with mean and 95 % CI half-widths."""
    table = []
    for label in dict.fromkeys(r["label"] for r in rows):
        sel = [r for r in rows if r["label"] == label]
        kind, mode = label.split("-", 1)
        acc, acc_ci = _ci([r["acc_pct"] for r in sel])
        mae, mae_ci = _ci([r["mae_deg"] for r in sel])
        sdr, sdr_ci = _ci([r["si_sdr_db"] for r in sel])
        table.append({"tracker": kind, "mode": mode, "n": len(sel), "acc_pct": acc, "acc_ci95": acc_ci,
                      "mae_deg": mae, "mae_ci95": mae_ci, "si_sdr_db": sdr, "si_sdr_ci95": sdr_ci})
    return table


def _print_table(table):
    print(f"{'tracker':8s} {'mode':8s} {'n':>4s}  {'ACC %':>15s}  {'MAE deg':>15s}  {'SI-SDR dB':>15s}")
    for r in table:
        def f(m, c):
            return "n/a" if not math.isfinite(m) else (f"{m:.2f}" if not math.isfinite(c) else f"{m:.2f} ± {c:.2f}")
        print(f"{r['tracker']:8s} {r['mode']:8s} {r['n']:4d}  {f(r['acc_pct'], r['acc_ci95']):>15s}  "
              f"{f(r['mae_deg'], r['mae_ci95']):>15s}  {f(r['si_sdr_db'], r['si_sdr_ci95']):>15s}")


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    rows, prints = [], set()
    for d in args.results:
        d = Path(d)
        if not (d / "results.csv").exists() or not (d / "run.json").exists():
            raise ConfigError(f"{d}: not a results directory (missing results.csv or run.json)")
        prints.add(json.loads((d / "run.json").read_text())["dataset_fingerprint"])
        rows.extend(_read_rows(d / "results.csv"))
    if len(prints) > 1:
        raise ConfigError(f"results come from different datasets ({sorted(prints)}); refusing to compare")
    table = summarize(rows)
    _print_table(table)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]))
            w.writeheader()
            w.writerows(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    grid = cfg.sweep.get("grid") or {}
    if not grid:
        raise ConfigError("sweep.grid is empty")
    base = TrackerConfig(**(cfg.sweep.get("base") or {}))
    root, manifest, _ = _dataset(args.data)
    if args.dry_run:
        n = int(np.prod([len(v) for v in grid.values()]))
        print(f"config ok: {n} grid points on {len(manifest['scenes'])} scenes")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    scenes = [prepare(load_bundle(root / s["dir"])) for s in manifest["scenes"]]
    rows = sweep_params(scenes, base, grid, cfg.enhancer)
    names = list(grid)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names + ["mae_deg", "acc_pct", "n"])
        w.writeheader()
        w.writerows(rows)
    with open(out / "sweep_long.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "x", "metric", "y"] + [f"with_{n}" for n in names])
        for r in rows:
            for n in names:
                for metric in ("mae_deg", "acc_pct"):
                    w.writerow([n, r[n], metric, r[metric]] + [r[m] for m in names])
    best = base.with_(**{n: rows[0][n] for n in names})
    (out / "best_config.yaml").write_text(yaml.safe_dump({"trackers": [best.to_dict()]}, sort_keys=False))
    print("best:", {n: rows[0][n] for n in names}, f"MAE {rows[0]['mae_deg']:.2f} ACC {rows[0]['acc_pct']:.1f}")
    return EXIT_OK


def cmd_defaults(args) -> int:
    text = cfgmod.reference_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doatrack", description="Weakly guided DoA tracking experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, out_required=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override the base scene seed")
        sp.add_argument("--workers", type=int, help="scene-level worker processes")
        sp.add_argument("--dry-run", action="store_true", help="validate the configuration only")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory written by `simulate`")

    sp = sub.add_parser("simulate", help="generate a scene dataset")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("track", help="run trackers on a dataset")
    common(sp, data=True)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("eval", help="compare results directories")
    sp.add_argument("results", nargs="+")
    sp.add_argument("--out", help="CSV table path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="grid search over tracker parameters")
    common(sp, data=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("defaults", help="print the documented default configuration")
    sp.add_argument("--out", help="write to a file instead of stdout")
    sp.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SceneError, RuntimeError, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
