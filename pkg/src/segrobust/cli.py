"""Command-line entry point wiring the full pipeline:

    segrobust <gen-data|train|attack|minperturb|report> --config <path> [--key value ...]

Config is a JSON file; any field can be overridden with a flag of the same
dotted name (flags win). Exit codes: 0 success, 2 config error, 3 missing
input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import re
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__, advtrain, robusteval, synthdata
from .attacks import AttackConfig, Budget
from .numcore import NonFiniteError
from .robusteval import AttackSpec, EvalReport
from .segmodel import SegModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_NUMERICAL = 4


class ConfigError(ValueError):
    pass


class MissingInputError(FileNotFoundError):
    pass


DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "segrobust_out",
    "workers": 1,
    "dataset": {
        "train_count": 256,
        "val_count": 64,
        "test_count": 64,
        "height": 32,
        "width": 32,
        "classes": 4,
        "void_fraction": 0.05,
    },
    "train": {
        "name": "model",
        "attack": None,
        "attack_iterations": 3,
        "attack_step_size": 0.01,
        "attack_adam_lr": 0.01,
        "epsilon": 0.03,
        "rho": 1.0,
        "batch_size": 16,
        "epochs": 30,
        "warmup_epochs": 0,
        "lr": 0.01,
        "weight_decay": 1e-4,
        "momentum": 0.9,
        "early_stop_window": 10,
    },
    "model": {"path": None, "paths": []},
    "attack": {
        "suite": ["PGD(6)", "PGD(120)", "PAdam(120)", "CIRA(120)", "CIRA+(120)"],
        "epsilon": 0.03,
    },
    "minperturb": {
        "suite": ["PGD(120)", "CIRA+(120)", "DAG(0.001)", "DAG(0.003)"],
        "levels": [0.90, 0.98, 0.99],
        "eps_hi": 0.2,
        "bisect_steps": 12,
    },
    "report": {"reports": [], "records": [], "level": 0.99},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_dotted(cfg: dict, key: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override non-object config node '{key}'")
    node[parts[-1]] = value


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)  # overrides must not touch the defaults
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"config file not found: {path}")
        try:
            cfg = _deep_merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid config JSON: {e}") from e
    if len(overrides) % 2:
        raise ConfigError("overrides must come in --key value pairs")
    for flag, value in zip(overrides[::2], overrides[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected a --key flag, got '{flag}'")
        _set_dotted(cfg, flag[2:], value)
    return cfg


def config_digest(cfg: dict) -> str:
    """Digest of the semantic config; execution-only keys do not affect it."""
    semantic = {k: v for k, v in cfg.items()
                if k not in ("workers", "output_dir", "model")}
    return hashlib.sha256(json.dumps(semantic, sort_keys=True).encode()).hexdigest()[:16]


def parse_attack_name(name: str) -> AttackSpec:
    """Map a column name like ``PGD(6)`` or ``DAG(0.003)`` to an AttackSpec."""
    m = re.fullmatch(r"(FGSM|PGD|PAdam|CIRA\+|CIRA|DAG)(?:\(([\d.]+)\))?", name)
    if not m:
        raise ConfigError(f"unknown attack name '{name}'")
    kind, arg = m.group(1), m.group(2)
    if kind == "FGSM":
        return AttackSpec(name, "fgsm", AttackConfig(iterations=1))
    if kind == "DAG":
        step = float(arg) if arg else 0.003
        return AttackSpec(name, "dag", AttackConfig(dag_step_size=step))
    if arg is None:
        raise ConfigError(f"attack '{name}' needs an iteration count")
    iters = int(arg)
    kinds = {"PGD": "pgd", "PAdam": "padam", "CIRA": "cira", "CIRA+": "cira+"}
    return AttackSpec(name, kinds[kind], AttackConfig(iterations=iters))


def _provenance(digest: str) -> str:
    return f"# segrobust={__version__} config_digest={digest}\n"


def _data_dir(cfg: dict) -> Path:
    return Path(cfg["output_dir"]) / "data"


def _load_split(cfg: dict, split: str) -> synthdata.Dataset:
    path = _data_dir(cfg) / f"{split}.bin"
    if not path.exists():
        raise MissingInputError(f"dataset split not found: {path} (run gen-data first)")
    return synthdata.load(path)


# -- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: dict) -> None:
    d = cfg["dataset"]
    counts = {"train": int(d["train_count"]), "val": int(d["val_count"]),
              "test": int(d["test_count"])}
    for split, n in counts.items():
        if n < 1:
            raise ConfigError(f"{split}_count must be >= 1")
    splits = synthdata.make_splits(int(cfg["seed"]), counts, int(d["height"]),
                                   int(d["width"]), int(d["classes"]),
                                   float(d["void_fraction"]))
    out = _data_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for split, ds in splits.items():
        path = out / f"{split}.bin"
        synthdata.save(ds, path)
        crc = zlib.crc32(path.read_bytes()[:-4]) & 0xFFFFFFFF  # the stored checksum
        print(f"{split}: {len(ds)} examples -> {path} crc32={crc:08x}")


def cmd_train(cfg: dict) -> None:
    t = cfg["train"]
    tconf = advtrain.TrainConfig(
        attack=t["attack"], attack_iterations=int(t["attack_iterations"]),
        attack_step_size=float(t["attack_step_size"]),
        attack_adam_lr=float(t["attack_adam_lr"]), epsilon=float(t["epsilon"]),
        rho=float(t["rho"]), batch_size=int(t["batch_size"]),
        epochs=int(t["epochs"]), warmup_epochs=int(t["warmup_epochs"]),
        lr=float(t["lr"]),
        weight_decay=float(t["weight_decay"]), momentum=float(t["momentum"]),
        early_stop_window=int(t["early_stop_window"]), seed=int(cfg["seed"]))
    train_ds = _load_split(cfg, "train")
    val_ds = _load_split(cfg, "val")
    run_dir = Path(cfg["output_dir"]) / "runs" / t["name"]
    model, log = advtrain.train(tconf, train_ds, val_ds, run_dir=run_dir)
    model.meta["config_digest"] = config_digest(cfg)
    model.meta["version"] = __version__
    ckpt = Path(cfg["output_dir"]) / "models" / f"{t['name']}.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    print(f"trained '{t['name']}': selected epoch {log.selected_epoch}, "
          f"clean mIoU {log.clean_miou[log.selected_epoch]:.4f}, "
          f"robust mIoU {log.robust_miou[log.selected_epoch]:.4f} -> {ckpt}")


def _model_paths(cfg: dict) -> list[Path]:
    m = cfg["model"]
    paths = [Path(p) for p in (m["paths"] or ([] if m["path"] is None else [m["path"]]))]
    if not paths:
        raise ConfigError("model.path or model.paths is required")
    for p in paths:
        if not p.exists():
            raise MissingInputError(f"checkpoint not found: {p}")
    return paths


def cmd_attack(cfg: dict) -> None:
    suite = [parse_attack_name(n) for n in cfg["attack"]["suite"]]
    if not suite:
        raise ConfigError("attack.suite must be non-empty")
    budget = Budget(epsilon=float(cfg["attack"]["epsilon"]))
    test_ds = _load_split(cfg, "test")
    out = Path(cfg["output_dir"]) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    for path in _model_paths(cfg):
        model = SegModel.load(path)
        report = robusteval.run_bounded_suite(
            model, test_ds, suite, budget, seed=int(cfg["seed"]),
            workers=int(cfg["workers"]), model_id=path.stem)
        report.config_digest = config_digest(cfg)
        dest = out / f"{path.stem}.json"
        robusteval.write_report_json(report, dest)
        print(f"{path.stem}: clean {report.means['clean']:.4f} "
              f"min {report.means['min']:.4f} -> {dest}")


def cmd_minperturb(cfg: dict) -> None:
    mp = cfg["minperturb"]
    suite = [parse_attack_name(n) for n in mp["suite"]]
    levels = tuple(float(x) for x in mp["levels"])
    if not levels:
        raise ConfigError("minperturb.levels must be non-empty")
    test_ds = _load_split(cfg, "test")
    out = Path(cfg["output_dir"]) / "minperturb"
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    for path in _model_paths(cfg):
        model = SegModel.load(path)
        records = robusteval.run_min_perturb_suite(
            model, test_ds, suite, levels, float(mp["eps_hi"]),
            int(mp["bisect_steps"]), seed=int(cfg["seed"]),
            workers=int(cfg["workers"]))
        rec_path = out / f"{path.stem}_records.csv"
        robusteval.write_records_csv(records, rec_path, levels)
        _prepend(rec_path, _provenance(digest))
        for mu in levels:
            curve = robusteval.survival_curve(records, mu)
            curve_path = out / f"{path.stem}_survival_{int(round(mu * 100))}.csv"
            robusteval.write_survival_csv(curve, curve_path)
            _prepend(curve_path, _provenance(digest))
        print(f"{path.stem}: {len(records)} records -> {rec_path}")


def _prepend(path: Path, line: str) -> None:
    path.write_text(line + path.read_text())


def cmd_report(cfg: dict) -> None:
    from . import plots

    r = cfg["report"]
    report_paths = [Path(p) for p in r["reports"]]
    if not report_paths:
        report_paths = sorted((Path(cfg["output_dir"]) / "reports").glob("*.json"))
    if not report_paths:
        raise MissingInputError("no bounded-suite reports found (run attack first)")
    for p in report_paths:
        if not p.exists():
            raise MissingInputError(f"report not found: {p}")
    reports = [EvalReport.from_dict(json.loads(p.read_text())) for p in report_paths]
    out = Path(cfg["output_dir"]) / "summary"
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)

    columns = ["clean", *reports[0].suite, "min"]
    summary = out / "miou_table.csv"
    with open(summary, "w", newline="") as f:
        f.write(_provenance(digest))
        f.write("model," + ",".join(columns) + "\n")
        for rep in sorted(reports, key=lambda r: -r.means["clean"]):
            cells = ",".join(f"{rep.means[c]:.4f}" for c in columns)
            f.write(f"{rep.model_id},{cells}\n")
    table = {rep.model_id: rep.means for rep in reports}
    plots.plot_miou_table(table, columns, out / "miou_table.png")
    print(f"mIoU comparison -> {summary}")

    record_paths = [Path(p) for p in r["records"]]
    if not record_paths:
        record_paths = sorted((Path(cfg["output_dir"]) / "minperturb").glob("*_records.csv"))
    if record_paths:
        level = float(r["level"])
        dists = {}
        curves = {}
        for p in record_paths:
            model_id = p.name[:-len("_records.csv")]
            records = _read_records_csv(p)
            curves[model_id] = robusteval.survival_curve(records, level)
            try:
                dists[model_id] = robusteval.best_attack_distribution(records, level)
            except ValueError:
                pass
        hist = out / "best_attack_histogram.csv"
        with open(hist, "w", newline="") as f:
            f.write(_provenance(digest))
            f.write("model,attack,proportion\n")
            for model_id in sorted(dists):
                for name, frac in dists[model_id].items():
                    f.write(f"{model_id},{name},{frac:.6f}\n")
        if dists:
            plots.plot_best_attack_histogram(dists, level,
                                             out / "best_attack_histogram.png")
        plots.plot_survival_curves(curves, level,
                                   out / f"survival_{int(round(level * 100))}.png")
        print(f"best-attack histogram -> {hist}")


def _read_records_csv(path: Path) -> list[robusteval.MinPerturbRecord]:
    records = []
    for line in path.read_text().splitlines():
        if line.startswith("#") or line.startswith("example_id") or not line.strip():
            continue
        cells = line.split(",")
        norm = math.inf if cells[2] == "inf" else float(cells[2])
        records.append(robusteval.MinPerturbRecord(int(cells[0]), cells[1],
                                                   norm, float(cells[3])))
    return records


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "minperturb": cmd_minperturb,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="segrobust", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config file")
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = load_config(args.config, extra)
        if "SEGROBUST_SEED" in os.environ and _seed_unset(args.config, extra):
            cfg["seed"] = int(os.environ["SEGROBUST_SEED"])
        COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (NonFiniteError, advtrain.DivergenceError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _seed_unset(config_path: str | None, overrides: list[str]) -> bool:
    if "--seed" in overrides:
        return False
    if config_path and Path(config_path).exists():
        try:
            return "seed" not in json.loads(Path(config_path).read_text())
        except json.JSONDecodeError:
            return True
    return True


if __name__ == "__main__":
    sys.exit(main())
