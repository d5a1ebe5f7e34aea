"""Command line harness: run pipelines, sweeps, ablations and reports.

Configuration is a flat ``key = value`` text file covering both experiment
hyperparameters and dataset construction; command line ``--set key=value``
pairs and dedicated flags override file values. Every run writes its own
directory under the output root (``--out-dir``, else $SNOWBALL_OUT_DIR,
else ./runs) containing a manifest, per-step CSVs and model checkpoints.

Exit codes: 0 success, 1 usage or configuration problems, 2 data problems,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import network as net
from .data import (DatasetSplit, gen_gaussian_blobs, gen_rings, gen_two_moons,
                   load_csv, split)
from .discovery import write_report_csv
from .errors import (AggregationError, ConfigError, DataError, DiscoveryError,
                     DivergenceError, NumericsError, OrchestrationError,
                     SnowballError)
from .orchestrator import ALGOS, ExperimentConfig, run_algorithm
from .records import (IterationRow, RunRecord, read_manifest, rows_equal,
                      write_manifest)
from .training import write_step_metrics

OUT_DIR_ENV = "SNOWBALL_OUT_DIR"
DATASETS = ("two-moons", "blobs", "rings", "csv")


@dataclass(frozen=True)
class DataSpec:
    """Flat description of how to build the dataset for a run."""

    dataset: str = "two-moons"
    n_samples: int = 1500        # two-moons only
    classes: int = 4             # blobs / rings
    n_per_class: int = 125       # blobs / rings
    data_noise: float = 0.15
    separation: float = 2.5      # blobs: centre circle radius
    labels_per_class: int = 2
    test_fraction: float = 1.0 / 3.0
    data_seed: int = -1          # -1: follow the run seed
    csv_path: str = ""
    csv_classes: int = 0         # 0: infer from the file

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}, expected one of {DATASETS}")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("dataset 'csv' needs csv_path")


def benchmark_two_moons() -> tuple[ExperimentConfig, DataSpec]:
    """The standard two-moons benchmark configuration.

    Calibrated for desk scale, where the package defaults are too gentle to
    show the full semi-supervised gap: a stronger consistency weight, a bit
    more input jitter and class-balanced selection, on moons with 4 labels
    per class.
    """
    config = ExperimentConfig(lambda2_max=3.0, sigma_aug=0.15, balance_classes=True)
    spec = DataSpec(dataset="two-moons", n_samples=1500, data_noise=0.1,
                    labels_per_class=4)
    return config, spec


def benchmark_blobs() -> tuple[ExperimentConfig, DataSpec]:
    """Four moderately overlapping Gaussian blobs: 8 labels + 400 unlabeled.

    The overlap is chosen so that pseudo-label quality visibly depends on the
    selection strategy (min / random / max)."""
    config = ExperimentConfig(lambda2_max=3.0, sigma_aug=0.15, balance_classes=True)
    spec = DataSpec(dataset="blobs", classes=4, n_per_class=153, data_noise=1.0,
                    separation=2.5, labels_per_class=2)
    return config, spec


def make_dataset(spec: DataSpec, run_seed: int) -> DatasetSplit:
    """Generate (or load) and split the dataset a run trains on."""
    spec.validate()
    seed = spec.data_seed if spec.data_seed >= 0 else run_seed
    if spec.dataset == "two-moons":
        raw = gen_two_moons(spec.n_samples, spec.data_noise, seed)
    elif spec.dataset == "blobs":
        raw = gen_gaussian_blobs(spec.classes, spec.n_per_class, spec.data_noise,
                                 spec.separation, seed)
    elif spec.dataset == "rings":
        raw = gen_rings(spec.classes, spec.n_per_class, spec.data_noise, seed)
    else:
        raw = load_csv(spec.csv_path, spec.csv_classes or None)
    return split(raw, spec.labels_per_class, spec.test_fraction, seed)


# --- flat config plumbing ---------------------------------------------------

_EXP_TYPES = typing.get_type_hints(ExperimentConfig)
_DATA_TYPES = typing.get_type_hints(DataSpec)


def _coerce(key: str, value, typ):
    if not isinstance(value, str):
        return value
    text = value.strip()
    origin = typing.get_origin(typ)
    try:
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            if text == "":
                return ()
            return tuple(_coerce(key, part.strip(), inner) for part in text.split(","))
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {typ}") from None


def parse_config_file(path) -> dict[str, str]:
    """Flat key-value file: one ``key = value`` per line, '#' comments."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    flat: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def build_configs(flat: dict[str, object]) -> tuple[ExperimentConfig, DataSpec]:
    """Split a flat mapping into typed configs; unknown keys are errors."""
    exp_kwargs: dict[str, object] = {}
    data_kwargs: dict[str, object] = {}
    for key, value in flat.items():
        if key == "algo":
            continue
        if key in _EXP_TYPES:
            exp_kwargs[key] = _coerce(key, value, _EXP_TYPES[key])
        elif key in _DATA_TYPES:
            data_kwargs[key] = _coerce(key, value, _DATA_TYPES[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    config = ExperimentConfig(**exp_kwargs)
    spec = DataSpec(**data_kwargs)
    config.validate()
    spec.validate()
    return config, spec


def _flat_from_args(args) -> dict[str, object]:
    flat: dict[str, object] = {}
    if args.config:
        flat.update(parse_config_file(args.config))
    for pair in args.set or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        flat[key.strip()] = value.strip()
    if getattr(args, "dataset", None):
        flat["dataset"] = args.dataset
    if getattr(args, "labels_per_class", None) is not None:
        flat["labels_per_class"] = args.labels_per_class
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    return flat


def _out_root(args) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    return Path(os.environ.get(OUT_DIR_ENV, "runs"))


# --- running and persisting -------------------------------------------------

def run_one(algo: str, config: ExperimentConfig, spec: DataSpec, out_root: Path,
            name: str | None = None, dump_discovery: bool = False) -> tuple[RunRecord, Path]:
    """Execute one run and persist manifest, step CSVs and checkpoints."""
    data = make_dataset(spec, config.seed)
    record = run_algorithm(algo, data, config)
    record.config.update(dataclass_flat(spec))
    run_dir = out_root / (name or f"{algo}-{spec.dataset}-seed{config.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir / "manifest.txt", record)
    for (m, k), steps in record.step_metrics.items():
        write_step_metrics(run_dir / f"steps-g{m}-i{k}.csv", steps)
    for role, params in record.models.items():
        net.save_checkpoint(params, run_dir / f"{role}.ckpt")
    if dump_discovery:
        truth = data.true_label_of()
        for (m, k), report in record.reports.items():
            write_report_csv(run_dir / f"discovery-g{m}-i{k}.csv", report, truth)
    return record, run_dir


def dataclass_flat(spec: DataSpec) -> dict[str, object]:
    return {k: getattr(spec, k) for k in _DATA_TYPES}


def rerun_manifest(path) -> tuple[RunRecord, list[IterationRow]]:
    """Re-execute the run a manifest describes; returns (new record, old rows)."""
    raw_config, old_rows = read_manifest(path)
    algo = raw_config.get("algo", "")
    if algo not in ALGOS:
        raise ConfigError(f"{path}: manifest has unknown algo {algo!r}")
    config, spec = build_configs(raw_config)
    data = make_dataset(spec, config.seed)
    record = run_algorithm(algo, data, config)
    record.config.update(dataclass_flat(spec))
    return record, old_rows


def verify_manifest(path) -> bool:
    """True when a re-run reproduces the manifest's metric rows bit-identically
    (wall_time excluded)."""
    record, old_rows = rerun_manifest(path)
    return rows_equal(record.rows, old_rows)


# --- aggregation ------------------------------------------------------------

AGG_FIELDS = ("train_err", "test_err", "noise_rate")
_SEED_KEYS = ("seed", "data_seed")


def aggregate(records: list[RunRecord]) -> list[dict[str, float]]:
    """Per-(generation, iteration) mean and sample std across seeds.

    All records must share algo and configuration apart from the seed keys,
    and the same (generation, iteration) grid. A single record aggregates to
    std 0 everywhere.
    """
    if not records:
        raise AggregationError("nothing to aggregate")
    base = {k: v for k, v in records[0].config.items() if k not in _SEED_KEYS}
    for rec in records[1:]:
        if rec.algo != records[0].algo:
            raise AggregationError("cannot aggregate records of different algorithms")
        other = {k: v for k, v in rec.config.items() if k not in _SEED_KEYS}
        if other != base:
            diff = sorted(k for k in set(base) | set(other)
                          if base.get(k) != other.get(k))
            raise AggregationError(f"records differ beyond the seed: {diff}")
    grid = [(r.generation, r.iteration) for r in records[0].rows]
    for rec in records[1:]:
        if [(r.generation, r.iteration) for r in rec.rows] != grid:
            raise AggregationError("records cover different (generation, iteration) grids")
    out = []
    for i, (m, k) in enumerate(grid):
        row: dict[str, float] = {"generation": m, "iteration": k}
        for name in AGG_FIELDS:
            values = np.array([getattr(rec.rows[i], name) for rec in records])
            row[f"{name}_mean"] = float(values.mean())
            row[f"{name}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out.append(row)
    return out


def parse_seeds(text: str) -> list[int]:
    """Seed lists: '0..4' (inclusive range) or '0,2,5'."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError
            return list(range(lo_i, hi_i + 1))
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seed list {text!r}") from None


# --- subcommands ------------------------------------------------------------

def _cmd_train(args) -> int:
    config, spec = build_configs(_flat_from_args(args))
    record, run_dir = run_one(args.algo, config, spec, _out_root(args),
                              args.name, args.dump_discovery)
    _print_rows(record.rows, prefix=args.algo)
    final = record.rows[-1]
    print(f"final test error {final.test_err:.4f} "
          f"(labelled set {final.labeled_size}, noise {final.noise_rate:.4f})")
    print(f"run written to {run_dir}")
    return 0


def _cmd_sweep(args) -> int:
    from dataclasses import replace
    config, spec = build_configs(_flat_from_args(args))
    seeds = parse_seeds(args.seeds)
    if not seeds:
        raise ConfigError("seed list is empty")
    out_root = _out_root(args)
    records = []
    for seed in seeds:
        cfg = replace(config, seed=seed)
        record, run_dir = run_one(args.algo, cfg, spec, out_root,
                                  name=f"{args.name or args.algo}-seed{seed}")
        records.append(record)
        print(f"seed {seed}: final test error {record.final_test_err():.4f} ({run_dir})")
    summary = aggregate(records)
    print(f"\naggregate over {len(seeds)} seeds "
          f"(mean +/- sample std), algo {args.algo}:")
    for row in summary:
        print(f"  g{row['generation']} i{row['iteration']}: "
              f"test {row['test_err_mean']:.4f} +/- {row['test_err_std']:.4f}  "
              f"noise {row['noise_rate_mean']:.4f} +/- {row['noise_rate_std']:.4f}")
    _write_aggregate_csv(out_root / f"{args.name or args.algo}-aggregate.csv", summary)
    return 0


def _write_aggregate_csv(path: Path, summary: list[dict[str, float]]) -> None:
    import csv as _csv
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = _csv.writer(handle)
        header = list(summary[0].keys())
        writer.writerow(header)
        for row in summary:
            writer.writerow([row[h] if h in ("generation", "iteration") else repr(row[h])
                             for h in header])


def _cmd_ablate_selection(args) -> int:
    """Compare selection strategies: error when training on the selected
    samples with their true labels, next to the pseudo-label noise each
    strategy would have introduced."""
    from dataclasses import replace
    config, spec = build_configs(_flat_from_args(args))
    out_root = _out_root(args)
    print(f"{'strategy':<10} {'err (true labels)':>18} {'sample noise rate':>18}")
    for strategy in ("min", "random", "max"):
        cfg = replace(config, strategy=strategy, use_true_labels=True)
        record, _ = run_one("snowball", cfg, spec, out_root,
                            name=f"{args.name or 'ablate-selection'}-{strategy}")
        final = record.rows[-1]
        print(f"{strategy:<10} {final.test_err:>18.4f} {final.noise_rate:>18.4f}")
    return 0


def _cmd_ablate_fusion(args) -> int:
    """Compare distance fusion methods by their final pseudo-label noise."""
    from dataclasses import replace
    config, spec = build_configs(_flat_from_args(args))
    out_root = _out_root(args)
    print(f"{'fusion':<22} {'noise rate':>12} {'test err':>10}")
    for fusion in ("average_distance", "feature_cascade", "average_sorting_score"):
        cfg = replace(config, fusion=fusion)
        record, _ = run_one("snowball", cfg, spec, out_root,
                            name=f"{args.name or 'ablate-fusion'}-{fusion}")
        final = record.rows[-1]
        print(f"{fusion:<22} {final.noise_rate:>12.4f} {final.test_err:>10.4f}")
    return 0


def _cmd_ablate_guidance(args) -> int:
    """Snowball against self-learning on the same data and seed."""
    config, spec = build_configs(_flat_from_args(args))
    out_root = _out_root(args)
    records = {}
    for algo in ("snowball", "self-learning"):
        record, _ = run_one(algo, config, spec, out_root,
                            name=f"{args.name or 'ablate-guidance'}-{algo}")
        records[algo] = record
    print(f"{'gen':>3} {'iter':>4} {'snowball err':>13} {'snowball noise':>15} "
          f"{'self-learn err':>15} {'self-learn noise':>17}")
    for a, b in zip(records["snowball"].rows, records["self-learning"].rows):
        print(f"{a.generation:>3} {a.iteration:>4} {a.test_err:>13.4f} "
              f"{a.noise_rate:>15.4f} {b.test_err:>15.4f} {b.noise_rate:>17.4f}")
    return 0


def _cmd_report(args) -> int:
    raw_config, rows = read_manifest(args.manifest)
    print(f"run manifest: {args.manifest}")
    print(f"  algo: {raw_config.get('algo', '?')}")
    for key in sorted(raw_config):
        if key != "algo":
            print(f"  {key} = {raw_config[key]}")
    _print_rows(rows, prefix=raw_config.get("algo", "?"))
    if args.verify:
        ok = verify_manifest(args.manifest)
        print(f"re-run reproduces metrics bit-identically: {'yes' if ok else 'NO'}")
        return 0 if ok else 1
    return 0


def _print_rows(rows, prefix: str = "") -> None:
    print(f"{'gen':>3} {'iter':>4} {'train_err':>10} {'test_err':>9} "
          f"{'noise':>7} {'labelled':>9} {'wall_s':>7}")
    for r in rows:
        print(f"{r.generation:>3} {r.iteration:>4} {r.train_err:>10.4f} "
              f"{r.test_err:>9.4f} {r.noise_rate:>7.4f} {r.labeled_size:>9} "
              f"{r.wall_time:>7.2f}")


# --- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage errors through our exit codes
        raise ConfigError(message)


def _add_common(parser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--dataset", choices=DATASETS)
    parser.add_argument("--labels-per-class", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir", help=f"output root (default ${OUT_DIR_ENV} or ./runs)")
    parser.add_argument("--name", help="run directory name")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="snowball",
                     description="Semi-supervised learning with master-teacher-student "
                                 "evolution and confident-sample discovery.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_train = sub.add_parser("train",
                             help="run one pipeline and persist its artifacts")
    _add_common(p_train)
    p_train.add_argument("--algo", choices=ALGOS, default="snowball")
    p_train.add_argument("--dump-discovery", action="store_true",
                         help="also write per-iteration discovery report CSVs")
    p_train.set_defaults(func=_cmd_train)

    p_sweep = sub.add_parser("sweep",
                             help="run several seeds and aggregate")
    _add_common(p_sweep)
    p_sweep.add_argument("--algo", choices=ALGOS, default="snowball")
    p_sweep.add_argument("--seeds", default="0..4", help="'0..4' or '0,1,2'")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_sel = sub.add_parser("ablate-selection",
                           help="min / random / max selection comparison")
    _add_common(p_sel)
    p_sel.set_defaults(func=_cmd_ablate_selection)

    p_fus = sub.add_parser("ablate-fusion",
                           help="distance fusion comparison")
    _add_common(p_fus)
    p_fus.set_defaults(func=_cmd_ablate_fusion)

    p_gui = sub.add_parser("ablate-guidance",
                           help="snowball vs self-learning")
    _add_common(p_gui)
    p_gui.set_defaults(func=_cmd_ablate_guidance)

    p_rep = sub.add_parser("report",
                           help="render a run manifest; --verify re-runs it")
    p_rep.add_argument("manifest")
    p_rep.add_argument("--verify", action="store_true")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def cli_run(argv: list[str] | None = None) -> int:
    """Parse arguments, dispatch, and map errors onto exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, AggregationError, OrchestrationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (DataError, DiscoveryError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericsError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return int(code) if isinstance(code, int) else 0


def main() -> None:
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
