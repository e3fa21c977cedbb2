"""Command-line pipeline: data generation, BLA estimation, training, evaluation and grid sweeps.

Layout of an experiment directory::

    config.json                      resolved ExperimentConfig
    data/nl{level}/                  train.csv val.csv test.csv manifest.json
    bla/nl{level}/                   bla.json bla_report.json
    runs/nl{level}_scheme{tag}_run{seed}/
                                     model.json history.csv test_report.json config.json
    summary.csv  medians.csv  curves.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import (Dataset, Normalizer, WhSystemConfig, calibrate_input_std, default_wh_config, fit_normalizer,
                   generate_white_gaussian, load_dataset, measure_nl_level, save_dataset, simulate_wh)
from .errors import ConfigurationError, SplitError, SubnetInitError
from .evaluation import evaluate_bla, evaluate_model
from .linear_id import LinearSS, build_recon_maps, n4sid_estimate
from .subnet import SCHEMES, TrainConfig, apply_init_scheme, load_model, save_model, subnet_new, train

log = logging.getLogger("subnet_init")

SUMMARY_COLUMNS = ["nl_target", "nl_achieved", "scheme", "seed", "test_nrms", "best_epoch", "status"]
EXTERNAL_LEVEL = "ext"


@dataclass
class ExperimentConfig:
    """Everything a sweep needs. ``system`` is a WhSystemConfig dict (None: default WH system).

    With ``data_csv`` set the record is read from disk and split into the first
    ``N_train``, the next ``N_val`` and the next ``N_test`` samples (None: the
    rest); no calibration happens and ``nl_targets`` is ignored.
    """

    system: dict | None = None
    data_csv: str | None = None
    N_train: int = 20000
    N_val: int = 5000
    N_test: int | None = 5000
    data_seed: int = 0
    nl_targets: list = field(default_factory=lambda: [1.0, 5.0, 10.0, 20.0, 40.0])
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    runs: int = 3
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    n_x: int = 4
    n_a: int = 4
    n_b: int = 4
    hidden: list = field(default_factory=lambda: [32, 32])
    bla_order: int = 4
    bla_horizon: int | None = None
    output_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.nl_targets = [float(v) for v in self.nl_targets]
        self.hidden = [int(v) for v in self.hidden]
        self.schemes = list(self.schemes)
        self.validate()

    def validate(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigurationError(f"invalid scheme list {self.schemes}; choose from {SCHEMES}")
        if self.data_csv is None:
            if not self.nl_targets:
                raise ConfigurationError("nl_targets is empty")
            out = [v for v in self.nl_targets if not 0.5 <= v <= 60]
            if out:
                raise ConfigurationError(f"nl targets {out} outside the calibration range [0.5, 60]")
            if self.N_test is None:
                raise ConfigurationError("N_test must be set for generated data")
        if min(self.N_train, self.N_val) < 1 or (self.N_test is not None and self.N_test < 1):
            raise ConfigurationError("split sizes must be >= 1")
        if any(s != "RanDY+RanENC" for s in self.schemes) and self.bla_order != self.n_x:
            raise ConfigurationError(f"BLA order {self.bla_order} must equal n_x={self.n_x} for Lin schemes")

    @property
    def run_seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.runs)]

    @property
    def levels(self) -> list:
        return [EXTERNAL_LEVEL] if self.data_csv else list(self.nl_targets)

    def wh_system(self) -> WhSystemConfig:
        return WhSystemConfig.from_dict(self.system) if self.system else default_wh_config()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def wh_benchmark_preset(csv_path) -> ExperimentConfig:
    """Sixth-order model and BLA, T=80, n=6, for an externally supplied benchmark record."""
    return ExperimentConfig(data_csv=str(csv_path), N_train=80000, N_val=20000, N_test=None,
                            n_x=6, n_a=6, n_b=6, bla_order=6, hidden=[64, 64],
                            train=TrainConfig(T=80, batch_size=1024, epochs=3000))


def level_tag(level) -> str:
    return level if isinstance(level, str) else f"{level:g}"


def cell_name(level, scheme: str, seed: int) -> str:
    return f"nl{level_tag(level)}_scheme{scheme}_run{seed}"


def median(values):
    """Middle value; mean of the two middle values for an even count."""
    v = sorted(values)
    if not v:
        return float("nan")
    k = len(v) // 2
    return v[k] if len(v) % 2 else 0.5 * (v[k - 1] + v[k])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- pipeline stages -----------------------------------------------------------------------

def generate_level(cfg: ExperimentConfig, target: float, out_dir) -> dict:
    """Calibrate, simulate and write one nonlinearity level; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = cfg.wh_system()
    std = calibrate_input_std(target, system, cfg.bla_order, seed=cfg.data_seed, n_samples=cfg.N_train,
                              horizon=cfg.bla_horizon)
    N = cfg.N_train + cfg.N_val + cfg.N_test
    u = generate_white_gaussian(N, std, cfg.data_seed, n_u=system.B1.shape[1])
    ds = simulate_wh(system, u)
    # the first N_train samples are the calibration record
    achieved = measure_nl_level(system, u[:cfg.N_train], cfg.bla_order, cfg.bla_horizon)
    a, b = cfg.N_train, cfg.N_train + cfg.N_val
    for name, part in (("train", ds[:a]), ("val", ds[a:b]), ("test", ds[b:])):
        save_dataset(part, out / f"{name}.csv")
    manifest = {"nl_target": target, "nl_achieved": achieved, "input_std": std, "data_seed": cfg.data_seed,
                "N_train": cfg.N_train, "N_val": cfg.N_val, "N_test": cfg.N_test,
                "system": system.to_dict()}
    _write_json(out / "manifest.json", manifest)
    return manifest


def split_external(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    ds = load_dataset(cfg.data_csv)
    a, b = cfg.N_train, cfg.N_train + cfg.N_val
    c = ds.N if cfg.N_test is None else b + cfg.N_test
    if c > ds.N or b >= c:
        raise SplitError(f"record of {ds.N} samples cannot hold the configured "
                         f"{cfg.N_train}/{cfg.N_val}/{cfg.N_test} split")
    return ds[:a], ds[a:b], ds[b:c]


def load_splits(data_dir) -> tuple[Dataset, Dataset, Dataset]:
    d = Path(data_dir)
    return tuple(load_dataset(d / f"{name}.csv") for name in ("train", "val", "test"))


def fit_bla(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset, test_ds: Dataset, out_dir=None):
    """Normalizer, BLA and its report on the test record (``val_nrms`` is added for the validation record).

    Like the neural model, the BLA starts from the state reconstructed from
    the first n samples; without a reconstructability map it starts from zero.
    """
    nz = fit_normalizer(train_ds)
    ss = n4sid_estimate(nz.apply(train_ds), cfg.bla_order, cfg.bla_horizon)
    n = max(cfg.n_a, cfg.n_b)
    try:
        maps = build_recon_maps(ss, n)
    except SubnetInitError as exc:
        log.warning("no reconstructability map for the BLA, simulating from zero: %s", exc)
        maps = None
    doc = evaluate_bla(ss, test_ds, nz, n, maps).to_dict()
    doc["val_nrms"] = evaluate_bla(ss, val_ds, nz, n, maps).nrms
    doc["order"] = cfg.bla_order
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "bla.json", {"ss": ss.to_dict(), "normalizer": nz.to_dict(),
                                       "order": cfg.bla_order, "horizon": cfg.bla_horizon})
        _write_json(out / "bla_report.json", doc)
    return ss, nz, doc


def load_bla(path) -> tuple[LinearSS, Normalizer | None]:
    doc = json.loads(Path(path).read_text())
    nz = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
    return LinearSS.from_dict(doc["ss"]), nz


def train_cell(cfg: ExperimentConfig, scheme: str, seed: int, splits, bla: LinearSS | None, out_dir) -> dict:
    """Initialize, train and evaluate one (scheme, seed) cell; writes its artifacts to ``out_dir``."""
    train_ds, val_ds, test_ds = splits
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed, "scheme": scheme})
    _write_json(out / "config.json", {**cfg.to_dict(), "train": asdict(tcfg), "seed": seed,
                                      "schemes": [scheme]})
    nz = fit_normalizer(train_ds)
    model = subnet_new(cfg.n_x, train_ds.n_u, train_ds.n_y, cfg.n_a, cfg.n_b, cfg.hidden, seed=seed)
    maps = None
    if scheme == "LinDY+LinENC":
        if bla is None:
            raise ConfigurationError("LinDY+LinENC needs a BLA model")
        maps = build_recon_maps(bla, model.n)
    model = apply_init_scheme(model, scheme, bla, maps)
    t0 = time.perf_counter()
    best, history = train(model, nz.apply(train_ds), nz.apply(val_ds), tcfg,
                          progress=lambda r: log.debug("%s epoch %d val_nrms %.4g", out.name, r.epoch, r.val_nrms))
    log.info("%s trained in %.1f s, best epoch %d", out.name, time.perf_counter() - t0, history.best_epoch)
    save_model(best, out / "model.json", nz, extra={"scheme": scheme, "seed": seed})
    history.to_csv(out / "history.csv")
    report = evaluate_model(best, test_ds, nz)
    report.save(out / "test_report.json")
    return {"test_nrms": report.nrms, "best_epoch": history.best_epoch, "history": history}


# --- commands ----------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, out) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    for target in cfg.nl_targets:
        m = generate_level(cfg, target, out / f"nl{level_tag(target)}")
        log.info("nl target %g: achieved %.3f with input std %.5g", target, m["nl_achieved"], m["input_std"])
    return 0


def cmd_bla(cfg: ExperimentConfig, data, out) -> int:
    splits = split_external(cfg) if cfg.data_csv else load_splits(data)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    _, _, doc = fit_bla(cfg, *splits, out_dir=out)
    log.info("BLA test NRMS %.5g (nl level %.3f, percent_nl %.3f)", doc["nrms"], doc["nl_level"], doc["percent_nl"])
    return 0


def _level_of(data_dir) -> object:
    manifest = Path(data_dir) / "manifest.json" if data_dir else None
    if manifest is not None and manifest.exists():
        return json.loads(manifest.read_text())["nl_target"]
    return EXTERNAL_LEVEL


def cmd_train(cfg: ExperimentConfig, data, bla_path, scheme, out) -> int:
    splits = split_external(cfg) if cfg.data_csv else load_splits(data)
    bla = None
    if scheme != "RanDY+RanENC":
        if bla_path is None:
            raise ConfigurationError(f"scheme {scheme} needs --bla")
        bla, _ = load_bla(bla_path)
    level = EXTERNAL_LEVEL if cfg.data_csv else _level_of(data)
    res = train_cell(cfg, scheme, cfg.seed, splits, bla, Path(out) / cell_name(level, scheme, cfg.seed))
    log.info("test NRMS %.5g", res["test_nrms"])
    return 0


def cmd_evaluate(model_path, data_csv, out) -> int:
    model, nz = load_model(model_path)
    ds = load_dataset(data_csv)
    if nz is None:
        raise ConfigurationError("model file carries no normalizer")
    report = evaluate_model(model, ds, nz)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    report.save_errors(out / "errors.csv")
    log.info("NRMS %.5g", report.nrms)
    return 0


def cmd_experiment(cfg: ExperimentConfig) -> int:
    """Full grid. Failed cells are recorded with their status; the exit code is 1 if any failed."""
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    cfg.save(root / "config.json")
    rows, curves = [], []
    for level in cfg.levels:
        tag = level_tag(level)
        target = "" if level == EXTERNAL_LEVEL else level
        achieved = None
        try:
            if cfg.data_csv:
                splits = split_external(cfg)
            else:
                achieved = generate_level(cfg, level, root / "data" / f"nl{tag}")["nl_achieved"]
                splits = load_splits(root / "data" / f"nl{tag}")
        except SubnetInitError as exc:
            log.error("nl %s: data generation failed: %s", tag, exc)
            rows += [_row(target, getattr(exc, "achieved", None), s, seed, status="calibration_failed")
                     for s in cfg.schemes for seed in cfg.run_seeds]
            continue
        bla = None
        try:
            bla, _, doc = fit_bla(cfg, *splits, out_dir=root / "bla" / f"nl{tag}")
            if achieved is None:
                achieved = doc["nl_level"]
        except SubnetInitError as exc:
            log.error("nl %s: BLA failed: %s", tag, exc)
        for scheme in cfg.schemes:
            for seed in cfg.run_seeds:
                name = cell_name(level, scheme, seed)
                if bla is None and scheme != "RanDY+RanENC":
                    rows.append(_row(target, achieved, scheme, seed, status="bla_failed"))
                    continue
                try:
                    res = train_cell(cfg, scheme, seed, splits, bla, root / "runs" / name)
                except SubnetInitError as exc:
                    log.error("%s failed: %s", name, exc)
                    rows.append(_row(target, achieved, scheme, seed, status=type(exc).__name__))
                    continue
                rows.append(_row(target, achieved, scheme, seed, res["test_nrms"], res["best_epoch"], "ok"))
                curves += [[tag, scheme, seed, r.epoch, repr(r.val_loss), repr(r.val_nrms)]
                           for r in res["history"].records]
    _write_csv(root / "summary.csv", SUMMARY_COLUMNS, rows)
    _write_csv(root / "curves.csv", ["nl_target", "scheme", "seed", "epoch", "val_loss", "val_nrms"], curves)
    _write_csv(root / "medians.csv", ["nl_target", "scheme", "n_ok", "median_test_nrms"], summarize(rows))
    failed = sum(r[-1] != "ok" for r in rows)
    if failed:
        log.error("%d of %d cells failed", failed, len(rows))
    return 1 if failed else 0


def _row(target, achieved, scheme, seed, test_nrms=None, best_epoch=None, status="ok"):
    fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
    return [target if target == "" else f"{target:g}", fmt(achieved), scheme, seed, fmt(test_nrms),
            "" if best_epoch is None else best_epoch, status]


def summarize(rows) -> list[list]:
    """Per (nl_target, scheme) median of the successful cells' test NRMS."""
    groups: dict = {}
    for target, _, scheme, _, test_nrms, _, status in rows:
        vals = groups.setdefault((target, scheme), [])
        if status == "ok":
            vals.append(float(test_nrms))
    return [[t, s, len(v), repr(median(v)) if v else ""] for (t, s), v in groups.items()]


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_summary(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# --- argument handling -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subnet-init", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="JSON ExperimentConfig; flags override its values")
        sp.add_argument("--preset", choices=["desk", "wh-benchmark"], default="desk")
        sp.add_argument("--data-csv", help="external record (required by the wh-benchmark preset)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=out_default)
        sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("generate", help="calibrate and simulate train/val/test records")
    common(sp, "data")
    sp.add_argument("--nl", type=float, nargs="+", help="nonlinearity targets in percent")

    sp = sub.add_parser("bla", help="estimate the BLA on a data directory")
    common(sp, None)
    sp.add_argument("--data", help="directory with train/val/test CSVs")

    sp = sub.add_parser("train", help="train one model")
    common(sp, "runs")
    sp.add_argument("--data", help="directory with train/val/test CSVs")
    sp.add_argument("--bla", help="bla.json written by the bla command")
    sp.add_argument("--scheme", choices=SCHEMES, default="LinDY+LinENC")

    sp = sub.add_parser("evaluate", help="score a saved model on a CSV record")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="CSV record")
    sp.add_argument("--out", default="eval")

    sp = sub.add_parser("experiment", help="run the nl-level x scheme x seed grid")
    common(sp, None)
    sp.add_argument("--nl", type=float, nargs="+")
    sp.add_argument("--scheme", choices=SCHEMES, nargs="+")
    return p


def resolve_config(args) -> ExperimentConfig:
    """Preset, then config file, then flags."""
    if args.preset == "wh-benchmark":
        if not (args.data_csv or args.config):
            raise ConfigurationError("the wh-benchmark preset needs --data-csv")
        base = wh_benchmark_preset(args.data_csv or "").to_dict()
    else:
        base = ExperimentConfig().to_dict()
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        unknown = set(doc) - set(base)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        train_over = doc.pop("train", {})
        base.update(doc)
        base["train"] = {**base["train"], **train_over}
    if args.data_csv:
        base["data_csv"] = args.data_csv
    if args.seed is not None:
        base["seed"] = args.seed
    if args.epochs is not None:
        base["train"]["epochs"] = args.epochs
    if getattr(args, "nl", None):
        base["nl_targets"] = args.nl
    scheme = getattr(args, "scheme", None)
    if isinstance(scheme, list):
        base["schemes"] = scheme
    elif scheme is not None:
        base["schemes"] = [scheme]
    if args.command == "experiment" and args.out is not None:
        base["output_dir"] = args.out
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "evaluate":
            return cmd_evaluate(args.model, args.data, args.out)
        cfg = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "bla":
            out = args.out or args.data or "bla"
            return cmd_bla(cfg, args.data, out)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.bla, cfg.schemes[0], args.out)
        return cmd_experiment(cfg)
    except (SubnetInitError, FileNotFoundError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
