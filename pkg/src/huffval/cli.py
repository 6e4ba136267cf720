"""Command-line entry point: ``huffval <command> [options]``.

Settings come from an optional YAML key/value file (``--config``); every
flag overrides its key. The effective settings are written to
``<out>/effective_config.yaml`` on each run.

Exit codes: 0 success, 1 validation failure, 2 too many degenerate cells.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import pandas as pd
import yaml

from . import data as core
from . import pipeline as pl
from .errors import ConfigError, HuffvalError, SchemaError
from .geo import ANCHOR_ALIASES, DistancePolicy
from .pso import SwarmConfig
from .regress import adjusted_r2_table
from .synth import CATEGORY_NAMES, CityConfig, generate_city, mobility_pattern_matrix, write_city

logger = logging.getLogger("huffval")

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 1, 2
COMMANDS = ("ingest", "fit", "indicators", "regress", "synth", "distances", "report")
SEEDED = ("fit", "synth", "report")


@dataclass
class RunConfig:
    input: str | None = None
    out: str = "out"
    seed: int | None = None
    workers: int = 1
    categories: list[str] | None = None
    districts: list[str] | None = None
    min_transactions: int = core.DEFAULT_MIN_TRANSACTIONS
    per_cell_min: int | None = None
    anchor: str = "min_home_work"
    floor_km: float = 0.05
    window: list[str] = field(default_factory=lambda: [d.isoformat() for d in core.DEFAULT_WINDOW])
    minor_units: int = 2
    estimator: str = "pso"
    attractiveness: str = "derived"
    swarm: dict = field(default_factory=dict)
    bin_width_km: float = 1.0
    max_rejection_fraction: float = 0.05
    max_degenerate_fraction: float = 0.25
    category_names: dict = field(default_factory=dict)
    trace: bool = False
    fits: str | None = None
    exclusions: str | None = None
    indicators: str | None = None
    city: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchor = ANCHOR_ALIASES.get(self.anchor, self.anchor)
        if self.categories is not None:
            self.categories = [str(c) for c in self.categories]
        if self.districts is not None:
            self.districts = [str(d) for d in self.districts]
        if self.estimator not in ("pso", "loglinear"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.attractiveness not in ("derived", "generator"):
            raise ConfigError(f"attractiveness must be 'derived' or 'generator', got {self.attractiveness!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.min_transactions < 1:
            raise ConfigError("min_transactions must be >= 1")
        if len(self.window) != 2:
            raise ConfigError("window needs a start and an end date")
        self.window = [str(pd.Timestamp(w).date()) for w in self.window]
        self.category_names = {str(k): str(v) for k, v in self.category_names.items()}
        self.policy  # validates anchor and floor
        self.swarm_config  # validates swarm keys

    @property
    def policy(self) -> DistancePolicy:
        return DistancePolicy(self.anchor, self.floor_km)

    @property
    def swarm_config(self) -> SwarmConfig:
        try:
            return SwarmConfig(**self.swarm)
        except TypeError as exc:
            raise ConfigError(f"invalid swarm settings: {exc}") from None

    @property
    def window_dates(self):
        return tuple(pd.Timestamp(w).date() for w in self.window)

    def names(self) -> dict[str, str]:
        return {**CATEGORY_NAMES, **self.category_names}

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a YAML key/value file (optional) and apply ``overrides`` on top."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a key/value mapping")
        values.update(loaded)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="huffval", description="Fit and validate Huff models on transaction data.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML key/value settings file")
    common.add_argument("--input", help="directory with transactions/customers/merchants[/districts].csv")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int)
    common.add_argument("--category", dest="categories", action="append", help="repeatable")
    common.add_argument("--district", dest="districts", action="append", help="repeatable")
    common.add_argument("--min-transactions", type=int)
    common.add_argument("--anchor", choices=sorted(ANCHOR_ALIASES))
    common.add_argument("--floor-km", type=float)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate inputs and summarize")
    p.add_argument("--max-rejection-fraction", type=float)

    for name, text in (("fit", "fit Huff parameters per cell"), ("report", "run every step and bundle the tables")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--estimator", choices=["pso", "loglinear"])
        p.add_argument("--attractiveness", choices=["derived", "generator"])
        p.add_argument("--bin-width-km", type=float)
        p.add_argument("--max-degenerate-fraction", type=float)
        p.add_argument("--trace", action="store_true", default=None, help="write PSO convergence traces")

    sub.add_parser("indicators", parents=[common], help="district diversity and inequality indicators")

    p = sub.add_parser("regress", parents=[common], help="regress fit scores on indicators")
    p.add_argument("--fits", help="fits CSV (default <out>/fits.csv)")
    p.add_argument("--exclusions", help="exclusions CSV (default <out>/exclusions.csv)")
    p.add_argument("--indicators", help="indicators CSV (default <out>/indicators.csv)")

    sub.add_parser("synth", parents=[common], help="generate a synthetic city")

    p = sub.add_parser("distances", parents=[common], help="visit-weighted distance histograms")
    p.add_argument("--bin-width-km", type=float)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# --------------------------------------------------------------------------
# output helpers

def _write_csv(frame: pd.DataFrame, path: Path, **kw) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", **kw)
    return path


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    doc = {"command": command, **cfg.to_dict()}
    (out / "effective_config.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


def _require_input(cfg: RunConfig) -> Path:
    if cfg.input is None:
        raise ConfigError("no input directory given (--input or 'input' key)")
    d = Path(cfg.input)
    for name in ("transactions.csv", "customers.csv", "merchants.csv"):
        if not (d / name).exists():
            raise ConfigError(f"missing input file {d / name}")
    return d


def _load(cfg: RunConfig) -> pl.LoadedData:
    return pl.load_dataset(_require_input(cfg), cfg.window_dates, cfg.minor_units)


def _categories(cfg: RunConfig, ds: core.Dataset) -> list[str]:
    if cfg.categories:
        return list(cfg.categories)
    return sorted(ds.merchants["category_id"].astype(str).unique())


def _generator_revenue(cfg: RunConfig) -> pd.Series | None:
    if cfg.attractiveness != "generator":
        return None
    path = Path(cfg.input) / "truth.json"
    if not path.exists():
        raise ConfigError(f"attractiveness=generator needs {path}")
    rev = json.loads(path.read_text())["generator_revenue"]
    return pd.Series(rev, dtype=float)


def read_fits(path) -> pd.DataFrame:
    """Load a fits CSV written by ``fit`` back into its in-memory form."""
    fits = pd.read_csv(path, dtype={"category_id": str, "district_id": str}, float_precision="round_trip")
    missing = [c for c in pl.FIT_COLUMNS if c not in fits.columns]
    if missing:
        raise SchemaError(missing, str(path))
    return fits[pl.FIT_COLUMNS]


def read_indicators(path) -> pd.DataFrame:
    from .indicators import INDICATOR_FIELDS
    ind = pd.read_csv(path, dtype={"district_id": str, "reason": str}, keep_default_na=False, float_precision="round_trip",
                      na_values={c: [""] for c in INDICATOR_FIELDS if c not in ("district_id", "reason")})
    missing = [c for c in INDICATOR_FIELDS if c not in ind.columns]
    if missing:
        raise SchemaError(missing, str(path))
    return ind[list(INDICATOR_FIELDS)]


# --------------------------------------------------------------------------
# commands

def cmd_ingest(cfg: RunConfig, out: Path) -> int:
    loaded = _load(cfg)
    ds = loaded.dataset
    active = core.filter_active_customers(ds.transactions, cfg.min_transactions)
    summary = core.summarize(active, period=ds.window)
    _write_csv(pd.DataFrame(summary.rows(), columns=["field", "value"]), out / "summary.csv")
    frames = [r.assign(file=name)[["file", "row_number", "reason"]] for name, r in loaded.rejections.items()]
    _write_csv(pd.concat(frames, ignore_index=True), out / "rejections.csv")
    frac = loaded.rejection_fraction
    for label, value in summary.rows():
        print(f"{label}: {value}")
    print(f"rejected rows: {sum(len(r) for r in loaded.rejections.values())} ({frac:.2%})")
    if frac > cfg.max_rejection_fraction:
        print(f"error: rejection fraction {frac:.4f} exceeds {cfg.max_rejection_fraction}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _prepare(cfg: RunConfig):
    loaded = _load(cfg)
    ds = loaded.dataset
    categories = _categories(cfg, ds)
    records = pl.active_records(ds, cfg.min_transactions, categories)
    inputs = pl.build_inputs(ds, records, categories, cfg.policy, cfg.minor_units, cfg.districts,
                             cfg.per_cell_min, _generator_revenue(cfg))
    return ds, records, categories, inputs


def _write_histograms(cfg: RunConfig, inputs, categories, out: Path) -> None:
    _write_csv(pl.histograms_frame(pl.category_histograms(inputs, categories, cfg.bin_width_km)),
               out / "distance_histograms.csv")
    _write_csv(pl.histograms_frame(pl.cell_histograms(inputs, cfg.bin_width_km)),
               out / "distance_histograms_cells.csv")


def _fit(cfg: RunConfig, out: Path, prepared=None) -> int:
    ds, records, categories, inputs = prepared or _prepare(cfg)
    results = pl.fit_all(inputs, cfg.swarm_config, cfg.seed, cfg.workers, cfg.estimator)
    fits, exclusions = pl.fits_frame(results)
    _write_csv(fits, out / "fits.csv")
    _write_csv(exclusions, out / "exclusions.csv")
    _write_csv(pl.performance_summary(fits, categories, cfg.names()), out / "performance_summary.csv",
               float_format="%.4f")
    _write_histograms(cfg, inputs, categories, out)
    if cfg.trace:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for r in results:
            if r.trace:
                rows = [(it, val, *pt) for it, val, pt in r.trace]
                _write_csv(pd.DataFrame(rows, columns=["iteration", "best_value", "alpha", "beta"]),
                           tdir / f"trace_{r.district_id}_{r.category_id}.csv")
    n = len(results)
    n_bad = len(exclusions)
    print(f"fitted {n - n_bad} of {n} cells; {n_bad} degenerate")
    if n and n_bad / n > cfg.max_degenerate_fraction:
        print(f"warning: degenerate fraction {n_bad / n:.2f} exceeds {cfg.max_degenerate_fraction}",
              file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    return _fit(cfg, out)


def _indicators(cfg: RunConfig, out: Path, prepared=None) -> pd.DataFrame:
    if prepared is None:
        ds = _load(cfg).dataset
        categories = _categories(cfg, ds)
        records = pl.active_records(ds, cfg.min_transactions, categories)
    else:
        ds, records, categories, _ = prepared
    table = pl.compute_indicators(ds, records, categories)
    if cfg.districts:
        table = table[table["district_id"].isin(cfg.districts)].reset_index(drop=True)
    _write_csv(table, out / "indicators.csv")
    return table


def cmd_indicators(cfg: RunConfig, out: Path) -> int:
    table = _indicators(cfg, out)
    undefined = table["reason"].astype(bool).sum()
    print(f"indicators for {len(table)} districts; {undefined} with undefined values")
    return EXIT_OK


def cmd_regress(cfg: RunConfig, out: Path) -> int:
    fits = read_fits(cfg.fits or out / "fits.csv")
    ex_path = Path(cfg.exclusions) if cfg.exclusions else out / "exclusions.csv"
    exclusions = pd.read_csv(ex_path, dtype=str, keep_default_na=False) if ex_path.exists() else None
    indicators = read_indicators(cfg.indicators or out / "indicators.csv")
    categories = cfg.categories or sorted(fits["category_id"].unique())
    reports, excluded, skipped = pl.run_regressions(fits, indicators, categories, exclusions)
    for key, reason in skipped.items():
        print(f"warning: regression for {key} skipped: {reason}", file=sys.stderr)
    names = cfg.names()
    _write_csv(adjusted_r2_table(reports, names), out / "adjusted_r2.csv", float_format="%.3f")
    frames, text = [], []
    for key, rep in reports.items():
        frames.append(rep.to_frame())
        text.append(f"({key}) {names.get(key, key)}\n{rep.coefficient_table()}")
        if rep.dropped:
            text.append(f"dropped (zero variance): {', '.join(rep.dropped)}\n")
    cols = ["scope", "name", "beta", "std_error", "t_stat", "p_value", "ci95_lo", "ci95_hi", "stars"]
    _write_csv(pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols),
               out / "regression.csv")
    (out / "regression_tables.txt").write_text("\n".join(text))
    _write_csv(pd.DataFrame(excluded, columns=["district_id", "category_id", "reason"]),
               out / "regression_exclusions.csv")
    print("\n".join(text))
    if not reports:
        print("error: no regression could be estimated", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _city_config(cfg: RunConfig) -> CityConfig:
    values = dict(cfg.city)
    values["seed"] = cfg.seed
    values.setdefault("policy", {"anchor": cfg.anchor, "floor_km": cfg.floor_km})
    values.setdefault("window", cfg.window)
    values.setdefault("minor_units", cfg.minor_units)
    if cfg.categories:
        values.setdefault("categories", cfg.categories)
    try:
        return CityConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid city settings: {exc}") from None


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    city = generate_city(_city_config(cfg))
    paths = write_city(city, out)
    ds = city.dataset
    active = core.filter_active_customers(ds.transactions, cfg.min_transactions)
    for c in city.config.categories:
        sub = active[active["category_id"] == c]
        m = mobility_pattern_matrix(sub, ds.customers, ds.merchants, city.config.district_ids)
        m.to_frame().to_csv(out / f"mobility_{c}.csv", lineterminator="\n")
    print(f"wrote {len(ds.transactions)} transactions to {paths['transactions']}")
    return EXIT_OK


def cmd_distances(cfg: RunConfig, out: Path) -> int:
    _, _, categories, inputs = _prepare(cfg)
    _write_histograms(cfg, inputs, categories, out)
    return EXIT_OK


def cmd_report(cfg: RunConfig, out: Path) -> int:
    status = cmd_ingest(cfg, out)
    if status != EXIT_OK:
        return status
    prepared = _prepare(cfg)
    fit_status = _fit(cfg, out, prepared)
    _indicators(cfg, out, prepared)
    reg_status = cmd_regress(cfg, out)
    parts = []
    for name, title in (("summary.csv", "Dataset summary"),
                        ("performance_summary.csv", "Huff model performance per merchant category"),
                        ("adjusted_r2.csv", "Adjusted R2 per merchant category")):
        table = pd.read_csv(out / name, dtype=str, keep_default_na=False)
        body = table.to_string(index=False) if len(table) else "(none)"
        parts.append(f"{title}\n{body}\n")
    parts.append((out / "regression_tables.txt").read_text())
    (out / "report.txt").write_text("\n".join(parts))
    return max(fit_status, reg_status)


HANDLERS = {"ingest": cmd_ingest, "fit": cmd_fit, "indicators": cmd_indicators, "regress": cmd_regress,
            "synth": cmd_synth, "distances": cmd_distances, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command in SEEDED and cfg.seed is None:
            raise ConfigError(f"'{args.command}' needs a seed (--seed or 'seed' key)")
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(cfg, out, args.command)
        return HANDLERS[args.command](cfg, out)
    except (HuffvalError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
