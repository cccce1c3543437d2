"""Command-line driver: ``survloco {synth,loco,stability,cv}``.

A run is described by one JSON config (see :data:`DEFAULTS`); flags override
config values. Every output starts with a metadata block holding the tool
version, a hash of the resolved config, the seed and the full config, so any
artifact can be traced back to the run that produced it. The worker count is
deliberately left out: outputs are identical for any number of workers.

Exit codes: 0 success, 1 invalid config or data, 2 computation aborted.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import forest as _forest
from . import locomp, stability, svg, synth
from .dataset import (DatasetError, SurvivalDataset, discretize, load_csv, load_schema,
                      variance_filter, write_csv)
from .errors import CensoringSaturationError, ConvergenceError, NoEventsError

__all__ = ["DEFAULTS", "RunConfig", "ConfigError", "main"]

WORKERS_ENV = "SURVLOCO_WORKERS"

DEFAULTS: dict = {
    "data": {"csv": None, "schema": None},
    "synth": None,
    "outcome": "",
    "seed": 0,
    "d": 16,
    "variance_threshold": None,
    "features": "dbm",
    "backend": {"kind": "forest"},
    "loco": {"n": None, "m": None, "K": 10000, "seed": None, "min_patches": 5, "level": 0.95},
    "stability": {"B": 10, "frac": 0.8, "P": 25, "permute": None, "shared_patches": False,
                  "k_max": 15, "K": None, "rf_imp": {"n_trees": 500, "min_leaf": 5, "mtry": None}},
    "cv": {"repeats": 6, "folds": 5, "groupings": list(ev.GROUPING_NAMES), "k": 6,
           "k_list": [], "ablations": [], "stratify": True, "refit_loco_per_fold": False,
           "ranking": None, "model": {"kind": "forest", "n_trees": 500, "min_leaf": 5,
                                      "mtry": None, "lam": None}},
}

BACKENDS = ("forest", "cox_ridge", "cox_lasso", "constant")


class ConfigError(ValueError):
    """The run configuration is invalid."""


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key not in ("backend",):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _int(v, name, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}")
    return v


def _opt_int(v, name, lo=None):
    return None if v is None else _int(v, name, lo)


class RunConfig:
    """Validated, fully resolved run configuration.

    ``base_dir`` resolves relative data paths (the config file's directory);
    it is not part of the config hash.
    """

    def __init__(self, raw: dict | None = None, base_dir: str | os.PathLike = "."):
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        self.values = _merge(DEFAULTS, raw or {})
        self.base_dir = Path(base_dir)
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def override(self, **flags) -> "RunConfig":
        """New config with flag values applied; ``None`` leaves a value alone."""
        v = copy.deepcopy(self.values)
        if flags.get("seed") is not None:
            v["seed"] = flags["seed"]
        if flags.get("k") is not None:
            v["cv"]["k"] = flags["k"]
        if flags.get("backend") is not None:
            v["backend"] = {"kind": flags["backend"]}
            v["cv"]["model"] = {**v["cv"]["model"], "kind": flags["backend"]}
        if flags.get("stratify") is not None:
            v["cv"]["stratify"] = flags["stratify"]
        if flags.get("refit_loco_per_fold") is not None:
            v["cv"]["refit_loco_per_fold"] = flags["refit_loco_per_fold"]
        out = RunConfig.__new__(RunConfig)
        out.values, out.base_dir = v, self.base_dir
        out.validate()
        return out

    def validate(self):
        v = self.values
        _int(v["seed"], "seed", 0)
        _int(v["d"], "d", 2)
        if not isinstance(v["outcome"], str):
            raise ConfigError("outcome must be a string")
        if v["variance_threshold"] is not None and not (
                isinstance(v["variance_threshold"], (int, float)) and v["variance_threshold"] >= 0):
            raise ConfigError("variance_threshold must be a number >= 0")
        if v["features"] not in ("dbm", "all"):
            raise ConfigError("features must be 'dbm' or 'all'")
        if v["synth"] is not None and v["data"]["csv"] is not None:
            raise ConfigError("give either data.csv or synth, not both")
        if v["synth"] is not None:
            self._synth_config()
        b = v["backend"]
        if not isinstance(b, dict) or b.get("kind", "forest") not in BACKENDS:
            raise ConfigError(f"backend.kind must be one of {BACKENDS}")
        try:
            locomp.make_backend(b)
        except TypeError as exc:
            raise ConfigError(f"backend: {exc}") from None
        lo = v["loco"]
        _opt_int(lo["n"], "loco.n", 1)
        _opt_int(lo["m"], "loco.m", 1)
        _int(lo["K"], "loco.K", 1)
        _opt_int(lo["seed"], "loco.seed", 0)
        _int(lo["min_patches"], "loco.min_patches", 1)
        if not 0 < lo["level"] < 1:
            raise ConfigError("loco.level must lie in (0, 1)")
        st = v["stability"]
        _int(st["B"], "stability.B", 1)
        _int(st["P"], "stability.P", 1)
        _int(st["k_max"], "stability.k_max", 1)
        _opt_int(st["K"], "stability.K", 1)
        if not 0 < st["frac"] <= 1:
            raise ConfigError("stability.frac must lie in (0, 1]")
        if st["permute"] is not None and not (isinstance(st["permute"], list)
                                               or isinstance(st["permute"], int)):
            raise ConfigError("stability.permute must be a list of names or a top count")
        rf = st["rf_imp"]
        _int(rf["n_trees"], "stability.rf_imp.n_trees", 1)
        _int(rf["min_leaf"], "stability.rf_imp.min_leaf", 1)
        _opt_int(rf["mtry"], "stability.rf_imp.mtry", 1)
        cv = v["cv"]
        _int(cv["repeats"], "cv.repeats", 1)
        _int(cv["folds"], "cv.folds", 2)
        _int(cv["k"], "cv.k", 1)
        for k in cv["k_list"]:
            _int(k, "cv.k_list entry", 1)
        unknown = [g for g in cv["groupings"] if g not in ev.GROUPING_NAMES]
        if unknown or not cv["groupings"]:
            raise ConfigError(f"cv.groupings must be drawn from {list(ev.GROUPING_NAMES)}")
        for a in cv["ablations"]:
            if not (isinstance(a, list) and a and all(isinstance(c, str) for c in a)):
                raise ConfigError("each cv.ablations entry is a non-empty list of column names")
        if not isinstance(cv["stratify"], bool) or not isinstance(cv["refit_loco_per_fold"], bool):
            raise ConfigError("cv.stratify and cv.refit_loco_per_fold must be booleans")
        try:
            ev.ModelSpec(d=v["d"], **cv["model"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cv.model: {exc}") from None

    def _synth_config(self) -> synth.SynthConfig:
        s = self.values["synth"]
        if not isinstance(s, dict):
            raise ConfigError("synth must be an object")
        s = dict(s)
        try:
            if s.pop("preset", None) == "paper_shaped":
                allowed = {"include_low_variance", "target_censoring", "n_samples"}
                extra = set(s) - allowed
                if extra:
                    raise ConfigError(f"unknown paper_shaped options {sorted(extra)}")
                return synth.paper_shaped_config(self.values["seed"], **s)
            s.setdefault("seed", self.values["seed"])
            return synth.SynthConfig.from_dict(s)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"synth: {exc}") from None

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def loco_seed(self) -> int:
        s = self.values["loco"]["seed"]
        return self.values["seed"] if s is None else s


# ---------------------------------------------------------------- outputs

class Writer:
    """Writes artifacts into ``out_dir`` with the shared metadata block."""

    def __init__(self, out_dir, config: RunConfig, command: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {"survloco_version": __version__, "config_hash": config.hash(),
                     "seed": config["seed"], "command": command, "outcome": config["outcome"],
                     "config": config.values}
        self.written: list[str] = []

    def _lines(self):
        m = self.meta
        return [f"survloco_version: {m['survloco_version']}", f"config_hash: {m['config_hash']}",
                f"seed: {m['seed']}", f"command: {m['command']}", f"outcome: {m['outcome']}",
                "config: " + json.dumps(m["config"], sort_keys=True, separators=(",", ":"))]

    def csv(self, name, rows):
        with open(self.dir / name, "w", newline="") as fh:
            for line in self._lines():
                fh.write(f"# {line}\n")
            csv.writer(fh, lineterminator="\n").writerows(rows)
        self.written.append(name)

    def json(self, name, obj):
        with open(self.dir / name, "w") as fh:
            json.dump({"_meta": self.meta, **obj}, fh, indent=1, sort_keys=True, default=_jsonable)
            fh.write("\n")
        self.written.append(name)

    def svg(self, name, text_fn, **kw):
        with open(self.dir / name, "w") as fh:
            fh.write(text_fn(header="\n".join(self._lines()), **kw))
        self.written.append(name)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ---------------------------------------------------------------- data

def load_data(config: RunConfig) -> tuple[SurvivalDataset, synth.GroundTruth | None]:
    if config["synth"] is not None:
        ds, truth = synth.generate(config._synth_config())
    else:
        data = config["data"]
        if data["csv"] is None:
            raise ConfigError("no data: set data.csv (with data.schema) or synth")
        schema = data["schema"]
        if schema is None:
            raise ConfigError("data.schema is required with data.csv")
        if isinstance(schema, str):
            schema = load_schema(config.path(schema))
        ds, truth = load_csv(config.path(data["csv"]), schema), None
    if config["variance_threshold"] is not None:
        ds = variance_filter(ds, config["variance_threshold"],
                             protected=ds.names_tagged("conventional"))
    return ds, truth


def _scope(ds: SurvivalDataset, config: RunConfig) -> SurvivalDataset:
    """Features LOCO-MP and the stability battery operate on."""
    if config["features"] == "all":
        return ds
    dbm = ds.names_tagged("dbm")
    if not dbm:
        raise ConfigError("features='dbm' but the dataset has no dbm-tagged columns")
    return ds.select(dbm)


def _loco(ds, config: RunConfig, seed: int, workers: int, K=None) -> locomp.OcclusionReport:
    lo = config["loco"]
    grid, _, _ = discretize(ds, config["d"])
    return locomp.run(ds, grid, locomp.make_backend(config["backend"]), n=lo["n"], m=lo["m"],
                      K=K or lo["K"], seed=seed, workers=workers,
                      min_patches=lo["min_patches"], level=lo["level"])


# ---------------------------------------------------------------- commands

def cmd_synth(config: RunConfig, out: Writer, workers: int = 1):
    if config["synth"] is None:
        raise ConfigError("the synth command needs a synth section")
    ds, truth = load_data(config)
    schema = write_csv(ds, out.dir / "dataset.csv", header_lines=out._lines())
    out.written.append("dataset.csv")
    out.json("schema.json", schema.to_dict())
    out.json("ground_truth.json", {
        "informative": list(truth.informative), "coefficients": list(truth.coefficients),
        "horizon": truth.horizon, "dropout_rate": truth.dropout_rate,
        "target_censoring": truth.target_censoring, "realized_censoring": truth.realized_censoring,
        "synth_config": truth.config})


def cmd_loco(config: RunConfig, out: Writer, workers: int = 1):
    ds, _ = load_data(config)
    rep = _loco(_scope(ds, config), config, config.loco_seed(), workers)
    out.csv("occlusion.csv", rep.csv_rows())
    out.json("occlusion.json", rep.to_dict())


def cmd_stability(config: RunConfig, out: Writer, workers: int = 1):
    ds, _ = load_data(config)
    ds = _scope(ds, config)
    st, lo = config["stability"], config["loco"]
    K = st["K"] or lo["K"]
    loco = stability.loco_scorer(locomp.make_backend(config["backend"]), K, config["d"],
                                 lo["n"], lo["m"], workers)
    seed = config["seed"]
    dist = stability.subsample_ranks(ds, loco, st["B"], st["frac"], seed, workers=1)
    out.csv("rank_distribution.csv", dist.long_rows())
    out.csv("rank_table.csv", dist.table_rows())
    k_max = min(st["k_max"], ds.n_features)
    curve = stability.jaccard_curve(dist, k_max)
    out.csv("jaccard.csv", [["k", "mean_jaccard", "median_jaccard"]]
            + [[k, repr(a), repr(b)] for k, a, b in curve])

    rf = st["rf_imp"]
    rfimp = stability.rfimp_scorer(_forest.ForestParams(rf["n_trees"], rf["mtry"], rf["min_leaf"]),
                                   config["d"])
    rdist = stability.subsample_ranks(ds, rfimp, st["B"], st["frac"], seed, workers=workers)
    out.csv("rfimp_rank_distribution.csv", rdist.long_rows())
    cmp = stability.compare_importance(dist, rdist)
    rows = [["feature", "iqr_loco_mp", "iqr_rf_imp"]]
    for j, f in enumerate(cmp["features"]):
        rows.append([f, repr(float(cmp["iqr"]["loco_mp"][j])), repr(float(cmp["iqr"]["rf_imp"][j]))])
    out.csv("rank_iqr.csv", rows)
    out.csv("rank_comparison.csv", cmp["rows"])
    top = [dist.feature_names[j] for j in dist.full_order()[:min(8, ds.n_features)]]
    series = {}
    for f in top:
        j = ds.index_of(f)
        series[f"{f} loco_mp"] = dist.ranks[:, j]
        series[f"{f} rf_imp"] = rdist.ranks[:, j]
    out.svg("rank_boxplot.svg", svg.boxplot, series=series, ylabel="subsample rank",
            title="Subsample ranks: LOCO-MP vs RF-Imp", annotate_median=False)

    permute = st["permute"]
    if permute is None:
        permute = 3
    if isinstance(permute, int):
        permute = [dist.feature_names[j] for j in dist.full_order()[:min(permute, ds.n_features)]]
    for f in permute:
        if f not in ds.feature_names:
            raise ConfigError(f"stability.permute names unknown feature {f!r}")
    res = stability.permutation_test(ds, loco, permute, st["P"], seed,
                                     shared_patches=st["shared_patches"], workers=1)
    rows = [["feature", "original_rank", "p_value", "n_permutations", "n_failed"]]
    long = [["feature", "permutation", "rank"]]
    for r in res:
        rows.append([r.feature, r.original_rank, repr(r.p_value), r.P, len(r.failures)])
        long += [[r.feature, p, rk] for p, rk in enumerate(r.permuted_ranks)]
        edges = np.arange(0.5, ds.n_features + 1.5, max(1, ds.n_features // 20))
        out.svg(f"permutation_{r.feature}.svg", svg.histogram, values=r.permuted_ranks,
                bins=edges, title=f"Permuted ranks of {r.feature}", xlabel="rank",
                markers={"original": r.original_rank})
    out.csv("permutation.csv", rows)
    out.csv("permutation_ranks.csv", long)


def _ranking_for_cv(ds, config: RunConfig, workers):
    cv = config["cv"]
    if cv["ranking"] is not None:
        return locomp.OcclusionReport.from_json(config.path(cv["ranking"]))
    dbm = ds.names_tagged("dbm")
    if not dbm:
        raise ConfigError("top-k groupings need dbm-tagged columns")
    return _loco(ds.select(dbm), config, config.loco_seed(), workers)


def cmd_cv(config: RunConfig, out: Writer, workers: int = 1):
    ds, _ = load_data(config)
    cv = config["cv"]
    model = ev.ModelSpec(d=config["d"], **cv["model"])
    names = cv["groupings"]
    needs_rank = any(n.endswith("top_dbm") for n in names) or cv["k_list"]
    ranking = _ranking_for_cv(ds, config, workers) if needs_rank else None
    if ranking is not None:
        out.csv("ranking.csv", ranking.csv_rows())
    refit = None
    if cv["refit_loco_per_fold"]:
        lo = config["loco"]
        backend = locomp.make_backend(config["backend"])

        def refit(train, seed):
            grid, _, _ = discretize(train, config["d"])
            return locomp.rank(locomp.run(train, grid, backend, n=lo["n"], m=lo["m"], K=lo["K"],
                                          seed=seed, min_patches=lo["min_patches"]))

    kw = dict(repeats=cv["repeats"], folds=cv["folds"], seed=config["seed"],
              stratify=cv["stratify"], workers=workers, loco_refit=refit)
    groupings = ev.make_groupings(ds, ranking, cv["k"], names)
    rep = ev.repeated_cv(ds, groupings, model, **kw)
    out.csv("cindex.csv", rep.csv_rows())
    out.json("cindex_summary.json", rep.summary())
    out.svg("cindex_boxplot.svg", svg.boxplot, series={l: rep.series(l) for l in rep.label_order()},
            title=f"C-index by feature grouping {config['outcome']}".strip(), ylabel="C-index")

    if cv["k_list"]:
        sweep = ev.topk_sweep(ds, ranking, cv["k_list"], model,
                              [n for n in names if n.endswith("top_dbm")] or ["top_dbm"], **kw)
        out.csv("topk_cindex.csv", sweep.csv_rows())
        out.json("topk_summary.json", sweep.summary())
        out.svg("topk_boxplot.svg", svg.boxplot,
                series={l: sweep.series(l) for l in sweep.label_order()},
                title="C-index by number of top DBM features", ylabel="C-index")

    if cv["ablations"]:
        ab = []
        for omit in cv["ablations"]:
            hit = [g for g in groupings if all(c in g.columns for c in omit)]
            if not hit:
                raise ConfigError(f"ablation {omit} matches no grouping")
            ab += [ev.ablate(g, omit) for g in hit]
        arep = ev.repeated_cv(ds, ab, model, **kw)
        out.csv("ablation_cindex.csv", arep.csv_rows())
        out.json("ablation_summary.json", arep.summary())
        out.svg("ablation_boxplot.svg", svg.boxplot,
                series={l: arep.series(l) for l in arep.label_order()},
                title="C-index after covariate omission", ylabel="C-index")


COMMANDS = {"synth": cmd_synth, "loco": cmd_loco, "stability": cmd_stability, "cv": cmd_cv}


# ---------------------------------------------------------------- entry point

def _workers(flag) -> int:
    if flag is not None:
        w = flag
    else:
        env = os.environ.get(WORKERS_ENV)
        try:
            w = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if w < 1:
        raise ConfigError("workers must be >= 1")
    return w


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survloco", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"survloco {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run config")
        s.add_argument("--out-dir", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int, help=f"default: ${WORKERS_ENV} or 1")
        s.add_argument("--k", type=int, help="top-k size for the top_dbm groupings")
        s.add_argument("--backend", choices=BACKENDS)
        s.add_argument("--stratify", dest="stratify", action="store_true", default=None)
        s.add_argument("--no-stratify", dest="stratify", action="store_false")
        s.add_argument("--refit-loco-per-fold", action="store_true", default=None)
    return p


def _fail(code: int, exc: BaseException, **extra) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, **extra}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw, base = None, "."
        if args.config:
            try:
                with open(args.config) as fh:
                    raw = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            base = os.path.dirname(os.path.abspath(args.config))
        config = RunConfig(raw, base).override(
            seed=args.seed, k=args.k, backend=args.backend, stratify=args.stratify,
            refit_loco_per_fold=args.refit_loco_per_fold)
        workers = _workers(args.workers)
        out = Writer(args.out_dir, config, args.command)
        COMMANDS[args.command](config, out, workers)
    except DatasetError as exc:
        return _fail(1, exc, row=exc.row, column=exc.column)
    except (ConfigError, OSError) as exc:
        return _fail(1, exc)
    except CensoringSaturationError as exc:
        return _fail(2, exc, n_skipped=exc.n_skipped, n_patches=exc.n_patches)
    except ConvergenceError as exc:
        return _fail(2, exc, grad_norm=exc.grad_norm)
    except (NoEventsError, ValueError) as exc:
        return _fail(2, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
