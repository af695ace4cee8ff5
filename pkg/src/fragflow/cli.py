"""``fragflow`` command-line entry point.

Subcommands: ``evolve``, ``trace``, ``frag``, ``flow``, ``robust``, ``report``.

Experiment config (JSON)::

    {
      "seed": 1,                          # required unless --seed is given
      "brain": "markov" | "rnn",          # default "markov"
      "task": {"name": "nback" | "blockcatch", ...task fields},
      "ea": {...EaConfig fields except seed},
      "analysis": {"threshold": 0.99, "threshold_mode": "fraction",
                   "sizes": [1, 2, 3], "include_full": true,
                   "window": 0.25, "mutants": 100},
      "out": "runs/demo",
      "workers": 1
    }

``FRAGFLOW_OUT`` and ``FRAGFLOW_WORKERS`` override ``out`` and ``workers``.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import fnmatch
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .brains import ConfigurationError, brain_from_dict, decode
from .evolve import EaConfig, run_evolution, write_run
from .flowgraph import build_flow_graph, check_dot, emit_dot
from .fragmentation import (EnumerationSpec, Threshold, fragmentation,
                            fragmentation_matrix, serialize_matrix)
from .infotheory import UsageError
from .robustness import (ReplicateResult, UndefinedOffsetError,
                         complexity_vs_robustness, replicate_result)
from .tasks import Trace, evaluate, task_config_from_dict

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class AnalysisConfig:
    """``sizes``: list of ints, ``"all"`` for the power set, or ``None`` for
    the default ``[1, 2, 3]`` clipped to the element count."""

    threshold: float = 0.99
    threshold_mode: str = "fraction"
    sizes: list | str | None = None
    include_full: bool = True
    window: float | None = None
    mutants: int = 100
    max_elements: int = 20

    def thresh(self) -> Threshold:
        return Threshold(float(self.threshold), self.threshold_mode)

    def check(self) -> None:
        """Raise ValueError on any unusable setting, before work starts."""
        self.thresh()
        self.enumeration()
        if self.window is not None and not 0.0 < float(self.window) <= 1.0:
            raise ValueError(f"window must be in (0, 1], got {self.window}")
        if int(self.mutants) < 1:
            raise ValueError("mutants must be >= 1")

    def enumeration(self, n_elements: int | None = None) -> EnumerationSpec:
        if self.sizes == "all":
            sizes = None
        elif self.sizes is None:
            sizes = (1, 2, 3) if n_elements is None else tuple(
                s for s in (1, 2, 3) if s <= n_elements)
        elif isinstance(self.sizes, list):
            sizes = tuple(int(s) for s in self.sizes)
        else:
            raise ValueError(f"bad sizes {self.sizes!r}")
        return EnumerationSpec(sizes, bool(self.include_full),
                               int(self.max_elements))


@dataclass
class ExperimentConfig:
    seed: int
    brain: str = "markov"
    task: dict = field(default_factory=lambda: {"name": "nback"})
    ea: dict = field(default_factory=dict)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    out: str = "fragflow-out"
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        if seed is not None:
            d["seed"] = seed
        if d.get("seed") is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        a = d.get("analysis", {})
        akeys = {f.name for f in fields(AnalysisConfig)}
        if not isinstance(a, dict) or set(a) - akeys:
            raise ConfigError(f"bad analysis section: {a!r}")
        d["analysis"] = AnalysisConfig(**a)
        if os.environ.get("FRAGFLOW_OUT"):
            d["out"] = os.environ["FRAGFLOW_OUT"]
        if os.environ.get("FRAGFLOW_WORKERS"):
            d["workers"] = _int_env("FRAGFLOW_WORKERS")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.brain not in ("markov", "rnn"):
            raise ConfigError(f"unknown brain kind {self.brain!r}")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.task_config()
            self.ea_config()
            self.analysis.check()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def task_config(self):
        t = dict(self.task)
        if t.get("name") == "nback":
            t.setdefault("seed", self.seed)
        return task_config_from_dict(t)

    def ea_config(self) -> EaConfig:
        e = dict(self.ea)
        if "seed" in e:
            raise ConfigError("set the seed at the top level, not under 'ea'")
        return EaConfig(seed=self.seed, **e)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d


def _int_env(name: str) -> int:
    try:
        return int(os.environ[name])
    except ValueError:
        raise ConfigError(f"{name} must be an integer") from None


def load_config(path: str | None, seed: int | None = None) -> ExperimentConfig:
    d = {}
    if path is not None:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(d, seed)


# -- helpers -------------------------------------------------------------------

def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _load_trace(path: str) -> Trace:
    try:
        trace = Trace.load(path)
    except (OSError, ValueError, IndexError) as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from exc
    if "lifetime" not in trace.columns:
        raise DataError(f"{path} is not a trace (no lifetime column)")
    return trace


def _write(path: str, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def _select(columns: list, patterns: str) -> list:
    chosen = []
    for pat in patterns.split(","):
        hits = [c for c in columns if fnmatch.fnmatchcase(c, pat.strip())]
        if not hits:
            raise DataError(f"no trace column matches {pat!r}")
        chosen.extend(h for h in hits if h not in chosen)
    return chosen


def _parse_sizes(text: str):
    sizes, full = [], False
    for tok in text.split(","):
        tok = tok.strip()
        if tok == "full":
            full = True
        elif tok == "all":
            return "all", True
        else:
            try:
                sizes.append(int(tok))
            except ValueError:
                raise ConfigError(f"bad --sizes entry {tok!r}") from None
    return sizes, full


def _analysis(args) -> AnalysisConfig:
    """Analysis settings from an optional config, overridden by flags."""
    a = AnalysisConfig()
    if args.config:
        try:
            with open(args.config) as fh:
                a = AnalysisConfig(**json.load(fh).get("analysis", {}))
        except (OSError, json.JSONDecodeError, TypeError, AttributeError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
    if getattr(args, "threshold", None) is not None:
        a.threshold = args.threshold
    if getattr(args, "threshold_mode", None) is not None:
        a.threshold_mode = args.threshold_mode
    if getattr(args, "sizes", None) is not None:
        a.sizes, a.include_full = _parse_sizes(args.sizes)
    if getattr(args, "window", None) is not None:
        a.window = args.window
    try:
        a.check()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return a


def _workers(args, default: int = 1) -> int:
    if os.environ.get("FRAGFLOW_WORKERS"):
        return _int_env("FRAGFLOW_WORKERS")
    return args.workers if args.workers is not None else default


def _out(args, default: str) -> str:
    return os.environ.get("FRAGFLOW_OUT") or args.out or default


# -- commands ------------------------------------------------------------------

def cmd_evolve(args) -> int:
    cfg = load_config(args.config, args.seed)
    if args.out:
        cfg.out = args.out
    if args.workers is not None and not os.environ.get("FRAGFLOW_WORKERS"):
        cfg.workers = args.workers
    task = cfg.task_config()
    ea = cfg.ea_config()
    history = run_evolution(ea, task, cfg.brain, workers=cfg.workers)
    paths = write_run(cfg.out, history, ea, task, cfg.brain)
    best = float(history.fitness[-1].max())
    print(f"final best fitness {best!r}")
    for role in sorted(paths):
        print(f"{role}: {paths[role]}")
    return EXIT_OK


def _task_for(args):
    if args.config:
        return load_config(args.config, args.seed).task_config()
    if args.task is None:
        raise ConfigError("trace needs --config or --task")
    d = {"name": args.task}
    if args.task == "nback":
        if args.seed is None:
            raise ConfigError("a seed is required for nback traces")
        d["seed"] = args.seed
    return task_config_from_dict(d)


def cmd_trace(args) -> int:
    task = _task_for(args)
    dump = _read_json(args.brain)
    try:
        brain = brain_from_dict(dump)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad brain dump {args.brain}: {exc}") from exc
    try:
        fitness, trace = evaluate(brain, task)
    except ConfigurationError as exc:
        raise DataError(str(exc)) from exc
    out = _out(args, "trace.csv")
    _write(out, trace.to_csv())
    print(f"fitness {fitness!r}, {trace.n_rows} rows -> {out}")
    return EXIT_OK


def cmd_frag(args) -> int:
    a = _analysis(args)
    trace = _load_trace(args.trace)
    feats = _select(trace.columns, args.features or "f_*")
    elems = _select(trace.columns, args.elements or "t0_m*")
    table = trace.to_table(feats + elems)
    features = [(k,) for k in range(len(feats))]
    elements = [(len(feats) + k,) for k in range(len(elems))]
    try:
        m = fragmentation_matrix(table, features, elements,
                                 a.enumeration(len(elements)),
                                 normalize=not args.raw, feature_names=feats,
                                 element_names=elems, workers=_workers(args))
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc
    prefix = _out(args, "matrix")
    _write(prefix + ".csv", serialize_matrix(m, "csv"))
    _write(prefix + ".json", serialize_matrix(m, "json"))
    # Exact fragmentation, independent of which sizes were materialized.
    for name, f in zip(feats, features):
        res = fragmentation(table, f, elements, a.thresh())
        label = "-" if res.size is None else str(res.size)
        wit = ";".join("+".join(elems[k] for k in w) for w in res.witnesses)
        print(f"{name}\tF={label}\t{wit}")
    return EXIT_OK


def _flow(trace: Trace, connectome, a: AnalysisConfig, window, workers):
    return build_flow_graph(trace.to_table(), trace.t1_nodes(),
                            trace.t0_nodes(), connectome=connectome,
                            threshold=a.thresh(), window=window,
                            workers=workers)


def cmd_flow(args) -> int:
    a = _analysis(args)
    trace = _load_trace(args.trace)
    connectome = None
    if args.brain:
        dump = _read_json(args.brain)
        try:
            connectome = {tuple(e) for e in dump["connectome"]}
        except (KeyError, TypeError) as exc:
            raise DataError(f"brain dump lacks a connectome: {exc}") from exc
    prefix = _out(args, "flow")
    workers = _workers(args)
    variants = [("", None)]
    if a.window is not None:
        variants.append((f".late{a.window:g}", a.window))
    for suffix, window in variants:
        try:
            graph = _flow(trace, connectome, a, window, workers)
        except UsageError as exc:
            raise ConfigError(str(exc)) from exc
        dot = emit_dot(graph, os.path.basename(prefix) + suffix)
        check_dot(dot)
        _write(prefix + suffix + ".dot", dot)
        _write(prefix + suffix + ".json", graph.to_json())
        print(f"{prefix + suffix}: complexity {graph.complexity}")
    return EXIT_OK


def _lod_replicate(path: str, a: AnalysisConfig, n: int, seed: int,
                   workers: int, ea: EaConfig) -> ReplicateResult:
    lod = _read_json(path)
    try:
        genome = np.asarray(lod["genome"], dtype=np.uint8)
        kind = lod["brain"]
        task = task_config_from_dict(lod["task"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad LOD dump {path}: {exc}") from exc
    brain = decode(genome, task.io, kind)
    _, trace = evaluate(brain, task)
    graph = _flow(trace, brain.connectome(), a, None, workers)
    name = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
    try:
        return replicate_result(name, genome, task, kind, graph.complexity,
                                n=n, seed=seed, ea=ea)
    except UndefinedOffsetError as exc:
        raise DataError(str(exc)) from exc


def _results_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "baseline", "mean_mutant", "offset", "complexity",
                "perfect"])
    for r in results:
        w.writerow([r.replicate, repr(r.baseline), repr(r.mean_mutant),
                    repr(r.offset), r.complexity, int(r.perfect)])
    return buf.getvalue()


def _write_report(out: str, results) -> None:
    _write(os.path.join(out, "replicates.json"),
           json.dumps([asdict(r) for r in results], indent=1, sort_keys=True)
           + "\n")
    _write(os.path.join(out, "replicates.csv"), _results_csv(results))
    if len(results) >= 2:
        report = complexity_vs_robustness(results)
        _write(os.path.join(out, "report.json"), report.to_json())
        _write(os.path.join(out, "report.csv"), report.to_csv())
        _write(os.path.join(out, "points.csv"), report.points_csv())
        for name, f in (("all", report.fit_all), ("perfect", report.fit_perfect)):
            if f.degenerate:
                print(f"fit[{name}]: n={f.n} degenerate")
            else:
                print(f"fit[{name}]: n={f.n} slope={f.slope!r} "
                      f"intercept={f.intercept!r} r={f.r!r}")


def cmd_robust(args) -> int:
    a = _analysis(args)
    ea = EaConfig()
    seed = args.seed
    if args.config:
        # Mutants use the configured mutation rates.
        cfg = load_config(args.config, seed)
        seed, ea = cfg.seed, cfg.ea_config()
    if seed is None:
        raise ConfigError("a seed is required (--seed or config)")
    n = args.n if args.n is not None else a.mutants
    if n < 1:
        raise ConfigError("--n must be >= 1")
    results = [_lod_replicate(p, a, n, seed, _workers(args), ea)
               for p in args.lod]
    for r in results:
        print(f"{r.replicate}: baseline={r.baseline!r} offset={r.offset!r} "
              f"complexity={r.complexity}")
    _write_report(_out(args, "robust"), results)
    return EXIT_OK


def cmd_report(args) -> int:
    results = []
    for path in args.results:
        data = _read_json(path)
        recs = data if isinstance(data, list) else data.get("replicates", [])
        try:
            results.extend(ReplicateResult(**r) for r in recs)
        except TypeError as exc:
            raise DataError(f"bad replicate record in {path}: {exc}") from exc
    if len(results) < 2:
        raise DataError("report needs at least two replicates")
    _write_report(_out(args, "report"), results)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fragflow", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, analysis=False):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")
        if analysis:
            sp.add_argument("--threshold", type=float)
            sp.add_argument("--threshold-mode", choices=("fraction", "bits"))
            sp.add_argument("--sizes", help="comma list of sizes, 'full', or 'all'")
            sp.add_argument("--window", type=float)

    sp = sub.add_parser("evolve", help="run one evolution replicate")
    common(sp)
    sp.set_defaults(func=cmd_evolve)

    sp = sub.add_parser("trace", help="record a brain's state trace")
    common(sp)
    sp.add_argument("brain", help="brain dump JSON")
    sp.add_argument("--task", choices=("nback", "blockcatch"))
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("frag", help="fragmentation matrix from a trace")
    common(sp, analysis=True)
    sp.add_argument("trace")
    sp.add_argument("--features", help="column globs, default f_*")
    sp.add_argument("--elements", help="column globs, default t0_m*")
    sp.add_argument("--raw", action="store_true", help="cells in bits")
    sp.set_defaults(func=cmd_frag)

    sp = sub.add_parser("flow", help="flow graph from a trace")
    common(sp, analysis=True)
    sp.add_argument("trace")
    sp.add_argument("--brain", help="brain dump for connectome pruning")
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("robust", help="mutation offsets for LOD dumps")
    common(sp, analysis=True)
    sp.add_argument("lod", nargs="+")
    sp.add_argument("--n", type=int, help="mutants per agent (default 100)")
    sp.set_defaults(func=cmd_robust)

    sp = sub.add_parser("report", help="aggregate replicate results")
    sp.add_argument("results", nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, UsageError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
