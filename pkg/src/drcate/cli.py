"""Command-line front end: ``simulate``, ``analyze`` and ``univariate``.

Settings resolve as defaults, then ``--config`` file, then flags.  Every CSV
starts with ``# key=value`` lines echoing the resolved settings, and each
run writes ``manifest.json`` listing its outputs with SHA-256 digests.
Passing an output file back through ``--config`` reruns it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 too many failed
replicates.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .cate import BasisSpec
from .dataset import Schema, _read_numeric_table, load_csv
from .errors import ConfigError, DrcateError
from .nuisance import import_external_draws
from .pipeline import CROSSFIT_SUFFIX, MethodSettings, run_method, univariate_curves
from .simlab import ExperimentFailure, ScenarioConfig, frame_to_csv, run_campaign, \
    run_experiment

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILURES = 0, 1, 2, 3

_SIM, _ANA, _UNI = "simulate", "analyze", "univariate"
_ALL = (_SIM, _ANA, _UNI)


def _csv_list(s):
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# name: (type, default, commands, help); None default means required or unset
OPTIONS = {
    "scenario": (str, "linear", (_SIM,), "linear | nonlinear | highdim | nonlinear_tau"),
    "n": (_csv_list, ("500",), (_SIM,), "sample size(s), comma separated"),
    "p": (int, None, (_SIM,), "confounder count (default 10; 2n for highdim)"),
    "replicates": (int, 200, (_SIM,), "replicates per sample size"),
    "n_query": (int, 100, (_SIM,), "random query locations per replicate"),
    "query": (str, None, _ALL, "simulate: random | fixed | observed; analyze: observed | file"),
    "query_file": (str, None, (_ANA,), "CSV of modifier values for --query file"),
    "data": (str, None, (_ANA, _UNI), "input CSV with a header row"),
    "outcome": (str, None, (_ANA, _UNI), "outcome column"),
    "treatment": (_csv_list, None, (_ANA, _UNI), "treatment column(s)"),
    "confounders": (_csv_list, None, (_ANA, _UNI), "confounder columns"),
    "modifiers": (_csv_list, None, (_ANA, _UNI), "modifier columns (default: confounders)"),
    "dichotomize": (_bool, False, (_ANA, _UNI), "dichotomize the treatment column(s)"),
    "covariates": (_csv_list, None, (_UNI,), "modifiers to draw curves for (default all)"),
    "grid_points": (int, 100, (_UNI,), "grid size per curve"),
    "external_draws": (_csv_list, None, (_ANA, _UNI), "p1,m1,m0 draw files for DR-External"),
    "export_zbar": (_bool, False, (_ANA,), "also write posterior-mean pseudo-outcomes"),
    "methods": (_csv_list, ("DR-Linear",), _ALL, "comma-separated method names"),
    "crossfit": (_bool, False, (_SIM, _ANA), "use two-fold cross-fitting for DR methods"),
    "basis": (str, None, (_SIM, _ANA), "second stage: linear | spline"),
    "draws": (int, 500, _ALL, "posterior draws B"),
    "burnin": (int, 500, _ALL, "burn-in iterations"),
    "resamples": (int, 250, _ALL, "bootstrap resamples M"),
    "seed": (int, 0, _ALL, "master seed"),
    "clip": (float, 0.01, _ALL, "propensity clip bound"),
    "spline_df": (int, 3, _ALL, "natural spline degrees of freedom"),
    "level": (float, 0.95, _ALL, "confidence level"),
}
# flags that change nothing in the output and are kept out of the echo
_RUNTIME = {"out": (str, "drcate-out", _ALL, "output directory"),
            "threads": (int, 1, _ALL, "worker processes")}
_REQUIRED = {_ANA: ("data", "outcome", "treatment", "confounders"),
             _UNI: ("data", "outcome", "treatment", "confounders")}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drcate", description="Doubly robust CATE estimation with "
                     "posterior draws of the nuisance models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in _ALL:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="flat key=value file (or a previous output CSV)")
        for name, (typ, default, cmds, hlp) in {**OPTIONS, **_RUNTIME}.items():
            if cmd not in cmds:
                continue
            flag = "--" + name.replace("_", "-")
            if typ is _bool:
                sp.add_argument(flag, dest=name, action="store_const", const=True,
                                default=argparse.SUPPRESS, help=hlp)
            else:
                sp.add_argument(flag, dest=name, default=argparse.SUPPRESS, help=hlp)
    return parser


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` lines are comments unless they hold a
    ``key=value`` pair, so an output header can be read back directly."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key = body.split("=", 1)[0].strip()
            if "=" in body and (key.replace("-", "_") in OPTIONS or key == "command"):
                line = body
            else:
                continue
        elif path.suffix == ".csv":
            break
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, cli: dict, config_path=None) -> tuple[dict, dict]:
    """Merge defaults, config file and flags; returns ``(settings, runtime)``."""
    from_file = read_config(config_path) if config_path else {}
    if from_file.pop("command", command) != command:
        raise UsageError(f"config file is for a different command than {command!r}")
    resolved, runtime = {}, {}
    for table, dest in ((OPTIONS, resolved), (_RUNTIME, runtime)):
        for name, (typ, default, cmds, _) in table.items():
            if command not in cmds:
                continue
            raw = cli.get(name, from_file.pop(name, None))
            if raw is None or raw == "None":
                dest[name] = default
                continue
            try:
                dest[name] = typ(raw)
            except ValueError:
                raise UsageError(f"invalid value {raw!r} for '{name}'") from None
    if from_file:
        raise UsageError(f"unknown config key '{sorted(from_file)[0]}' for {command}")
    for key in _REQUIRED.get(command, ()):
        if resolved.get(key) in (None, ()):
            raise UsageError(f"missing required setting '{key}'")
    return resolved, runtime


def _echo(command: str, settings: dict) -> dict:
    out = {"command": command}
    for k, v in settings.items():
        out[k] = ",".join(v) if isinstance(v, tuple) else v
    return out


def _methods(settings) -> tuple:
    methods = settings["methods"]
    if settings.get("crossfit"):
        methods = tuple(m if m.endswith(CROSSFIT_SUFFIX) or not m.startswith("DR-")
                        or m == "DR-External" else m + CROSSFIT_SUFFIX for m in methods)
    return methods


def _method_settings(s, default_basis="linear") -> MethodSettings:
    basis = s.get("basis") or default_basis
    try:
        return MethodSettings(draws=s["draws"], burnin=s["burnin"], resamples=s["resamples"],
                              clip=s["clip"], level=s["level"],
                              basis=BasisSpec(basis, s["spline_df"]))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _write(path: Path, text: str, outputs: dict):
    path.write_text(text, encoding="utf-8")
    outputs[path.name] = hashlib.sha256(text.encode("utf-8")).hexdigest()


def _manifest(out: Path, echo: dict, outputs: dict):
    doc = {"config": echo, "outputs": dict(sorted(outputs.items()))}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def cmd_simulate(s: dict, runtime: dict) -> int:
    query = s["query"] or "random"
    sizes = [int(n) for n in s["n"]]
    try:
        cfg = ScenarioConfig(
            scenario=s["scenario"], n=sizes[0], p=s["p"], replicates=s["replicates"],
            query=query, n_query=s["n_query"], methods=_methods(s), seed=s["seed"],
            draws=s["draws"], burnin=s["burnin"], resamples=s["resamples"], clip=s["clip"],
            spline_df=s["spline_df"], basis=s["basis"] or "auto", level=s["level"])
        for n in sizes[1:]:
            ScenarioConfig(**{**cfg.echo(), "methods": cfg.methods, "n": n,
                              "p": s["p"]})
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    s = {**s, "query": query, "basis": cfg.basis_spec.kind,
         "p": cfg.p if len(sizes) == 1 or cfg.scenario != "highdim" else None}
    out = Path(runtime["out"])
    echo = _echo(_SIM, s)
    try:
        if len(sizes) == 1:
            exp = run_experiment(cfg, workers=runtime["threads"])
        else:
            exp = run_campaign(cfg, sizes, workers=runtime["threads"])
    except ExperimentFailure as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "failures.csv").write_text(frame_to_csv(exc.failures, echo), encoding="utf-8")
        print(f"drcate: {exc}", file=sys.stderr)
        summary = exc.failures.groupby("method").replicate.nunique()
        for method, count in summary.items():
            print(f"  {method}: {count} failed replicate(s)", file=sys.stderr)
        return EXIT_FAILURES
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    _write(out / "records.csv", frame_to_csv(exp.records, echo), outputs)
    _write(out / "report.csv", frame_to_csv(exp.report.long(), echo), outputs)
    _write(out / "failures.csv", frame_to_csv(exp.failures, echo), outputs)
    _manifest(out, echo, outputs)
    print(exp.report.table.to_string(index=False))
    return EXIT_OK


def _load(s: dict):
    schema = Schema(s["outcome"], s["treatment"], s["confounders"], s["modifiers"])
    ds = load_csv(s["data"], schema, dichotomize_treatment=s["dichotomize"] or None)
    external = None
    if s["external_draws"]:
        if len(s["external_draws"]) != 3:
            raise UsageError("external_draws needs three files: p1,m1,m0")
        external = import_external_draws(*s["external_draws"], clip=s["clip"])
    return ds, external


def cmd_analyze(s: dict, runtime: dict) -> int:
    settings = _method_settings(s)
    query_mode = s["query"] or "observed"
    if query_mode not in ("observed", "file"):
        raise UsageError("analyze supports --query observed or --query file")
    ds, external = _load(s)
    query, ids = None, np.arange(ds.n)
    if query_mode == "file":
        if not s["query_file"]:
            raise UsageError("missing required setting 'query_file'")
        table = _read_numeric_table(Path(s["query_file"]), list(ds.v_names[1:]))
        cols = [table[c] for c in ds.v_names[1:]]
        rows = len(cols[0]) if cols else 0
        query = np.column_stack([np.ones(rows)] + cols)
        ids = np.arange(rows)
    out = Path(runtime["out"])
    out.mkdir(parents=True, exist_ok=True)
    echo = _echo(_ANA, s)
    outputs = {}
    cache: dict = {}
    for method in _methods(s):
        res = analyze_dataset(ds, method, settings, s["seed"], query=query, external=external,
                              cache=cache)
        ci = res.interval
        order = np.argsort(ci.point, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        frame = pd.DataFrame({"location": ids, "sorted_index": rank, "estimate": ci.point,
                              "se": ci.se, "lower": ci.lower, "upper": ci.upper,
                              "bootstrap_term": res.bootstrap_term,
                              "posterior_term": res.posterior_term, "method": method})
        _write(out / f"cate_{method}.csv", frame_to_csv(frame, echo), outputs)
        if s["export_zbar"] and res.z_bar is not None:
            _write(out / f"zbar_{method}.csv",
                   frame_to_csv(pd.DataFrame({"unit": np.arange(ds.n), "z_bar": res.z_bar}),
                                echo), outputs)
        print(f"{method}: {ci.point.size} locations, mean estimate {ci.point.mean():.4f}")
    _manifest(out, echo, outputs)
    return EXIT_OK


def analyze_dataset(ds, method: str, settings: MethodSettings, seed: int, *, query=None,
                    external=None, cache=None):
    """The ``analyze`` computation for one method, callable in-process."""
    return run_method(method, ds, query, settings, np.random.SeedSequence(seed),
                      external=external, cache=cache)


def cmd_univariate(s: dict, runtime: dict) -> int:
    settings = _method_settings({**s, "basis": "spline"}, "spline")
    ds, external = _load(s)
    covariates = s["covariates"] or ds.v_names[1:]
    out = Path(runtime["out"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    echo = _echo(_UNI, s)
    for method in s["methods"]:
        curves = univariate_curves(method, ds, covariates, settings,
                                   np.random.SeedSequence(s["seed"]),
                                   points=s["grid_points"], external=external)
        for c in curves:
            ci = c.interval
            frame = pd.DataFrame({"grid": c.grid, "estimate": ci.point, "se": ci.se,
                                  "lower": ci.lower, "upper": ci.upper})
            header = {**echo, "modifier": c.modifier, "curve_basis": c.basis}
            _write(out / f"univariate_{method}_{c.modifier}.csv",
                   frame_to_csv(frame, header), outputs)
            note = "" if c.basis == "spline" else " (linear fallback)"
            print(f"{method} {c.modifier}: {c.grid.size} grid points{note}")
    _manifest(out, echo, outputs)
    return EXIT_OK


_COMMANDS = {_SIM: cmd_simulate, _ANA: cmd_analyze, _UNI: cmd_univariate}


def main(argv=None) -> int:
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command")
        config = args.pop("config", None)
        settings, runtime = resolve(command, args, config)
        if runtime["threads"] < 1:
            raise UsageError("threads must be >= 1")
        return _COMMANDS[command](settings, runtime)
    except ConfigError as exc:
        print(f"drcate: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DrcateError, OSError) as exc:
        print(f"drcate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
