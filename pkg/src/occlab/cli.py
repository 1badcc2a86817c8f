"""Command-line front end: ``occlab validate | run | list``.

A run config is a YAML (or JSON) mapping::

    version: 1
    scenario: hyperplane-foliation      # built-in name, or an inline scenario mapping
    overrides:
      seed: 7
      n_paths: 2000
      eps: [0.01, 0.005]
      levels: {lo: -5, hi: 5, spacing: 0.01}
      out: results/
    jobs: 2

Exit codes: 0 all gates pass, 1 gate failure, 2 config or validation error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import yaml

from . import __version__
from .experiments import (BUILTIN, FORMAT_VERSION, Scenario, ScenarioError, builtin, catalog,
                          default_out_dir, gates_csv, run_scenario, validate_scenario)
from .geometry import MANIFOLD_CATALOG
from .paths import MODEL_TAGS

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

CONFIG_KEYS = ("version", "scenario", "overrides", "jobs")
OVERRIDE_KEYS = ("seed", "n_paths", "dt", "horizon", "eps", "levels", "out", "gates", "geometry",
                 "model", "region")
_ESTIMATOR_OVERRIDES = ("seed", "n_paths", "dt", "horizon", "eps", "levels")
_MERGED_OVERRIDES = ("gates", "geometry", "model", "region")

MODEL_NOTES = {
    "standard-BM": "dX = dW",
    "drifted-BM": "dX = mu dt + sigma dW",
    "linear-SDE": "dX = M X dt + sigma dW",
    "singular-radial-drift": "dX = -X/(2|X|^2) dt + dW (clamped Euler)",
    "user-coefficient": "code-only: drift and diffusion callables",
}


class ConfigError(Exception):
    pass


def load_config_text(text: str, source: str = "<config>") -> dict:
    """Parse YAML or JSON; errors carry line and column."""
    if source.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}")
    else:
        try:
            data = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
            raise ConfigError(f"{where}: YAML parse error: {exc.problem or exc}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: YAML parse error: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(data: dict, source: str = "<config>") -> tuple[Scenario, dict]:
    """Scenario with overrides applied, plus run options (``out``, ``jobs``)."""
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(map(repr, unknown))}; "
                          f"allowed: {', '.join(CONFIG_KEYS)}")
    if "version" not in data:
        raise ConfigError(f"{source}: missing 'version' (current format version is "
                          f"{FORMAT_VERSION}); add 'version: {FORMAT_VERSION}'")
    if data["version"] != FORMAT_VERSION:
        raise ConfigError(f"{source}: config format version {data['version']!r} is not supported "
                          f"(expected {FORMAT_VERSION}); migration: move run settings under "
                          f"'overrides' and set 'version: {FORMAT_VERSION}'")
    ref = data.get("scenario")
    if isinstance(ref, str):
        if ref not in BUILTIN:
            raise ConfigError(f"{source}: unknown built-in scenario {ref!r}")
        sc = builtin(ref)
    elif isinstance(ref, dict):
        try:
            sc = Scenario.from_dict(ref)
        except (ScenarioError, TypeError) as exc:
            raise ConfigError(f"{source}: scenario: {exc}")
    else:
        raise ConfigError(f"{source}: 'scenario' must be a built-in name or a mapping")
    ov = data.get("overrides") or {}
    if not isinstance(ov, dict):
        raise ConfigError(f"{source}: 'overrides' must be a mapping")
    unknown = sorted(set(ov) - set(OVERRIDE_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown override key(s) {', '.join(map(repr, unknown))}; "
                          f"allowed: {', '.join(OVERRIDE_KEYS)}")
    opts = {"out": ov.get("out"), "jobs": int(data.get("jobs", 1))}
    apply_overrides(sc, {k: v for k, v in ov.items() if k != "out"})
    return sc, opts


def apply_overrides(sc: Scenario, ov: dict) -> Scenario:
    for k, v in ov.items():
        if v is None:
            continue
        if k in _ESTIMATOR_OVERRIDES:
            sc.estimator[k] = v
        elif k in _MERGED_OVERRIDES:
            if k == "gates" and sc.exploratory:
                setattr(sc, k, copy.deepcopy(v))
            else:
                setattr(sc, k, _merge(getattr(sc, k), v))
        else:
            raise ConfigError(f"unknown override {k!r}")
    return sc


def load_reference(ref: str) -> tuple[Scenario, dict]:
    """Built-in scenario name or path to a YAML/JSON run config."""
    p = Path(ref)
    if p.suffix.lower() in (".yaml", ".yml", ".json") or p.exists():
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}")
        return resolve_config(load_config_text(text, str(p)), str(p))
    if ref in BUILTIN:
        return builtin(ref), {"out": None, "jobs": 1}
    raise ConfigError(f"{ref!r} is neither a config file nor a built-in scenario "
                      f"(see 'occlab list')")


def _parse_eps(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--eps expects comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("--eps needs at least one value")
    return vals


def _cli_overrides(args) -> dict:
    ov = {"seed": args.seed, "n_paths": args.paths, "dt": args.dt, "eps": args.eps}
    return {k: v for k, v in ov.items() if v is not None}


def _print_violations(name, violations, fmt, stream):
    if fmt == "json":
        print(json.dumps({"scenario": name, "violations": violations}, indent=2), file=stream)
    elif fmt == "csv":
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["scenario", "violation"])
        for v in violations:
            w.writerow([name, v])
    else:
        if violations:
            for v in violations:
                print(f"{name}: {v}", file=stream)
        else:
            print(f"{name}: ok", file=stream)


def cmd_validate(args) -> int:
    try:
        sc, _ = load_reference(args.config)
        apply_overrides(sc, _cli_overrides(args))
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    violations = validate_scenario(sc)
    _print_violations(sc.name, violations, args.format, sys.stdout)
    return EXIT_CONFIG if violations else EXIT_OK


def _gate_line(g: dict) -> str:
    status = "PASS" if g["passed"] else "FAIL"
    parts = [f"{status} {g['name']}"]
    if isinstance(g.get("value"), (int, float)) and not isinstance(g["value"], bool):
        parts.append(f"value={g['value']:.6g}")
    if isinstance(g.get("target"), (int, float)) and not isinstance(g["target"], bool):
        parts.append(f"target={g['target']:.6g}")
    if isinstance(g.get("tolerance"), (int, float)):
        parts.append(f"tol={g['tolerance']:.3g}")
    if g.get("detail"):
        parts.append(f"({g['detail']})")
    return " ".join(parts)


def cmd_run(args) -> int:
    try:
        sc, opts = load_reference(args.config)
        apply_overrides(sc, _cli_overrides(args))
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    violations = validate_scenario(sc)
    if violations:
        _print_violations(sc.name, violations, "text", sys.stderr)
        return EXIT_CONFIG
    out = args.out or opts["out"] or default_out_dir()
    jobs = args.jobs or opts["jobs"]
    try:
        rep = run_scenario(sc, out, jobs=jobs)
    except ScenarioError as exc:
        print(f"error: scenario {sc.name!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: scenario {sc.name!r}: cannot write {exc.filename or out}: "
              f"{exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # estimator failures: report with scenario context
        print(f"error: scenario {sc.name!r} ({sc.pipeline}): {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME
    summary = sys.stdout if args.format == "text" else sys.stderr
    for g in rep.gates:
        print(_gate_line(g), file=summary)
    verdict = "exploratory (no gates)" if not rep.gates else (
        "all gates pass" if rep.passed else "gate failure")
    print(f"{sc.name}: {verdict}; artifacts in {Path(out) / sc.name}", file=summary)
    if args.format == "json":
        sys.stdout.write(rep.to_json())
    elif args.format == "csv":
        sys.stdout.write(gates_csv(rep))
    return EXIT_OK if rep.passed else EXIT_GATE


def catalog_entries(tag=None) -> list[dict]:
    entries = [{"kind": "scenario", **e} for e in catalog()]
    entries += [{"kind": "manifold", "name": k, "description": v, "tags": ["topic:geometry"]}
                for k, v in MANIFOLD_CATALOG.items()]
    entries += [{"kind": "model", "name": t, "description": MODEL_NOTES.get(t, ""),
                 "tags": ["topic:models"]} for t in MODEL_TAGS]
    if tag:
        entries = [e for e in entries if tag in e.get("tags", [])]
    return entries


def cmd_list(args) -> int:
    entries = catalog_entries(args.tag)
    if args.format == "json":
        print(json.dumps(entries, indent=2))
    elif args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["kind", "name", "tags", "description"])
        for e in entries:
            w.writerow([e["kind"], e["name"], " ".join(e.get("tags", [])), e["description"]])
    else:
        for kind in ("scenario", "manifold", "model"):
            group = [e for e in entries if e["kind"] == kind]
            if not group:
                continue
            print(f"{kind}s:")
            width = max(len(e["name"]) for e in group)
            for e in group:
                flag = " [exploratory]" if e.get("exploratory") else ""
                tags = f"  {{{', '.join(e['tags'])}}}" if kind == "scenario" else ""
                print(f"  {e['name']:<{width}}  {e['description']}{flag}{tags}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occlab", description="Occupation-measure and local-time "
                                 "experiments for semimartingales near manifolds.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, run=False):
        p.add_argument("config", help="built-in scenario name or YAML/JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int, help="number of paths")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--eps", type=_parse_eps, help="bandwidth(s), comma-separated")
        p.add_argument("--format", choices=("text", "json", "csv"), default="text")
        if run:
            p.add_argument("--out", help="output directory (default $OCCLAB_OUT or ./out)")
            p.add_argument("--jobs", type=int, help="worker threads for path simulation")

    common(sub.add_parser("validate", help="check a scenario without simulating"))
    common(sub.add_parser("run", help="run a scenario and write artifacts"), run=True)
    lp = sub.add_parser("list", help="built-in scenarios, manifolds and models")
    lp.add_argument("--tag", help="only entries carrying this tag")
    lp.add_argument("--format", choices=("text", "json", "csv"), default="text")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    handler = {"validate": cmd_validate, "run": cmd_run, "list": cmd_list}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
