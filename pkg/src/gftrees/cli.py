"""Command-line front end: one JSON config in, one canonical JSON report out.

Exit status: 0 when the requested checks pass (or a pure computation
succeeds), 1 when a verdict comes back failing or the solver refuses a
non-generic configuration, 2 for malformed configs or expressions.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import jsonschema

from . import continuation as ct
from . import critical as cr
from . import flow as fl
from . import pipeline as pl
from . import trees as tr
from .expr import ParseError
from .family import FamilyError

log = logging.getLogger("gftrees")

_BOX = {"type": "array", "minItems": 1,
        "items": {"type": "array", "minItems": 2, "maxItems": 2,
                  "items": {"type": "number"}}}

_NUM_OR_NULL = {"type": ["number", "null"]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["gf", "morse-torus"]},
        "label": {"type": "string"},
        "family": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "N", "core", "slope", "inner_box", "outer_box"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
                "core": {"type": "string"},
                "slope": {"type": "array", "items": {"type": "number"}},
                "inner_box": _BOX,
                "outer_box": _BOX,
                "base": {"enum": ["euclidean", "torus"]},
                "stabilize": {"type": "array",
                              "items": {"enum": ["+", "-", 1, -1]}},
                "fpd": {"type": "object", "additionalProperties": False,
                        "required": ["components"],
                        "properties": {"components": {
                            "type": "array", "items": {"type": "string"}}}},
                "label": {"type": "string"},
            },
        },
        "morse": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "f": {"type": "string"},
                "g": {"type": "string"},
                "n": {"type": "integer", "minimum": 1},
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rng": {"type": "integer", "minimum": 0,
                        "maximum": 2 ** 64 - 1},
                "grid_density": {"type": "integer", "minimum": 2},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r0": {"type": "number", "exclusiveMinimum": 0},
                "scan_density": {"type": ["integer", "null"], "minimum": 8},
                "lambda": _NUM_OR_NULL,
                "max_seeds": {"type": "integer", "minimum": 1},
                "seed_scale": {"type": "number", "minimum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
                "time_points": {"type": "integer", "minimum": 2},
                "tol_match": {"type": "number", "exclusiveMinimum": 0},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
                "dedup_radius": {"type": "number", "exclusiveMinimum": 0},
                "cond_cap": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "tolerances": {"type": "object",
                       "additionalProperties": {"type": "number"}},
    },
}


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("%s: invalid JSON at line %d column %d: %s"
                          % (path, e.lineno, e.colno, e.msg))
    except OSError as e:
        raise ConfigError("cannot read config %s: %s" % (path, e))
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "(top level)"
        raise ConfigError("%s: config rejected at %s: %s"
                          % (path, where, e.message))
    mode = cfg.get("mode", "gf")
    if mode == "gf" and "family" not in cfg:
        raise ConfigError("%s: mode 'gf' needs a 'family' section" % path)
    if mode == "morse-torus" and "family" in cfg:
        raise ConfigError("%s: mode 'morse-torus' takes a 'morse' section, "
                          "not a 'family'" % path)
    return cfg


class ConfigError(ValueError):
    pass


def emit(report, args):
    text = pl.canonical_json(report) + "\n"
    if getattr(args, "json", None):
        with open(args.json, "w") as fh:
            fh.write(text)
        log.info("wrote %s", args.json)
    else:
        sys.stdout.write(text)


def _apply_overrides(cfg, args):
    cfg = json.loads(json.dumps(cfg))
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("seeds", {})["rng"] = args.seed
    return cfg


def _finish(report, args, passed=None):
    emit(report, args)
    if passed is None:
        return 0
    if passed and getattr(args, "strict", False):
        warnings = report.get("warnings") or []
        if warnings:
            print("FAIL (strict: %d warnings)" % len(warnings),
                  file=sys.stderr)
            return 1
    print("PASS" if passed else "FAIL", file=sys.stderr)
    return 0 if passed else 1


# -- subcommands ------------------------------------------------------------

def cmd_chords(args):
    cfg = _apply_overrides(load_config(args.config), args)
    run = pl.GFRun(cfg).prepare()
    report = {
        "label": run.family.label,
        "chords": [p.as_dict() for p in run.chords],
        "critical_points_total": len(run.criticals),
        "rho": run.rho,
        "lambda": run.lam,
        "delta_pert": run.bound.delta_pert,
        "config": run.config,
    }
    return _finish(pl._plain(report), args)


def cmd_differential(args):
    cfg = _apply_overrides(load_config(args.config), args)
    run = pl.GFRun(cfg, jobs=args.jobs).prepare()
    tasks = run.delta_tasks()
    results = run.run_tasks(tasks)
    delta = {}
    for t in tasks:
        if results[t]["parity"]:
            delta.setdefault(t[1], []).append(t[2])
    report = {
        "label": run.family.label,
        "chords": [p.as_dict() for p in run.chords],
        "delta": {k: sorted(v) for k, v in delta.items()},
        "delta_counts": {"%s->%s" % (t[1], t[2]): results[t] for t in tasks},
        "config": run.config,
    }
    return _finish(pl._plain(report), args)


def cmd_cohomology(args):
    cfg = _apply_overrides(load_config(args.config), args)
    run = pl.GFRun(cfg, jobs=args.jobs).execute()
    return _finish(run.report(), args, passed=run.algebra["pass"])


def cmd_product(args):
    cfg = _apply_overrides(load_config(args.config), args)
    run = pl.GFRun(cfg, jobs=args.jobs, keep_trees=args.dump_trees).execute()
    report = run.report()
    if args.dump_trees:
        report["trees"] = {
            "%s,%s->%s" % k: [{"meeting": [float(v) for v in t.meeting],
                               "theta": [float(v) for v in t.theta],
                               "residual_norm": float(t.residual_norm),
                               "condition": float(t.condition)}
                              for t in ts]
            for k, ts in sorted(run.trees.items())}
    return _finish(report, args, passed=run.algebra["pass"])


def cmd_verify(args):
    cfg = _apply_overrides(load_config(args.config), args)
    run, report = pl.verify_run(cfg, jobs=args.jobs)
    return _finish(report, args, passed=report["pass"])


def cmd_compare(args):
    cfg = _apply_overrides(load_config(args.config), args)
    chosen = [x for x in ("stabilize", "fpd", "reseed", "isotopy")
              if getattr(args, x) is not None]
    if len(chosen) != 1:
        raise ConfigError("compare needs exactly one of --stabilize, --fpd, "
                          "--reseed, --isotopy")
    which = chosen[0]
    if which == "stabilize":
        signs = [s.strip() for s in args.stabilize.split(",") if s.strip()]
        if not signs or any(s not in ("+", "-") for s in signs):
            raise ConfigError("--stabilize takes a comma list of + and -")
        a, b, verdict = pl.stabilization_compare(cfg, signs, jobs=args.jobs)
        verdict["comparison"] = {"kind": "stabilization", "signs": signs}
    elif which == "fpd":
        a, b, verdict = pl.fpd_compare(cfg, args.fpd, jobs=args.jobs)
        verdict["comparison"] = {"kind": "fiber-twist", "components": args.fpd}
    elif which == "reseed":
        sa, sb = args.reseed
        a, b, verdict = pl.reseed_compare(cfg, sa, sb, jobs=args.jobs)
        verdict["comparison"] = {"kind": "perturbation-reseed",
                                 "seeds": [sa, sb]}
    else:
        cfg2 = _apply_overrides(load_config(args.isotopy), args)
        a, b, verdict = ct.isotopy_compare(cfg, cfg2, jobs=args.jobs)
        verdict["comparison"] = {"kind": "family-path",
                                 "configs": [args.config, args.isotopy]}
    return _finish(verdict, args, passed=verdict["pass"])


def cmd_morse_torus(args):
    if args.config:
        cfg = load_config(args.config)
        if cfg.get("mode", "gf") != "morse-torus":
            raise ConfigError("%s: morse-torus needs mode 'morse-torus'"
                              % args.config)
    else:
        cfg = {"mode": "morse-torus"}
    cfg = _apply_overrides(cfg, args)
    m = cfg.get("morse", {})
    run = pl.MorseRun(f=m.get("f", pl.DEMO_F), g=m.get("g", pl.DEMO_G),
                      n=m.get("n", 2), seed=cfg.get("seeds", {}).get("rng", 0),
                      grid_density=cfg.get("seeds", {}).get("grid_density", 7),
                      solver=cfg.get("solver"),
                      tolerances=cfg.get("tolerances")).execute()
    report = run.report()
    is_demo = (run.f_text, run.g_text, run.n) == (pl.DEMO_F, pl.DEMO_G, 2)
    passed = None
    if is_demo:
        report["demo_checks"] = pl.morse_demo_check(run)
        passed = report["demo_checks"]["pass"]
    return _finish(pl._plain(report), args, passed=passed)


# -- wiring -----------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="gftrees",
        description="Reeb-chord cohomology of linear-at-infinity generating "
                    "families: critical points, flow-line differentials, "
                    "tree-counted products, and invariance checks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the perturbation RNG seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for counting tasks")
        p.add_argument("--json", metavar="PATH", default=None,
                       help="write the report here instead of stdout")
        p.add_argument("--strict", action="store_true",
                       help="treat recorded warnings as failures")

    p = sub.add_parser("chords", help="critical points of the difference "
                                      "function with positive value")
    common(p)
    p.set_defaults(fn=cmd_chords)

    p = sub.add_parser("differential", help="mod-2 flow-line counts")
    common(p)
    p.set_defaults(fn=cmd_differential)

    p = sub.add_parser("cohomology", help="full complex, ring, and identity "
                                          "checks")
    common(p)
    p.set_defaults(fn=cmd_cohomology)

    p = sub.add_parser("product", help="tree-counted products, optionally "
                                       "with tree data")
    common(p)
    p.add_argument("--dump-trees", action="store_true",
                   help="include solved tree geometry in the report")
    p.set_defaults(fn=cmd_product)

    p = sub.add_parser("verify", help="everything checkable about one family")
    common(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("compare", help="invariance checks between two runs")
    common(p)
    p.add_argument("--stabilize", metavar="SIGNS", default=None,
                   help="compare against a stabilized family, e.g. '+' or '+,-'")
    p.add_argument("--fpd", metavar="COMPONENT", nargs="+", default=None,
                   help="compare against a fiber-twisted family (one "
                        "expression per fiber coordinate)")
    p.add_argument("--reseed", metavar=("SEED_A", "SEED_B"), nargs=2,
                   type=int, default=None,
                   help="compare two perturbation seeds of the same family")
    p.add_argument("--isotopy", metavar="CONFIG2", default=None,
                   help="compare with a second family along a convex path")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("morse-torus",
                       help="Morse-theoretic validation mode on the torus "
                            "(built-in demo when no config is given)")
    common(p, config=False)
    p.add_argument("config", nargs="?", default=None,
                   help="optional JSON config with a 'morse' section")
    p.set_defaults(fn=cmd_morse_torus)
    return ap


def main(argv=None):
    level = os.environ.get("GFTREES_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParseError, FamilyError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except (cr.NoChordsError, cr.DegenerateRootError, fl.AmbiguousCountError,
            fl.StiffnessError, tr.NonTransverseError, tr.DimensionError,
            ct.PathError) as e:
        print("%s: %s" % (type(e).__name__, e), file=sys.stderr)
        return 1
    except ValueError as e:
        # config-level rejections raised past the schema (unknown tolerance
        # names, mode mismatches)
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
