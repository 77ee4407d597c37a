"""Command-line front end.

    dtcbf simulate CONFIG [--out DIR] [--strict]
    dtcbf reproduce PRESET [--out DIR] [--strict]
    dtcbf check-cbf CONFIG [--grid N] [--eps E] [--out FILE]
    dtcbf sweep CONFIG|PRESET --dts 0.01,0.001 [--out FILE]

Exit codes: 0 success, 1 error, 2 safety violation under --strict.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import config, sim
from .cbf import AffineCbf, CbfSet, polytope_inner_check
from .dynamics import LtiSystem
from .lie import (DEFAULT_EPS, DEFAULT_GRID, condition_feasibility, global_relative_degree_affine_lti,
                  singular_set_scan)

log = logging.getLogger("dtcbf")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def execute(scn: sim.Scenario, csv_path: Path, json_path: Path) -> dict:
    """Run ``scn``, write the trajectory CSV and the metrics report, return the report."""
    t0 = time.perf_counter()
    traj, metrics = sim.run(scn)
    duration = time.perf_counter() - t0
    report = {
        "scenario": config.scenario_to_config(scn),
        "metrics": metrics.to_dict(),
        "duration_s": duration,
        "artifacts": {"csv": str(csv_path), "json": str(json_path)},
    }
    _write(csv_path, traj.to_csv())
    _write(json_path, json.dumps(report, indent=2) + "\n")
    return report


def _summary(report: dict) -> str:
    m = report["metrics"]
    name = report["scenario"].get("name") or "scenario"
    rows = [
        ("scenario", name),
        ("min_h", f"{m['min_h']:.6g}"),
        ("violated", str(m["violated"])),
        ("input range", f"[{m['input_min']:.6g}, {m['input_max']:.6g}]"),
        ("chatter_count", str(m["chatter_count"])),
        ("active steps", str(m["active_steps"])),
        ("fallback steps", str(m["fallback_steps"])),
        ("runtime [s]", f"{report['duration_s']:.2f}"),
    ]
    w = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)


def _exit_for(report: dict, strict: bool) -> int:
    return EXIT_VIOLATION if strict and report["metrics"]["violated"] else EXIT_OK


def cmd_simulate(args) -> int:
    doc = config.load(args.config)
    scn = config.build_scenario(doc)
    stem = scn.name or Path(args.config).stem
    outputs = doc.get("outputs", {})
    out = Path(args.out)
    csv_path = Path(outputs.get("csv", out / f"{stem}.csv"))
    json_path = Path(outputs.get("json", out / f"{stem}.json"))
    report = execute(scn, csv_path, json_path)
    print(_summary(report))
    return _exit_for(report, args.strict)


def cmd_reproduce(args) -> int:
    scn = sim.preset(args.preset)
    out = Path(args.out)
    report = execute(scn, out / f"{args.preset}.csv", out / f"{args.preset}.json")
    print(_summary(report))
    return _exit_for(report, args.strict)


def check_cbf(doc, grid: int = DEFAULT_GRID, eps: float = DEFAULT_EPS) -> dict:
    """Offline diagnostics for the system and barrier described by ``doc``."""
    system = config.build_system(doc["system"])
    cbf = config.build_cbf(doc["cbf"])
    box = config.build_box(doc)
    if box is None:
        raise config.ConfigError("box: required for check-cbf")
    probe = config.build_box(doc, "input_probe")
    out: dict = {"grid_per_dim": grid, "eps": eps}

    members = cbf.members
    scans = []
    for i, mem in enumerate(members):
        entry = singular_set_scan(system, mem, box, grid, eps).to_dict()
        if isinstance(mem, AffineCbf) and isinstance(system, LtiSystem):
            entry["relative_degree"] = _degree(global_relative_degree_affine_lti(system, mem, eps).s)
        else:
            entry["relative_degree"] = 1 if entry["n_singular"] == 0 else "local (>1 on singular set)"
        entry["member"] = i
        scans.append(entry)
    out["singular_set"] = scans[0] if len(scans) == 1 else scans

    out["condition_feasibility"] = condition_feasibility(
        system, cbf, box, grid, config.build_gamma(doc),
        None if probe is None else probe.lower, None if probe is None else probe.upper)

    outer = config.build_outer(doc)
    if isinstance(cbf, CbfSet) and outer is not None:
        out["polytope_inner_check"] = polytope_inner_check(cbf, outer, box, grid).to_dict()
    return out


def _degree(s):
    return "undetermined" if s is None else s


def cmd_check_cbf(args) -> int:
    doc = config.load(args.config)
    result = check_cbf(doc, args.grid, args.eps)
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


SWEEP_COLUMNS = ("min_h", "violated", "input_min", "input_max", "total_variation",
                 "chatter_count", "steps_near_singular", "active_steps", "fallback_steps")


def sweep_table(scn: sim.Scenario, dts) -> str:
    lines = [",".join(("dt",) + SWEEP_COLUMNS)]
    for dt, m in zip(dts, sim.dt_sweep(scn, dts)):
        d = m.to_dict()
        cells = [f"{dt:.9g}"]
        for c in SWEEP_COLUMNS:
            v = d[c]
            cells.append(str(int(v)) if isinstance(v, (bool, int)) else f"{v:.9g}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _parse_dts(text: str) -> list[float]:
    try:
        dts = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dts: not a comma-separated list of numbers: {text!r}")
    if not dts or any(not dt > 0 for dt in dts):
        raise argparse.ArgumentTypeError("--dts: need one or more positive sampling times")
    return dts


def cmd_sweep(args) -> int:
    target = args.config
    if target in sim.PRESETS and not Path(target).exists():
        scn = sim.preset(target)
    else:
        scn = config.build_scenario(config.load(target))
    text = sweep_table(scn, args.dts)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors must not collide with the violation exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dtcbf", description="Discrete-time CBF safety filter experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a scenario config")
    p.add_argument("config")
    p.add_argument("--out", default="results")
    p.add_argument("--strict", action="store_true", help="exit 2 if the safe set is violated")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", help="run a built-in case-study preset")
    p.add_argument("preset", help=", ".join(sim.PRESETS))
    p.add_argument("--out", default="results")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("check-cbf", help="singular-set, relative-degree and feasibility diagnostics")
    p.add_argument("config")
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_cbf)

    p = sub.add_parser("sweep", help="rerun a scenario at several sampling times")
    p.add_argument("config", help="config path or preset name")
    p.add_argument("--dts", type=_parse_dts, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (config.ConfigError, KeyError, sim.SimulationError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
