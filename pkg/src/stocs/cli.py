"""Command line: single-mode STOCS runs, the vanilla full-instantiation
baseline, planner batches, trajectory verification, stable poses and
report tables.

Exit codes: 0 success, 2 not converged / not found / failed check,
3 infeasible, 4 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import planner as pl
from . import trajopt
from .geometry import NoStablePose, stable_poses
from .output import (dumps_report, planner_table, read_trajectory_csv, stocs_table, trajectory_svg,
                     tree_svg, write_trajectory_csv)
from .scenario import ParseError, ValidationError, load_scenario
from .verify import record_from_result, verify

log = logging.getLogger("stocs")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INFEASIBLE, EXIT_INPUT = 0, 2, 3, 4


class InputError(Exception):
    pass


def _exit_for(status: str) -> int:
    if status in (trajopt.CONVERGED, pl.FOUND):
        return EXIT_OK
    if status == trajopt.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_NOT_CONVERGED


def _load(path):
    try:
        return load_scenario(path)
    except FileNotFoundError as e:
        raise InputError(f"scenario not found: {path}") from e
    except (ParseError, ValidationError) as e:
        raise InputError(f"{path}: {e}") from e


def _mode(sc, name):
    if not sc.modes:
        return None
    if name is None:
        return sc.modes[0]
    try:
        return sc.mode(name)
    except KeyError as e:
        raise InputError(str(e.args[0])) from e


def _write_json(path: Path, d: dict):
    path.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- runs
def run_stocs(scenario, mode, settings: trajopt.StocsSettings, out_dir, source: str = "",
              vanilla: bool = False, **vanilla_kw) -> dict:
    """One STOCS (or vanilla) run; writes trajectory.csv, trajectory.svg,
    report.json and timing.json into ``out_dir``.  Returns the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if vanilla:
        res = trajopt.run_vanilla(scenario, mode, scenario.q_init, scenario.q_goal, settings, **vanilla_kw)
    else:
        res = trajopt.run(scenario, mode, scenario.q_init, scenario.q_goal, settings)
    rep = {"kind": "vanilla" if vanilla else "stocs", "scenario": scenario.name, "mode": mode.name if mode else "",
           "status": res.status, "outer_iters": res.stats.outer_iters,
           "avg_index_points": round(res.stats.avg_index_points, 6), "n_points": scenario.object.n_points,
           "newton_iters": res.stats.newton_iters}
    if res.raw is not None:
        rec = record_from_result(res)
        write_trajectory_csv(out / "trajectory.csv", rec,
                             {"scenario": source or scenario.name, "mode": rep["mode"], "status": res.status})
        (out / "trajectory.svg").write_text(trajectory_svg(scenario, mode, rec))
    (out / "report.json").write_text(dumps_report(rep))
    _write_json(out / "timing.json", {"wall_time": res.stats.wall_time})
    rep["wall_time"] = res.stats.wall_time
    return rep


def run_planner_batch(scenario, settings: pl.PlannerSettings, seeds, out_dir) -> dict:
    """Plan once per seed; per-seed report.json, tree.svg and path edge
    CSVs, plus table.txt (deterministic) and timing.txt for the batch."""
    seeds = list(seeds)
    if not seeds:
        raise InputError("seeds must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports, times = [], []
    for s in seeds:
        d = out / f"seed_{s}"
        d.mkdir(exist_ok=True)
        st = replace(settings, rng_seed=int(s))
        try:
            res = pl.plan(scenario, scenario.q_init, scenario.q_goal, st)
        except pl.UnstableStart as e:
            log.error("seed %s: %s", s, e)
            res = pl.PlanResult(pl.NOT_FOUND, [pl.TreeNode(0, scenario.q_init)], None)
        rep = {"kind": "plan", "scenario": scenario.name, "seed": int(s), "status": res.status,
               "tree_nodes": len(res.tree), "path_nodes": res.path_nodes, "stocs_calls": res.stats.stocs_calls}
        (d / "report.json").write_text(dumps_report(rep))
        (d / "tree.svg").write_text(tree_svg(scenario, res.tree, res.path))
        _write_json(d / "timing.json", {"wall_time": res.stats.wall_time})
        for k, nid in enumerate((res.path or [])[1:]):
            nd = res.tree[nid]
            rec = record_from_result(nd.incoming_trajectory)
            write_trajectory_csv(d / f"edge_{k:02d}.csv", rec,
                                 {"scenario": scenario.name, "mode": nd.incoming_mode.name,
                                  "status": nd.incoming_trajectory.status})
        reports.append(rep)
        times.append(res.stats.wall_time)
        log.info("seed %s: %s tree=%d path=%d calls=%d %.1fs", s, res.status, rep["tree_nodes"],
                 rep["path_nodes"], rep["stocs_calls"], res.stats.wall_time)
    (out / "table.txt").write_text(planner_table(scenario.name, reports))
    (out / "timing.txt").write_text(planner_table(scenario.name, reports, times))
    return {"reports": reports, "times": times, "success": sum(r["status"] == pl.FOUND for r in reports)}


# ---------------------------------------------------------------- commands
def _stocs_settings(a) -> trajopt.StocsSettings:
    return trajopt.StocsSettings(n_max=a.n_max, T=a.T, dt=a.dt, weights=tuple(a.weights),
                                 eps_x=a.eps, eps_gap=a.eps, eps_s=a.eps, eps_p=a.eps)


def cmd_stocs(a) -> int:
    sc = _load(a.scenario)
    rep = run_stocs(sc, _mode(sc, a.mode), _stocs_settings(a), a.out, source=a.scenario)
    print(f"{rep['status']} outer={rep['outer_iters']} index={rep['avg_index_points']:.2f} "
          f"newton={rep['newton_iters']} time={rep['wall_time']:.1f}s -> {a.out}")
    return _exit_for(rep["status"])


def cmd_vanilla(a) -> int:
    sc = _load(a.scenario)
    mem = None if a.mem_limit is None else a.mem_limit * 2 ** 20
    rep = run_stocs(sc, _mode(sc, a.mode), _stocs_settings(a), a.out, source=a.scenario, vanilla=True,
                    max_iters=a.max_iters, time_limit=a.time_limit, mem_limit=mem)
    print(f"{rep['status']} points={rep['n_points']} newton={rep['newton_iters']} "
          f"time={rep['wall_time']:.1f}s -> {a.out}")
    return _exit_for(rep["status"])


def cmd_plan(a) -> int:
    sc = _load(a.scenario)
    st = pl.PlannerSettings(p1=a.p1, p2=a.p2, c_max=a.c_max, max_extensions=a.max_extensions,
                            goal_tol=a.goal_tol, T=a.T, dt=a.dt, n_max=a.n_max, rng_seed=a.seed)
    seeds = a.seeds if a.seeds else list(range(a.seed, a.seed + a.n_seeds))
    agg = run_planner_batch(sc, st, seeds, a.out)
    print(planner_table(sc.name, agg["reports"], agg["times"]), end="")
    return EXIT_OK if agg["success"] == len(seeds) else EXIT_NOT_CONVERGED


def cmd_verify(a) -> int:
    try:
        rec, meta = read_trajectory_csv(a.trajectory)
    except (OSError, ValueError, IndexError) as e:
        raise InputError(f"{a.trajectory}: {e}") from e
    src = a.scenario or meta.get("scenario")
    if not src:
        raise InputError("no scenario given and none recorded in the file")
    sc = _load(src)
    mode = _mode(sc, a.mode or meta.get("mode") or None)
    if rec.u.shape[1] != (mode.n_controls if mode else 0):
        raise InputError("control columns do not match the mode")
    rep = verify(sc.object, sc.environment, mode, rec, sc.gravity, eps_p=a.eps, eps_s=a.eps, eps_gap=a.eps)
    for line in rep.lines():
        print(line)
    print("PASS" if rep.ok else "FAIL")
    return EXIT_OK if rep.ok else EXIT_NOT_CONVERGED


def cmd_stable_poses(a) -> int:
    sc = _load(a.scenario)
    try:
        poses = stable_poses(sc.object, sc.environment)
    except NoStablePose as e:
        print(str(e))
        return EXIT_NOT_CONVERGED
    print(f"{'theta':>10s} {'height':>10s} {'statics':>8s}")
    for th, h in poses:
        ok = pl.stability_test(sc.object, sc.environment, [0.0, h, th], sc.gravity)
        print(f"{th:>10.6f} {h:>10.6f} {('stable' if ok else 'unstable'):>8s}")
    return EXIT_OK


def _collect(dirs):
    runs, batches = [], []
    for d in dirs:
        p = Path(d)
        if not p.exists():
            raise InputError(f"no such directory: {d}")
        for f in sorted(p.rglob("report.json")):
            r = json.loads(f.read_text())
            tf = f.parent / "timing.json"
            r["wall_time"] = json.loads(tf.read_text())["wall_time"] if tf.exists() else None
            r["_dir"] = str(f.parent.parent)
            (batches if r.get("kind") == "plan" else runs).append(r)
    return runs, batches


def cmd_report(a) -> int:
    runs, batches = _collect(a.dirs)
    if runs:
        by = {}
        for r in runs:
            row = by.setdefault(r["scenario"], {"scenario": r["scenario"], "n_points": r["n_points"]})
            row[r["kind"]] = r
            row[r["kind"] + "_time"] = r["wall_time"] if a.times else None
        print(stocs_table([by[k] for k in sorted(by)]), end="")
    groups = {}
    for r in batches:
        groups.setdefault((r["_dir"], r["scenario"]), []).append(r)
    for (_, name), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r["seed"])
        times = [r["wall_time"] for r in rs] if a.times and all(r["wall_time"] is not None for r in rs) else None
        print(planner_table(name, rs, times), end="")
    if not runs and not batches:
        print("no reports found")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---------------------------------------------------------------- parser
def _common(p, T=20, n_max=100):
    p.add_argument("scenario", help="scenario YAML file or golden name (e.g. box_pivot)")
    p.add_argument("--T", type=int, default=T, help=f"time steps (default {T})")
    p.add_argument("--dt", type=float, default=0.1, help="step length in s (default 0.1)")
    p.add_argument("--n-max", type=int, default=n_max, help=f"outer iteration cap (default {n_max})")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stocs", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    for name, fn in (("stocs", cmd_stocs), ("vanilla", cmd_vanilla)):
        p = sub.add_parser(name, help="single-mode trajectory optimization" if name == "stocs"
                           else "baseline with every boundary point instantiated")
        _common(p)
        p.add_argument("--mode", help="manipulation mode name (default: first in file)")
        p.add_argument("--weights", type=float, nargs=3, default=(1.0, 1.0, 5.0), metavar=("W1", "W2", "W"),
                       help="objective metric weights and scale (default 1 1 5)")
        p.add_argument("--eps", type=float, default=1e-4, help="all convergence tolerances (default 1e-4)")
        if name == "vanilla":
            p.add_argument("--time-limit", type=float, default=None, help="seconds before ResourceLimit")
            p.add_argument("--mem-limit", type=float, default=None, help="MiB cap on the linear-solve factor")
            p.add_argument("--max-iters", type=int, default=5000, help="Newton step cap (default 5000)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("plan", help="multi-modal planning over a batch of seeds")
    _common(p, T=5, n_max=10)
    p.add_argument("--n-seeds", type=int, default=1, help="seeds seed..seed+n-1 (default 1)")
    p.add_argument("--seeds", type=int, nargs="*", help="explicit seed list")
    p.add_argument("--max-extensions", type=int, default=500, help="STOCS call cap (default 500)")
    p.add_argument("--p1", type=float, default=0.5, help="uniform sample probability (default 0.5)")
    p.add_argument("--p2", type=float, default=0.3, help="stable-angle sample probability (default 0.3)")
    p.add_argument("--c-max", type=float, default=2.0, help="transition cost bound (default 2)")
    p.add_argument("--goal-tol", type=float, default=0.02, help="goal distance (default 0.02)")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("verify", help="independent residual check of a trajectory CSV")
    p.add_argument("trajectory")
    p.add_argument("--scenario", help="override the scenario recorded in the file")
    p.add_argument("--mode", help="override the mode recorded in the file")
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("stable-poses", help="resting orientations on the floor")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_stable_poses)

    p = sub.add_parser("report", help="tables from run directories")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--times", action="store_true", help="include wall times (not reproducible)")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    try:
        return a.fn(a)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
