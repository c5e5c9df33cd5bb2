"""Batch command-line front end.

Commands: analyze, region, converge, optimize, catalog, filter.  Outputs are
machine-readable (JSON or CSV); when an output file is given the report
commands also render a PNG figure next to it.  Exit codes: 0 success (and,
for catalog methods, computed properties match the declared metadata),
1 computed results disagree with the declared metadata or consistency fails,
2 usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import catalog, optimize as opt_mod, plotting
from .integrate import SolveConfig, observed_order
from .order import order_report
from .problems import problem_from_name
from .stability import ScanConfig, full_report, region_raster
from .tableau import (BlockGlm, GlmTableau, drop_passive_stages, load_method,
                      method_to_json_dict, save_method, to_compact, validate)

ALPHA_MATCH_TOL = 0.25
USAGE_ERROR = 2
MISMATCH = 1


def thread_count():
    """Worker cap from GLMLAB_THREADS (default: single-threaded)."""
    try:
        return max(1, int(os.environ.get("GLMLAB_THREADS", "1")))
    except ValueError:
        return 1


class CliError(Exception):
    def __init__(self, message, code=USAGE_ERROR):
        super().__init__(message)
        self.code = code


def _resolve_method(text):
    """Catalog name or path to a method JSON file -> (entry|None, analysis form)."""
    if os.path.exists(text):
        try:
            method = load_method(text)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot read method file {text}: {exc}") from exc
        return None, method
    try:
        entry = catalog.get(text)
    except catalog.UnknownMethodError as exc:
        raise CliError(f"unknown method {text!r} (and no such file)") from exc
    return entry, entry.tableau


def _analysis_form(method):
    return to_compact(method) if isinstance(method, GlmTableau) else method


def _scan_from_args(args):
    kw = {}
    if getattr(args, "scan_rays", None):
        kw["rays"] = args.scan_rays
    if getattr(args, "scan_moduli", None):
        kw["moduli"] = args.scan_moduli
    if getattr(args, "zmax", None):
        kw["z_max"] = args.zmax
    return ScanConfig(**kw)


def _emit(args, payload, default=sys.stdout):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        default.write(text + "\n")


def cmd_analyze(args):
    entry, method = _resolve_method(args.method)
    compact = _analysis_form(method)
    tol = args.tol or 1e-9
    orep = order_report(compact, tol=tol)
    consistency = validate(compact, tol=max(tol, 1e-9))
    srep = full_report(compact, _scan_from_args(args))
    payload = {
        "method": getattr(entry, "name", None) or getattr(method, "name", "") or args.method,
        "consistency": consistency.to_json_dict(),
        "order": orep.to_json_dict(),
        "stability": srep.to_json_dict(),
    }
    code = 0
    if orep.order < 0:
        code = MISMATCH
    if entry is not None:
        alpha = srep.alpha_deg if srep.alpha_deg is not None else 0.0
        match = {
            "order": orep.order == entry.declared_order,
            "alpha_deg": abs(alpha - entry.declared_alpha_deg) <= ALPHA_MATCH_TOL,
            "l_stable": srep.l_stable == entry.declared_l_stable,
        }
        payload["declared"] = {
            "order": entry.declared_order,
            "alpha_deg": entry.declared_alpha_deg,
            "l_stable": entry.declared_l_stable,
        }
        payload["match"] = match
        if not all(match.values()):
            code = MISMATCH
    _emit(args, payload)
    return code


def _parse_window(text):
    parts = text.split(":")
    if len(parts) != 4:
        raise CliError(f"--window wants re_min:re_max:im_min:im_max, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise CliError(f"bad --window value {text!r}") from exc


def cmd_region(args):
    entry, method = _resolve_method(args.method)
    compact = _analysis_form(method)
    window = _parse_window(args.window)
    nx = ny = args.n
    workers = thread_count()
    if workers > 1 and ny >= 2 * workers:
        im_chunks = np.array_split(np.linspace(window[2], window[3], ny), workers)
        def run_chunk(im_part):
            sub = (window[0], window[1], im_part[0], im_part[-1])
            return region_raster(compact, sub, nx, im_part.size)[2]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_chunk, im_chunks))
        rho = np.vstack(rows)
        re = np.linspace(window[0], window[1], nx)
        im = np.concatenate([c for c in im_chunks])
    else:
        re, im, rho = region_raster(compact, window, nx, ny)
    out = args.out
    writer = csv.writer(open(out, "w", newline="") if out else sys.stdout)
    writer.writerow(["re", "im", "rho"])
    for i, imv in enumerate(im):
        for j, rev in enumerate(re):
            writer.writerow([f"{rev:.12g}", f"{imv:.12g}", f"{rho[i, j]:.12g}"])
    if out and args.plot:
        plotting.render_region(re, im, rho, _figure_path(out),
                               title=getattr(method, "name", args.method))
    return 0


def _figure_path(out):
    stem, _ = os.path.splitext(out)
    return stem + ".png"


def cmd_converge(args):
    entry, method = _resolve_method(args.method)
    runner = entry if entry is not None else method
    if isinstance(method, BlockGlm) and entry is None:
        raise CliError("window methods need their catalog entry to integrate")
    try:
        problem = problem_from_name(args.problem)
    except KeyError as exc:
        raise CliError(str(exc)) from exc
    if args.tf:
        problem = _with_tf(problem, args.tf)
    dts = [args.dt0 / 2 ** i for i in range(args.levels)]
    study = observed_order(problem, runner, dts, SolveConfig(dt=dts[0]))
    out = args.out
    writer = csv.writer(open(out, "w", newline="") if out else sys.stdout)
    writer.writerow(["dt", "error", "order_estimate"])
    for dt, err, est in study.rows():
        writer.writerow([f"{dt:.12g}",
                         "---" if err is None else f"{err:.12e}",
                         "---" if est is None else f"{est:.4f}"])
    if out and args.plot:
        ref = entry.declared_observed_order if entry is not None else None
        plotting.render_convergence(study.dts, study.errors, _figure_path(out),
                                    title=f"{getattr(runner, 'name', args.method)} on {problem.name}",
                                    reference_order=ref)
    return 0


def _with_tf(problem, tf):
    from dataclasses import replace
    return replace(problem, t_span=(problem.t_span[0], tf))


def cmd_optimize(args):
    try:
        with open(args.problem_file) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read problem file: {exc}") from exc
    try:
        problem = opt_mod.problem_from_json_dict(data)
    except (KeyError, ValueError, catalog.UnknownMethodError) as exc:
        raise CliError(f"bad problem file: {exc}") from exc
    seed = args.seed if args.seed is not None else int(data.get("seed", 0))
    config = opt_mod.OptimizerConfig(seed=seed)
    try:
        result = opt_mod.optimize_filters(problem, config)
    except opt_mod.InfeasibleError as exc:
        raise CliError(f"infeasible problem: {exc}", code=MISMATCH) from exc
    stab, orep, verified = opt_mod.verify_result(result, problem.target_order)
    payload = result.to_json_dict()
    payload["verified"] = verified
    payload["verification"] = {"stability": stab.to_json_dict(),
                               "order": orep.to_json_dict()}
    base = args.out or "optimized"
    save_method(result.tableau, base + ".method.json")
    with open(base + ".report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    sys.stdout.write(json.dumps(
        {"achieved_alpha_deg": result.achieved_alpha_deg,
         "feasible": result.feasible and verified,
         "method_file": base + ".method.json",
         "report_file": base + ".report.json"}, indent=2) + "\n")
    return 0 if (result.feasible and verified) else MISMATCH


def cmd_filter(args):
    from .filters import CoreMethod, PostFilter, PreFilter, apply_filters

    entry, method = _resolve_method(args.core)
    if isinstance(method, BlockGlm):
        raise CliError("cannot wrap filters around a window method")
    try:
        with open(args.filter_file) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read filter file: {exc}") from exc
    pre = post = None
    if "pre" in spec:
        p = spec["pre"]
        pre = (PreFilter.from_stencil(p["alpha"], p["dhat"]) if "alpha" in p
               else PreFilter(d1=p["d1"]))
    if "post" in spec:
        q = spec["post"]
        if "omega" in q:
            post = PostFilter.from_stencil(q["omega"], q["qhat"])
        elif "stage_weights" in q:
            post = PostFilter.from_stage_weights(q["theta"], q["stage_weights"])
        else:
            post = PostFilter.glm(q["theta"], q.get("bhat"), q.get("b"))
    steps = method.k
    for flt in (pre, post):
        if flt is None:
            continue
        for v in ("d1", "theta", "qhat"):
            arr = getattr(flt, v, None)
            if arr is not None:
                steps = max(steps, len(arr))
    core = CoreMethod.from_tableau(method, steps=steps)
    name = args.name or f"{getattr(method, 'name', args.core)}-filtered"
    filtered = drop_passive_stages(apply_filters(core, pre, post, name=name))
    payload = method_to_json_dict(filtered)
    if args.out:
        save_method(filtered, args.out)
    else:
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_catalog(args):
    if args.action == "list":
        payload = [e.to_json_dict() for e in catalog.list_entries()]
        _emit(args, payload)
        return 0
    # export
    if not args.name:
        raise CliError("catalog export needs a method name")
    try:
        entry = catalog.get(args.name)
    except catalog.UnknownMethodError as exc:
        raise CliError(str(exc)) from exc
    if args.out:
        save_method(entry.tableau, args.out)
    else:
        sys.stdout.write(json.dumps(method_to_json_dict(entry.tableau), indent=2) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="glmlab",
                                     description="time-filtered general linear methods")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scan_flags(p):
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--scan-rays", type=int, default=None)
        p.add_argument("--scan-moduli", type=int, default=None)
        p.add_argument("--zmax", type=float, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("analyze", help="order residuals + stability report")
    p.add_argument("method")
    add_scan_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("region", help="spectral-radius raster as CSV")
    p.add_argument("method")
    p.add_argument("--window", required=True, help="re_min:re_max:im_min:im_max")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("converge", help="convergence table as CSV")
    p.add_argument("method")
    p.add_argument("--problem", required=True)
    p.add_argument("--dt0", type=float, default=0.2)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--tf", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("optimize", help="maximize a stability region over filters")
    p.add_argument("problem_file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("filter", help="wrap pre/post filters around a core method")
    p.add_argument("core")
    p.add_argument("filter_file")
    p.add_argument("--name", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("catalog", help="list built-in methods or export one")
    p.add_argument("action", choices=["list", "export"])
    p.add_argument("name", nargs="?")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_catalog)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
