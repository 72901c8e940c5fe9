"""Command-line front end.

Exit codes: 0 every check passed, 1 some check failed, 2 invalid usage or
configuration, 3 numerical fault.
"""
import argparse
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bakry_emery as BE
from . import metric as M
from . import spaces as S
from . import transport as T
from .core import (be_check, local_curvature, parse_dimension,
                   pointwise_be_optimal_K, test_battery)
from .exceptions import CurvelabError, NumericalError
from .report import CheckReport, reports_to_csv, reports_to_json
from .semigroup import atom, decompose

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    action: Optional[str]
    space: Optional[str] = None
    K: Optional[float] = None
    N: float = math.inf
    t: Optional[float] = None
    tmax: Optional[float] = None
    grid: Optional[str] = None
    tol: Optional[float] = None
    margin: Optional[float] = None
    seed: int = 42
    battery: Optional[int] = None
    out: Optional[str] = None
    format: str = "json"
    x: Optional[str] = None
    y: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise CurvelabError("--tol must be positive")
        if self.battery is not None and self.battery < 1:
            raise CurvelabError("--battery must be >= 1")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _dimension(text):
    try:
        return parse_dimension(text)
    except CurvelabError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p, space=True):
    if space:
        p.add_argument("--space", help="space shorthand (two_point, ou:400, "
                       "circle:64, interval:100, complete:5, random:8, A*B) "
                       "or a .json spec/triple file")
    p.add_argument("--K", type=float, help="curvature constant")
    p.add_argument("--N", type=_dimension, default=math.inf,
                   help="dimension (a number >= 1 or 'inf')")
    p.add_argument("--t", type=float, help="time")
    p.add_argument("--tmax", type=float, help="largest time of a time grid")
    p.add_argument("--grid", help="grid size, or comma-separated list")
    p.add_argument("--tol", type=float, help="verdict tolerance")
    p.add_argument("--margin", type=float, default=None,
                   help="subtract from K* when --K is omitted (be: 0.02, else 0)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--battery", type=int, help="number of test fields / pairs")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser():
    p = _Parser(prog="curvelab", description="Curvature-dimension diagnostics "
                "on finite Markov triples.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    be = sub.add_parser("be", help="pointwise K*, semigroup forms (ii)-(vi), "
                        "ODE comparison")
    _common(be)
    me = sub.add_parser("metric", help="intrinsic distance and metric checks")
    me.add_argument("action", choices=("dist", "defect", "length", "ed"))
    _common(me)
    tr = sub.add_parser("transport", help="Wasserstein-side inequalities")
    tr.add_argument("action", choices=("evi", "contraction", "harnack", "llogl",
                                       "action", "duality"))
    _common(tr)
    ex = sub.add_parser("experiment", help="tensorization and refinement studies")
    ex.add_argument("action", choices=("tensor", "refine"))
    ex.add_argument("--x", help="first factor (tensor)")
    ex.add_argument("--y", help="second factor (tensor)")
    _common(ex)
    return p


# ---------------------------------------------------------------------------

def _triple(cfg):
    if not cfg.space:
        raise CurvelabError("--space is required")
    return S.build(S.SpaceSpec.parse(cfg.space, seed=cfg.seed))


def _grid_int(cfg, default):
    if cfg.grid is None:
        return default
    try:
        v = int(cfg.grid)
    except ValueError:
        raise CurvelabError("--grid must be an integer here") from None
    if v < 2:
        raise CurvelabError("--grid must be >= 2")
    return v


def _grid_list(cfg, default):
    if cfg.grid is None:
        return list(default)
    try:
        return [int(v) for v in cfg.grid.split(",") if v.strip()]
    except ValueError:
        raise CurvelabError("--grid must be a comma-separated list of sizes") from None


def _transport_metric(triple):
    """Grid metric on discretized diffusions, intrinsic distance otherwise."""
    if triple.coords is not None:
        return M.MetricMatrix.from_coords(triple.coords, triple.period)
    return M.intrinsic_distance(triple)


def _margin(cfg, default=0.0):
    return default if cfg.margin is None else float(cfg.margin)


def _K_or_default(cfg, K_star, default_margin=0.0):
    if cfg.K is not None:
        return float(cfg.K)
    return float(K_star - _margin(cfg, default_margin))


def cmd_be(cfg):
    triple = _triple(cfg)
    N = cfg.N
    tol = cfg.tol if cfg.tol is not None else 1e-8
    K_star, per = pointwise_be_optimal_K(triple, N)
    K = _K_or_default(cfg, K_star, 0.02)
    reports = [be_check(triple, K, N, tol)]
    x = int(np.nanargmin(np.where(np.isnan(per), np.inf, per)))
    _, f = local_curvature(triple, x, N, return_field=True)
    if f is None:
        raise NumericalError("no extremal field at the minimising state")
    dec = decompose(triple)
    lam = float(np.abs(dec.eigenvalues).max())
    t = cfg.t if cfg.t is not None else 1e-3 / lam
    t_point = cfg.t if cfg.t is not None else 1e-5 / lam
    s_grid = np.linspace(0.0, t, _grid_int(cfg, 65))
    reports += BE.equivalence_battery(dec, K, N, f, atom(triple, x), t, s_grid,
                                      t_point=t_point, tol=tol)
    battery = test_battery(triple, size=cfg.battery or 8, seed=cfg.seed)
    for v in ("iv", "v", "vi"):
        worst = None
        for g in battery:
            if np.ptp(g) == 0:
                continue
            r = BE.check_form_iv_v_vi(dec, K, N, g, t_point, v, tol)
            if worst is None or r.worst_residual > worst.worst_residual:
                worst = r
        if worst is not None:
            worst.name += "_battery"
            reports.append(worst)
    return reports, {"K_star": K_star}


def cmd_metric(cfg):
    triple = _triple(cfg)
    tol = cfg.tol if cfg.tol is not None else 1e-8
    if cfg.action == "dist":
        d = M.intrinsic_distance(triple, {"tol": tol})
        scale = np.maximum(1.0, np.where(np.isfinite(d.d), d.d, 1.0))
        rel_gap = float(np.nanmax(np.asarray(d.gap) / scale, initial=0.0))
        rep = CheckReport("intrinsic_distance", "intrinsic distance of the Dirichlet form",
                          rel_gap, 10 * tol,
                          params={"all_converged": bool(np.all(d.converged))},
                          notes=list(d.notes))
        if triple.n <= 12:
            meta = {"distance": d.d}
        else:
            meta = {"distance_max": float(np.max(d.d))}
        if cfg.format == "csv":
            return [rep], {"_csv": d.to_csv()}
        return [rep], meta
    if cfg.action == "defect":
        val = M.grid_distance_defect(triple, tol=tol)
        h = triple.h or 1.0
        return [CheckReport("grid_distance_defect", "intrinsic distance versus grid distance",
                            float(val), 3.0 * h, params={"h": h})], {}
    d = M.intrinsic_distance(triple, {"tol": tol})
    if cfg.action == "length":
        return [M.length_defect(d, tol=max(tol, 1e-9))], {}
    return [M.ed_condition_check(triple, d, tol=max(tol, 1e-9), seed=cfg.seed)], {}


def _time_grid(cfg, default):
    if cfg.tmax is None and cfg.grid is None:
        return np.asarray(default, float)
    tmax = cfg.tmax if cfg.tmax is not None else float(default[-1])
    n = _grid_int(cfg, len(default))
    return np.linspace(tmax / n, tmax, n)


def cmd_transport(cfg):
    triple = _triple(cfg)
    a = cfg.action
    if a == "duality":
        rng = np.random.default_rng(cfg.seed)
        d = _transport_metric(triple)
        reports = []
        for _ in range(cfg.battery or 10):
            mu = rng.random(triple.n)
            nu = rng.random(triple.n)
            reports.append(T.kantorovich_duality_gap(d, mu / mu.sum(), nu / nu.sum(),
                                                     tol=cfg.tol or 1e-6))
        return [max(reports, key=lambda r: r.worst_residual)], {}
    dec = decompose(triple)
    d = _transport_metric(triple)
    if cfg.K is None:
        K_star, _ = pointwise_be_optimal_K(triple, math.inf)
        K = T.default_margin_K(K_star) - _margin(cfg)
    else:
        K = float(cfg.K)
    npairs = cfg.battery or (20 if a in ("evi",) else 8)
    pairs = T.bump_pairs(triple, npairs, seed=cfg.seed)
    if a == "contraction":
        tg = _time_grid(cfg, (0.05, 0.1, 0.25, 0.5, 1.0))
        return [T.contraction_check(dec, d, pairs, tg, K, tol=cfg.tol or 1e-3)], {"K": K}
    if a == "evi":
        tmax = cfg.tmax or 1.0
        dt = cfg.t or 0.025
        return [T.evi_residual_battery(dec, d, pairs, (0.05, tmax), K, dt=dt,
                                       tol=cfg.tol or 0.05)], {"K": K}
    if a == "harnack":
        times = [cfg.t] if cfg.t else [0.1, 0.25]
        reps = [T.log_harnack_check(dec, d, f, t, K, tol=cfg.tol or 5e-3)
                for f, _ in pairs for t in times]
        return [max(reps, key=lambda r: r.worst_residual)], {"K": K}
    if a == "llogl":
        times = [cfg.t] if cfg.t else [0.1, 0.25]
        x0s = sorted({0, triple.n // 4, triple.n // 2, (3 * triple.n) // 4})
        reps = []
        for f, _ in pairs:
            for t in times:
                for x0 in x0s:
                    for r in (0.5, 1.0, 2.0):
                        reps.append(T.llogl_check(dec, d, f, t, K, x0, r,
                                                  tol=cfg.tol or 0.0))
        return [max(reps, key=lambda r: r.worst_residual)], {"K": K}
    # action estimate along heat-flow surrogate curves
    t = cfg.t or 0.2
    s = np.linspace(0.0, 1.0, _grid_int(cfg, 11))
    reps = [T.action_estimate_check(dec, d, T.heat_flow_curve(dec, f, s), s, t, K,
                                    tol=cfg.tol or 0.05) for f, _ in pairs]
    return [max(reps, key=lambda r: r.worst_residual)], {"K": K}


def cmd_experiment(cfg):
    if cfg.action == "tensor":
        if not (cfg.x and cfg.y):
            raise CurvelabError("tensor needs --x and --y")
        X = S.build(S.SpaceSpec.parse(cfg.x, seed=cfg.seed))
        Y = S.build(S.SpaceSpec.parse(cfg.y, seed=cfg.seed))
        N = cfg.N
        NX = NY = N / 2 if math.isfinite(N) else math.inf
        if cfg.K is None:
            kx, _ = pointwise_be_optimal_K(X, NX)
            ky, _ = pointwise_be_optimal_K(Y, NY)
            KX, KY = kx - _margin(cfg), ky - _margin(cfg)
        else:
            KX = KY = float(cfg.K)
        rep = S.tensorization_check(X, KX, NX, Y, KY, NY, tol=cfg.tol or 1e-9)
        return [rep], {}
    # refinement study
    family_name = (cfg.space or "ou").split(":")[0]
    families = {
        "ou": (lambda n: S.ou_spec(n), 1.0, math.inf),
        "circle": (lambda n: S.circle_spec(n), 0.0, 1.0),
    }
    if family_name not in families:
        raise CurvelabError(f"refine supports families {sorted(families)}")
    fam, K_limit, N_default = families[family_name]
    N = cfg.N if cfg.N != math.inf else N_default
    K_limit = cfg.K if cfg.K is not None else K_limit
    n_list = _grid_list(cfg, (50, 100, 200, 400))
    tab = S.refinement_study(fam, n_list, N, {"K_limit": K_limit, "seed": cfg.seed})
    tol = cfg.tol or (0.03 if family_name == "ou" else 0.02)
    k = tab.column("K_star")
    dev = np.abs(k - K_limit)
    monotone = bool(np.all(np.diff(dev) <= 1e-12))
    rep = CheckReport("refinement", "stability of the curvature bound under refinement",
                      float(dev[-1]) if monotone else math.inf, tol,
                      worst_location=int(n_list[-1]), detail_table=tab.rows,
                      params={"K_limit": K_limit, "N": N, "monotone": monotone,
                              "orders": tab.orders},
                      notes=[tab.error] if tab.error else [])
    return [rep], {"_table_csv": tab.to_csv()}


COMMANDS = {"be": cmd_be, "metric": cmd_metric, "transport": cmd_transport,
            "experiment": cmd_experiment}


def _emit(cfg, reports, meta):
    csv_override = meta.pop("_csv", None)
    table_csv = meta.pop("_table_csv", None)
    if cfg.format == "csv":
        text = csv_override or table_csv or reports_to_csv(reports)
    else:
        text = reports_to_json(reports, command=cfg.command, action=cfg.action,
                               space=cfg.space,
                               verdict="pass" if all(r.passed for r in reports) else "fail",
                               **meta)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for r in reports:
        sys.stderr.write(r.summary() + "\n")


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise _Usage("a command is required")
        args = vars(ns)
        cfg = RunConfig(command=args.pop("command"), action=args.pop("action", None),
                        x=args.pop("x", None), y=args.pop("y", None), **args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"curvelab: error: {exc}\n")
        return EXIT_USAGE
    except CurvelabError as exc:
        sys.stderr.write(f"curvelab: error: {exc}\n")
        return EXIT_USAGE
    try:
        reports, meta = COMMANDS[cfg.command](cfg)
        _emit(cfg, reports, meta)
    except NumericalError as exc:
        sys.stderr.write(f"curvelab: numerical fault: {exc}\n")
        return EXIT_NUMERICAL
    except (CurvelabError, OSError) as exc:
        sys.stderr.write(f"curvelab: error: {exc}\n")
        return EXIT_USAGE
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
