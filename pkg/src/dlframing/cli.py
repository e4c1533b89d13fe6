"""Command-line front end.

Scenario files are YAML mappings::

    snr_db: 0
    eps: 1.0e-4
    K: 16
    q: 0.5
    alphas: [100]
    ps: [1.0]          # optional when there is one message size
    betas: [0.01, 1]   # optional, or beta_grid: {n: 61, lo: 1e-3, hi: 1e3}
    search: {V: [[1], [2]], W: [1, 4, 16]}   # optional
    grid_n: 2048       # optional envelope sampling

Every CSV starts with ``#`` metadata lines (tool version, scenario hash,
grids, seed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bound import bound_curve, default_betas, lower_bound_point
from .envelope import DEFAULT_GRID
from .fbl import fbl_context, n_approx, n_code
from .optimize import default_search_space, sweep
from .protocols import GENIE, KINDS, BudgetError, ProtocolParams, equal_split, evaluate
from .scenario import Scenario
from .sim import mc_estimate

EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

TRADEOFF_COLUMNS = ("beta", "ET", "EP1", "kind", "V", "W", "eps1", "eps2", "eps3", "on_hull")
BOUND_COLUMNS = ("beta", "bound")
CURVE_COLUMNS = ("ET", "EP1_bound")
FBL_COLUMNS = ("k", "n_code", "n_approx")
VALIDATE_COLUMNS = (
    "kind", "V", "W", "eps1", "eps2", "eps3", "n_frames", "seed",
    "ET_hat", "ET_se", "ET", "EP1_hat", "EP1_se", "EP1", "err_rate_active", "err_bound", "worst_case_charges",
)

log = logging.getLogger("dlframing")


class ScenarioError(ValueError):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(x) else str(float(x))
    if isinstance(x, (tuple, list)):
        return ";".join(_fmt(v) for v in x)
    return str(x)


def load_scenario(path) -> tuple[Scenario, dict]:
    """Parse a scenario file; returns the scenario and the raw mapping."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must be a mapping")
    missing = [k for k in ("snr_db", "eps", "K", "q", "alphas") if k not in raw]
    if missing:
        raise ScenarioError(f"missing scenario keys: {', '.join(missing)}")
    try:
        alphas = raw["alphas"]
        alphas = [alphas] if np.isscalar(alphas) else list(alphas)
        ps = raw.get("ps")
        if ps is not None:
            ps = [ps] if np.isscalar(ps) else list(ps)
        sc = Scenario.make(
            P=10.0 ** (float(raw["snr_db"]) / 10.0),
            eps=float(raw["eps"]),
            K=raw["K"],
            q=float(raw["q"]),
            alphas=alphas,
            ps=ps,
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    return sc, raw


def scenario_betas(raw: dict) -> np.ndarray:
    if "betas" in raw:
        b = np.asarray(raw["betas"], dtype=float)
        if b.ndim != 1 or b.size == 0 or np.any(b <= 0):
            raise ScenarioError("betas must be a nonempty list of positive numbers")
        return np.sort(b)
    g = raw.get("beta_grid") or {}
    try:
        return default_betas(int(g.get("n", 61)), float(g.get("lo", 1e-3)), float(g.get("hi", 1e3)))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid beta_grid: {exc}") from exc


def _parse_vec(text, name):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ScenarioError(f"{name} must be a list of integers") from exc


def _search_space(sc: Scenario, kind: str, raw: dict):
    s = raw.get("search") or {}
    Vs = s.get("V")
    if Vs is not None:
        Vs = [tuple(_parse_vec(v, "search.V")) if not np.isscalar(v) else (int(v),) for v in Vs]
    Ws = s.get("W")
    return default_search_space(sc, kind, Vs, Ws)


def _meta(out, command, sc, extra: dict):
    out.write(f"# dlframing {__version__}\n")
    out.write(f"# command {command}\n")
    out.write(f"# scenario {sc.digest()} {json.dumps(sc.as_dict(), sort_keys=True)}\n")
    for k, v in extra.items():
        out.write(f"# {k} {json.dumps(v, sort_keys=True)}\n")


def _table(out, columns, rows):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])


def cmd_fbl_table(args, sc, raw, out):
    eps = sc.eps if args.eps is None else args.eps
    ctx = fbl_context(sc.P, eps)
    ks = np.arange(0, args.kmax + 1, args.step)
    _meta(out, "fbl-table", sc, {"eps": eps, "k_grid": [0, int(args.kmax), int(args.step)]})
    rows = [(int(k), float(n_code(int(k), ctx)), float(n_approx(int(k), ctx)) if k > 0 else 0.0) for k in ks]
    _table(out, FBL_COLUMNS, rows)
    return 0


def cmd_bound(args, sc, raw, out):
    betas = scenario_betas(raw)
    grid_n = int(raw.get("grid_n", DEFAULT_GRID))
    meta = {"betas": betas.tolist(), "grid_n": grid_n, "seed": args.seed}
    _meta(out, "bound", sc, meta)
    if args.curve:
        curve = bound_curve(betas, sc, n_grid=args.points, grid_n=grid_n)
        _table(out, BOUND_COLUMNS, zip(curve.betas, curve.values))
        with open(args.curve, "w") as fh:
            _meta(fh, "bound --curve", sc, meta)
            _table(fh, CURVE_COLUMNS, zip(curve.frame, curve.power))
    else:
        pts = [lower_bound_point(b, sc, seed=args.seed, grid_n=grid_n) for b in betas]
        _table(out, BOUND_COLUMNS, [(p.beta, p.value) for p in pts])
    return 0


def cmd_tradeoff(args, sc, raw, out):
    kind = args.protocol
    betas = scenario_betas(raw)
    space = _search_space(sc, kind, raw)
    curve = sweep(sc, kind, betas, space, optimize=not args.no_eps_opt)
    on_hull = set(curve.hull)
    _meta(
        out,
        f"tradeoff --protocol {kind}" + (" --no-eps-opt" if args.no_eps_opt else ""),
        sc,
        {"betas": betas.tolist(), "search_V": [list(v) for v in space.Vs], "search_W": list(space.Ws)},
    )
    rows = []
    for i, pt in enumerate(curve.points):
        e = list(pt.params.eps_layers) + [None] * (3 - len(pt.params.eps_layers))
        rows.append((pt.beta, pt.ET, pt.EP1, kind, pt.params.V, pt.params.W, *e, i in on_hull))
    _table(out, TRADEOFF_COLUMNS, rows)
    return 0


def cmd_validate(args, sc, raw, out):
    kind = args.protocol
    V = _parse_vec(args.V, "--V") or [sc.K] * sc.S
    if kind == GENIE:
        params = ProtocolParams.genie(V, sc.eps)
    else:
        eps = equal_split(sc.eps) if args.eps_layers is None else [float(x) for x in args.eps_layers.split(",")]
        params = ProtocolParams(kind, tuple(V), args.W or sc.K, tuple(eps))
    params.validate(sc)
    res = evaluate(sc, params)
    rep = mc_estimate(sc, params, args.frames, args.seed)
    _meta(out, f"validate --protocol {kind}", sc, {"frames": args.frames, "seed": args.seed})
    e = list(params.eps_layers) + [None] * (3 - len(params.eps_layers))
    row = (
        kind, params.V, params.W, *e, rep.n_frames, rep.seed,
        rep.ET_hat, rep.ET_se, res.ET, rep.EP1_hat, rep.EP1_se, res.EP1,
        rep.err_rate_active, res.err_active, rep.worst_case_charges,
    )
    _table(out, VALIDATE_COLUMNS, [row])
    def z(est, se, ref):
        return f"{(est - ref) / se:+.2f}" if 0 < se < math.inf else "n/a"

    print(
        f"{kind}: E[T] {rep.ET_hat:.2f} (analytic {res.ET:.2f}, z={z(rep.ET_hat, rep.ET_se, res.ET)}); "
        f"E[P1] {rep.EP1_hat:.2f} (analytic {res.EP1:.2f}, z={z(rep.EP1_hat, rep.EP1_se, res.EP1)}); "
        f"active error rate {rep.err_rate_active:.2e} (bound {res.err_active:.2e})",
        file=sys.stderr,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlframing", description="Control-information trade-offs for downlink frames.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="YAML scenario file")
        p.add_argument("-o", "--out", help="output CSV (default: stdout)")

    p = sub.add_parser("fbl-table", help="code length versus payload size")
    common(p)
    p.add_argument("--kmax", type=int, default=2000)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--eps", type=float, default=None, help="override the error probability")
    p.set_defaults(func=cmd_fbl_table)

    p = sub.add_parser("bound", help="genie-aided lower bound per beta")
    common(p)
    p.add_argument("--curve", help="also write the (E[T], E[P1]) bound curve to this CSV")
    p.add_argument("--points", type=int, default=200, help="frame-duration grid size for --curve")
    p.add_argument("--seed", type=int, default=0, help="seed for the Monte Carlo fallback")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("tradeoff", help="optimized operating points and their hull")
    common(p)
    p.add_argument("--protocol", choices=KINDS, required=True)
    p.add_argument("--no-eps-opt", action="store_true", help="use the equal split of the error budget")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("validate", help="Monte Carlo check of the analytic evaluator")
    common(p)
    p.add_argument("--protocol", choices=KINDS, default="fixed")
    p.add_argument("--V", help="group caps, comma separated (default K for every size)")
    p.add_argument("--W", type=int, help="user-group size (default K)")
    p.add_argument("--eps-layers", help="three per-layer error probabilities, comma separated")
    p.add_argument("--frames", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sc, raw = load_scenario(args.scenario)
        buf = io.StringIO()
        code = args.func(args, sc, raw, buf)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
