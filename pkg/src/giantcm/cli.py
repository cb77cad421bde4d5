"""Command-line runner: ``giantcm {me,collide,traj,df-scan,coeffs,compare} SCENARIO [flags]``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.  Errors are
reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .collision import gaussian_bin_source, run_conveyor
from .dfree import df_hamiltonian, is_decoherence_free, phase_scan, uniform_phase_template
from .errors import GiantCMError, NumericalError, ScenarioError
from .geometry import build_collective_ops
from .master_equation import MasterEquation, coefficient_table, integrate
from .output import fmt, write_csv, write_json, write_states
from .scenario import Scenario, parse_scenario
from .trajectories import coherent_bin_source, ensemble_average

log = logging.getLogger("giantcm")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def trace_norm(a: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T))).sum())


def observable_rows(sc: Scenario, times, states):
    obs = sc.observables()
    header = ["t"]
    for name, _, cplx in obs:
        header += [f"{name}.re", f"{name}.im"] if cplx else [name]
    rows = []
    for t, s in zip(times, states):
        r = np.asarray(getattr(s, "data", s))
        row = [t]
        for name, O, cplx in obs:
            if O is None:
                row.append(float(np.trace(r @ r).real))
            else:
                v = complex(np.trace(r @ O))
                row += [v.real, v.imag] if cplx else [v.real]
        rows.append(row)
    return header, rows


def me_dt(sc: Scenario, me: MasterEquation, dt_int: float | None = None) -> float:
    """Largest admissible RK4 step (at most 1e-3) dividing T evenly."""
    T = sc.sim["T"]
    cap = dt_int or sc.sim["dt_int"] or min(1e-3, 0.01 / max(me.rate_scale, 1e-300))
    n = max(1, math.ceil(T / cap - 1e-9))
    return T / n


def run_me(sc: Scenario, dt_int: float | None = None, stride: int | None = None):
    co = build_collective_ops(sc.layout())
    me = MasterEquation(co, sc.gaussian_input())
    h = me_dt(sc, me, dt_int)
    n = int(round(sc.sim["T"] / h))
    if stride is None:
        stride = max(1, int(round(sc.sim["stride"] * sc.sim["dt"] / h)))
    return integrate(me, sc.initial_dm(), sc.sim["T"], h, stride=stride if stride <= n else n)


def run_collide(sc: Scenario, dt: float | None = None, stride: int | None = None, keep_bins: bool = False):
    lay = sc.layout()
    co = build_collective_ops(lay)
    cfg = sc.collision_config(dt, stride)
    cfg.check_regime(co, lay)
    bins = gaussian_bin_source(sc.gaussian_input(), cfg.dt, cfg.bin_cutoff, cfg.resolved_mode(co) == "bidirectional")
    boson = [j for j, e in enumerate(lay.emitters) if e.kind == "boson"]
    return run_conveyor(sc.initial_dm(), bins, co, cfg, keep_bins=keep_bins, boson_sites=boson)


def run_traj(sc: Scenario, n_traj: int, seed: int, threads: int = 1, dt: float | None = None,
             stride: int | None = None, keep_records: bool = True):
    lay = sc.layout()
    co = build_collective_ops(lay)
    cfg = sc.collision_config(dt, stride)
    cfg.check_regime(co, lay)
    bins = coherent_bin_source(sc.gaussian_input(), cfg.dt, cfg.bin_cutoff, cfg.resolved_mode(co) == "bidirectional")
    obs = {name: O for name, O, cplx in sc.observables() if O is not None and not cplx}
    res = ensemble_average(sc.initial_state(), co, cfg, n_traj, seed, bins=bins, observables=obs, threads=threads,
                           keep_records=keep_records)
    return res, cfg


def run_compare(sc: Scenario, dts=None, with_traj: bool = False, n_traj: int | None = None, seed: int = 0,
                threads: int = 1) -> dict:
    """Trace-norm discrepancy between the conveyor and the master equation at T for each dt."""
    dts = list(dts or sc.sim["compare_dts"])
    ref = run_me(sc, stride=10 ** 9).states[-1].data
    disc = []
    for dt in dts:
        res = run_collide(sc, dt=dt, stride=10 ** 9)
        disc.append(trace_norm(res.states[-1].data - ref))
    ratios = [disc[i] / disc[i + 1] if disc[i + 1] > 0 else float("inf") for i in range(len(disc) - 1)]
    out = {"T": sc.sim["T"], "dts": dts, "discrepancy": disc, "ratios": ratios}
    if with_traj:
        n = n_traj or sc.sim["n_traj"]
        ens, cfg = run_traj(sc, n, seed, threads, stride=10 ** 9, keep_records=False)
        d = ens.rho[-1] - ref
        err = np.maximum(np.abs(ens.rho_stderr[-1].real), 1e-300)
        out["traj"] = {"n_traj": n, "trace_norm": trace_norm(d),
                       "max_z": float(np.max(np.abs(d.real) / err))}
    return out


def _out_path(args, stem: str, ext: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{stem}.{ext}"


def _emit_series(args, stem, header, rows) -> Path:
    if args.format == "json":
        return write_json(_out_path(args, stem, "json"),
                          {"columns": header, "rows": [[float(v) for v in r] for r in rows]})
    return write_csv(_out_path(args, stem, "csv"), header, rows)


def _apply_flags(sc: Scenario, args) -> Scenario:
    data = sc.to_json()
    for key in ("dt", "stride", "seed", "n_traj", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            data["simulation"][key] = v
    from .scenario import normalize

    return Scenario(normalize(data))


def cmd_me(sc, args) -> dict:
    res = run_me(sc)
    header, rows = observable_rows(sc, res.times, res.states)
    path = _emit_series(args, "me", header, rows)
    return {"output": str(path), "trace_drift": res.trace_drift, "min_eigenvalue": res.min_eigenvalue}


def cmd_collide(sc, args) -> dict:
    res = run_collide(sc)
    header, rows = observable_rows(sc, res.times, res.states)
    leak_at = [0.0] + [float(res.leakage[int(round(t / sc.sim["dt"])) - 1]) for t in res.times[1:]]
    header.append("leakage")
    rows = [r + [lk] for r, lk in zip(rows, leak_at)]
    path = _emit_series(args, "collide", header, rows)
    out = {"output": str(path), "leakage_max": float(res.leakage.max()), "leakage_flag": bool(res.flagged),
           "min_eigenvalue": res.min_eigenvalue}
    if args.save_states:
        dims = list(sc.layout().dims)
        out["states"] = str(write_states(_out_path(args, "collide_states", "bin"), dims, res.times, res.states))
    return out


def cmd_traj(sc, args) -> dict:
    res, cfg = run_traj(sc, sc.sim["n_traj"], sc.sim["seed"], sc.sim["threads"])
    header = ["t"]
    rows = [[t] for t in res.times]
    for name, (mean, err) in res.observables.items():
        header += [name, f"{name}.stderr"]
        for r, m, e in zip(rows, mean, err):
            r += [m, e]
    path = _emit_series(args, "traj_ensemble", header, rows)
    ev_rows = [[rec.index, n, n * cfg.dt, json.dumps(k)] for rec in res.records for n, k in rec.events]
    ev_path = write_csv(_out_path(args, "traj_events", "csv"), ["trajectory", "step", "time", "outcome"], ev_rows)
    return {"output": str(path), "events": str(ev_path), "n_traj": res.n_traj,
            "mean_clicks": float(res.clicks.mean())}


def cmd_df_scan(sc, args) -> dict:
    lay = sc.layout()
    scan_cfg = sc.data.get("df_scan", {})
    free = scan_cfg.get("free")
    free = uniform_phase_template(lay) if free is None else np.asarray(free, dtype=float)
    pts = phase_scan(lay, free, scan_cfg.get("grid", 64), threads=sc.sim["threads"])
    co = build_collective_ops(lay)
    df, na, nap = is_decoherence_free(co)
    result = {"layout": {"df": df, "A_norm": na, "Ap_norm": nap,
                         "hvac": (None if not df else ("zero" if isinstance(df_hamiltonian(co), str) else "nonzero"))},
              "scan": [p.to_json() for p in pts]}
    path = write_json(_out_path(args, "df_scan", "json"), result["scan"])
    return {"output": str(path), "df_points": [p.phases for p in pts if p.df], **result["layout"]}


def cmd_coeffs(sc, args) -> dict:
    table = coefficient_table(sc.layout(), sc.gaussian_input())
    path = write_json(_out_path(args, "coeffs", "json"), table)
    return {"output": str(path), "coefficients": table}


def cmd_compare(sc, args) -> dict:
    dts = args.dts or None
    res = run_compare(sc, dts, args.with_traj, sc.sim["n_traj"], sc.sim["seed"], sc.sim["threads"])
    if args.format == "json":
        path = write_json(_out_path(args, "compare", "json"), res)
    else:
        rows = [[dt, d, res["ratios"][i - 1] if i else float("nan")]
                for i, (dt, d) in enumerate(zip(res["dts"], res["discrepancy"]))]
        path = write_csv(_out_path(args, "compare", "csv"), ["dt", "trace_norm_discrepancy", "ratio"], rows)
    res["output"] = str(path)
    return res


COMMANDS = {"me": cmd_me, "collide": cmd_collide, "traj": cmd_traj, "df-scan": cmd_df_scan, "coeffs": cmd_coeffs,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="giantcm", description="Collision-model simulator for giant emitters.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("scenario", help="scenario JSON file")
        s.add_argument("--seed", type=int)
        s.add_argument("--dt", type=float)
        s.add_argument("--n-traj", dest="n_traj", type=int)
        s.add_argument("--out-dir", default=".")
        s.add_argument("--stride", type=int)
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("--threads", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "collide":
            s.add_argument("--save-states", action="store_true", help="also write the binary density matrices")
        if name == "compare":
            s.add_argument("--dts", type=float, nargs="+")
            s.add_argument("--with-traj", action="store_true")
    return p


def _error(code: int, exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ScenarioError):
        payload["problems"] = exc.problems
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sc = _apply_flags(parse_scenario(args.scenario), args)
        summary = COMMANDS[args.command](sc, args)
    except NumericalError as exc:
        return _error(EXIT_NUMERICAL, exc)
    except GiantCMError as exc:
        return _error(EXIT_VALIDATION, exc)
    print(json.dumps(summary, default=_jsonable))
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    return fmt(x)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
