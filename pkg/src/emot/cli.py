"""Command line entry point: ``emot simulate | solve | verify | export-plots | inspect``.

Exit codes: 0 ok, 1 verification failure, 2 config/input error,
3 simulation error, 4 infeasible instance, 5 solver abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io as eio
from .config import ConfigError, grid_spec, heston_params, load_config, noise_spec, solver_config
from .dual import (
    apply_invariant_transform,
    dual_objective,
    induced_plan,
    plan_from_array,
    relative_entropy,
)
from .estimator import MartingaleSinkhorn
from .exceptions import InfeasibleError, SolverAbort
from .market import RNG_IDENTITY, build_instance, simulate_heston
from .measures import reference_measure
from .oracle import (
    check_first_order,
    duality_gap,
    full_gradient_ascent,
    random_instance,
)
from .sinkhorn import SolverConfig, iterate

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SIM, EXIT_INFEASIBLE, EXIT_ABORT = range(6)

logger = logging.getLogger("emot")
_f = eio.format_float


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["io"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, inputs_hash: str, extra=None):
    files = sorted(p for p in out.iterdir()
                   if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "format_version": eio.FORMAT_VERSION,
        "input_hash": inputs_hash,
        "config": cfg,
        "files": {p.name: eio.file_digest(p) for p in files},
    }
    if extra:
        manifest.update(extra)
    eio.write_json(out / "manifest.json", manifest)
    return manifest


def _config_hash(cfg, *sections) -> str:
    import hashlib

    blob = json.dumps({s: cfg[s] for s in sections}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def cmd_simulate(args, cfg) -> int:
    params = heston_params(cfg)
    grids = grid_spec(cfg)
    noise = noise_spec(cfg)
    out = _out_dir(args, cfg)
    try:
        sample = simulate_heston(params, threads=args.threads)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            inst = build_instance(sample, grids, noise, seed=params.seed,
                                  c_cap=float(cfg["grids"]["c_cap"]),
                                  match_means=bool(cfg["grids"]["match_means"]))
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except ConfigError:
        raise
    except Exception as exc:
        raise CliError(EXIT_SIM, f"simulation failed: {exc}") from exc
    in_hash = _config_hash(cfg, "heston", "grids", "noise")
    eio.write_instance(out, inst, extra={"input_hash": in_hash})
    meta = sample.metadata()
    meta.update({
        "input_hash": in_hash,
        "mean_s1": float(sample.s1.mean()),
        "mean_s2": float(sample.s2.mean()),
        "mean_v1": float(sample.v1.mean()),
        "std_s2": float(sample.s2.std(ddof=1)),
        "std_v1": float(sample.v1.std(ddof=1)),
        "warnings": [str(w.message) for w in caught],
    })
    eio.write_json(out / "sample.json", meta)
    if cfg["io"]["export_sample"]:
        triples = np.column_stack([sample.s1, sample.s2, sample.v1])
        (out / "samples.bin").write_bytes(np.ascontiguousarray(triples, "<f8").tobytes())
    _write_manifest(out, "simulate", cfg, in_hash,
                    {"seed": params.seed, "rng": RNG_IDENTITY,
                     "shape": list(inst.shape)})
    print(f"wrote instance {inst.shape} to {out}")
    return EXIT_OK


def _instance_dir(args, cfg, out):
    d = args.instance or cfg["io"]["instance_dir"] or out
    d = Path(d)
    if not (d / eio.COST_FILE).exists():
        raise CliError(EXIT_CONFIG, f"no instance files in {d}")
    return d


def cmd_solve(args, cfg) -> int:
    out = _out_dir(args, cfg)
    inst_dir = _instance_dir(args, cfg, out)
    try:
        inst = eio.read_instance(inst_dir)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read instance: {exc}") from exc
    solver = solver_config(cfg)
    s = cfg["solver"]
    est = MartingaleSinkhorn(max_iters=solver.max_iters, g_tol=solver.g_tol,
                             marginal_tol=solver.marginal_tol,
                             martingale_tol=solver.martingale_tol,
                             root_tol=solver.root_tol, trace_every=solver.trace_every,
                             center=bool(s["center"]), mean_tol=float(s["mean_tol"]))
    in_hash = eio.digest_files([inst_dir / f for f in eio.MEASURE_FILES.values()]
                               + [inst_dir / eio.COST_FILE])
    in_hash = _config_hash({"solver": cfg["solver"], "h": in_hash}, "solver", "h")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            est.fit(inst)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except InfeasibleError as exc:
        report = getattr(exc, "report", None)
        eio.write_json(out / "feasibility.json",
                       {"error": type(exc).__name__, "message": str(exc),
                        "report": report.to_dict() if report else None})
        raise CliError(EXIT_INFEASIBLE, f"infeasible instance: {exc}") from exc
    except SolverAbort as exc:
        if exc.trace is not None:
            eio.write_trace(out / "trace.csv", exc.trace, timing=cfg["io"]["timing"])
        raise CliError(EXIT_ABORT, f"solver aborted: {exc}") from exc

    if Path(inst_dir).resolve() != out.resolve():
        eio.write_instance(out, inst)
    eio.write_potentials(out, inst, est.potentials_)
    eio.write_plan(out / eio.PLAN_FILE, est.plan_, {"input_hash": in_hash})
    eio.write_trace(out / "trace.csv", est.trace_, timing=cfg["io"]["timing"])
    fit = est.convergence_rate()
    plan = est.plan_
    summary = {
        "input_hash": in_hash,
        "G": est.score(),
        "reason": est.reason_,
        "n_iter": est.n_iter_,
        "x_marginal_error": plan.x_marginal_error,
        "y_marginal_error": plan.y_marginal_error,
        "max_relative_martingale_residual": plan.max_relative_residual,
        "total_mass": plan.total_mass,
        "relative_entropy": relative_entropy(plan, inst),
        "duality_gap": duality_gap(inst, plan, est.potentials_),
        "rate": fit[0] if fit else None,
        "r_squared": fit[1] if fit else None,
        "shift": est.shift_,
        "shape": list(inst.shape),
        "feasibility": est.feasibility_.to_dict(),
    }
    eio.write_json(out / "summary.json", summary)
    _write_manifest(out, "solve", cfg, in_hash)
    print(f"{est.reason_} after {est.n_iter_} iterations: G={summary['G']:.15g} "
          f"mx_err={plan.x_marginal_error:.2e} mart_rel={plan.max_relative_residual:.2e}")
    return EXIT_OK


def _verify_one(label, inst, tol, rows):
    cfg = SolverConfig(max_iters=100_000, g_tol=1e-16, marginal_tol=1e-14,
                       martingale_tol=1e-14)
    res = iterate(inst, config=cfg)
    ref = full_gradient_ascent(inst)
    g_s, g_o = res.G, dual_objective(inst, ref)
    tv = 0.5 * float(np.abs(res.plan.pi - induced_plan(inst, ref).pi).sum())
    kkt = check_first_order(inst, res.potentials, tol)
    gap = duality_gap(inst, res.plan, res.potentials)
    checks = {
        "dG": abs(g_s - g_o),
        "TV": tv,
        "KKT": max(kkt.martingale, kkt.x_marginal, kkt.y_marginal),
        "gap": abs(gap),
    }
    ok = all(v <= tol for v in checks.values())
    rows.append((label, "x".join(map(str, inst.shape)), checks, ok))
    return ok


def cmd_verify(args, cfg) -> int:
    v = cfg["verify"]
    tol = float(v["tol"])
    rows = []
    if v["mode"] == "random":
        base = int(v["seed"]) if args.seed is None else args.seed
        for s in range(int(v["seeds"])):
            _verify_one(f"seed {base + s}", random_instance(base + s, tuple(v["max_shape"])),
                        tol, rows)
    elif v["mode"] == "instance":
        if not v["instance_dir"]:
            raise ConfigError("verify.instance_dir is required in instance mode")
        try:
            inst = eio.read_instance(v["instance_dir"])
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, f"cannot read instance: {exc}") from exc
        if v["potentials_dir"]:
            pot = eio.read_potentials(v["potentials_dir"])
            if v["transform"]:
                c1, c2 = v["transform"]
                pot = apply_invariant_transform(pot, c1, c2, inst.x, inst.y)
            if v["perturb"]:
                pot = type(pot)(pot.f, pot.g, pot.h + float(v["perturb"]))
            kkt = check_first_order(inst, pot, tol)
            rows.append(("potentials", "x".join(map(str, inst.shape)),
                         {"mart": kkt.martingale, "x_marg": kkt.x_marginal,
                          "y_marg": kkt.y_marginal}, kkt.passed))
        else:
            _verify_one("instance", inst, tol, rows)
    else:
        raise ConfigError(f"verify.mode must be 'random' or 'instance', got {v['mode']!r}")

    for label, shape, checks, ok in rows:
        detail = "  ".join(f"{k}={val:.2e}" for k, val in checks.items())
        print(f"{'PASS' if ok else 'FAIL'}  {label:<12} {shape:<7} {detail}")
    passed = sum(r[3] for r in rows)
    print(f"{passed}/{len(rows)} passed (tol {tol:g})")
    return EXIT_OK if passed == len(rows) else EXIT_VERIFY


def cmd_export_plots(args, cfg) -> int:
    rdir = Path(args.result_dir or args.out or cfg["io"]["out_dir"])
    try:
        inst = eio.read_instance(rdir)
        pi, _ = eio.read_tensor(rdir / eio.PLAN_FILE)
        trace = eio.read_trace(rdir / "trace.csv")
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"missing or unreadable artifacts in {rdir}: {exc}") from exc
    out = Path(args.out) if args.out and args.result_dir else rdir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    plan = plan_from_array(inst, pi)

    rows = ["axis,index,point,target,achieved,abs_gap"]
    for axis, m, got in (("x", inst.mu, plan.x_marginal()), ("y", inst.nu, plan.y_marginal())):
        for i, (p, t, a) in enumerate(zip(m.points, m.weights, got)):
            rows.append(f"{axis},{i},{_f(p)},{_f(t)},{_f(a)},{_f(abs(a - t))}")
    (out / "marginal_overlay.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    rows = ["i,x,residual,relative"]
    for i, (x, r, rr) in enumerate(zip(inst.x, plan.martingale_residual,
                                       plan.relative_martingale_residual)):
        rows.append(f"{i},{_f(x)},{_f(r)},{_f(rr)}")
    (out / "martingale_residual.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    it, G = trace[:, 0], trace[:, 1]
    best = G.max()
    rows = ["iter,gap"] + [f"{int(i)},{_f(best - g)}" for i, g in zip(it, G)]
    (out / "convergence.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    k = int(args.z_index if args.z_index is not None else cfg["io"]["z_index"])
    if not 0 <= k < inst.shape[2]:
        raise CliError(EXIT_CONFIG, f"z-index {k} outside 0..{inst.shape[2] - 1}")
    q = reference_measure(inst)
    rows = ["i,j,x,y,plan,reference"]
    for i, x in enumerate(inst.x):
        for j, y in enumerate(inst.y):
            rows.append(f"{i},{j},{_f(x)},{_f(y)},{_f(pi[i, j, k])},{_f(q[i, j, k])}")
    (out / f"heatmap_z{k}.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote plot data to {out}")
    return EXIT_OK


def cmd_inspect(args, cfg) -> int:
    d = Path(args.result_dir or args.out or cfg["io"]["out_dir"])
    info = {"dir": str(d)}
    if (d / "manifest.json").exists():
        man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        info.update({k: man[k] for k in ("command", "input_hash", "files") if k in man})
    for name in (eio.COST_FILE, eio.PLAN_FILE):
        if (d / name).exists():
            info[name] = json.loads(eio.sidecar(d / name).read_text(encoding="utf-8"))["shape"]
    for fname in eio.MEASURE_FILES.values():
        if (d / fname).exists():
            info[fname] = len(eio.read_measure(d / fname))
    if len(info) == 1:
        raise CliError(EXIT_CONFIG, f"nothing to inspect in {d}")
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "export-plots": cmd_export_plots,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "solve":
            p.add_argument("--instance", help="directory holding the instance files")
        if name in ("export-plots", "inspect"):
            p.add_argument("result_dir", nargs="?", help="artifact directory")
        if name == "export-plots":
            p.add_argument("--z-index", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        overrides = {"heston": {"seed": args.seed}} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
