"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration/schema error, 3 numerical failure
(a ``diagnostic.json`` is written next to the other outputs).
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys

import numpy as np

from . import bounds, convex
from .config import ConfigError, experiment, graph_spec, load_config, time_grid
from .errors import LindlocError
from .evolution import evolve_many
from .lattice import c_mu, generator_mu_norm
from .lindblad import ClassicalChain, Generator, embed_classical
from .operators import OperatorSum, PauliString
from .report import OutputWriter

SUBCOMMANDS = (
    "constants", "evolve", "lightcone", "check-convex", "check-substochastic",
    "graph-cases", "decay-fit", "path-series", "verify-bound",
)


def _supports(exp):
    obs = exp.cfg.get("observables", {})
    A = OperatorSum.parse(obs.get("A", "Z0"))
    B = PauliString.parse(obs.get("B", "X0"))
    return A, B


def _params(exp, A_support=(), B_support=()):
    b = exp.cfg.get("bound", {})
    return bounds.derive_params(
        exp.generator, exp.spec, exp.F, exp.lattice, exp.mu, A_support, B_support,
        decay_times=time_grid(exp.cfg.get("decay", {}).get("times"), 10.0, 41),
        patch_sites=b.get("patch_sites", 4), C_override=b.get("C_override"), xi=b.get("xi"),
        lam_override=b.get("lambda_override"),
    )


def cmd_constants(exp, args, out):
    gen = exp.generator
    A, B = _supports(exp)
    p = _params(exp, A.support, B.support)
    body = p.to_json()
    body["l_mu_norm"] = generator_mu_norm(gen, exp.F, exp.lattice, exp.mu) if gen.terms else 0.0
    body["c_mu_literal"] = c_mu(exp.F, exp.lattice, exp.mu, "literal")
    body["n_terms"] = {"L0": len(gen.l0), "L1": len(gen.l1)}
    out.json("constants.json", body)
    return {k: body[k] for k in ("f_norm", "c_mu", "l_mu_norm", "c_phi", "v", "lambda")}


def cmd_evolve(exp, args, out):
    gen = exp.generator
    times = time_grid(exp.cfg.get("times"))
    obs = exp.cfg.get("observables", {})
    names = obs.get("evolve", [obs.get("A", "Z0")])
    rows, unital = [], []
    for name in names:
        for t, op in zip(times, evolve_many(gen, OperatorSum.parse(name), times, exp.method)):
            for p, c in sorted(op.terms.items(), key=lambda kv: kv[0].label()):
                rows.append((name, t, p.label(), c.real, c.imag))
    ident = evolve_many(gen, OperatorSum.identity(), times, exp.method, sites=gen.sites)
    for t, op in zip(times, ident):
        unital.append({"t": t, "residual": float(np.abs((op - OperatorSum.identity()).to_vector(gen.sites)).max(initial=0.0))})
    out.csv("evolve.csv", ["observable", "t", "pauli", "re", "im"], rows)
    out.json("evolve.json", {"observables": names, "times": times, "unitality": unital})
    return {"rows": len(rows), "max_unitality_residual": max(u["residual"] for u in unital)}


def _profile(exp, args):
    A, B = _supports(exp)
    obs = exp.cfg.get("observables", {})
    placements = obs.get("placements", [s for s in exp.lattice.sites if s not in A.support])
    times = time_grid(exp.cfg.get("times"), 4.0, 40)
    prof = bounds.commutator_profile(exp.generator, A, B, placements, times, exp.lattice, exp.method,
                                     threads=args.threads)
    return A, B, prof


def _applicable(form, params):
    # the localized envelope is clipped to zero everywhere once lam >= v
    return form != "localized" or params.v > params.lam


def _write_profile(out, name, prof, report):
    rows = []
    for i, lab, d, t, v in prof.long_rows():
        j = int(np.searchsorted(prof.times, t))
        rows.append((prof.placements[i], lab, d, t, v, report.rhs[i, j], report.margin[i, j]))
    out.csv(name, ["placement", "b", "d", "t", "lhs", "rhs", "margin"], rows)


def cmd_lightcone(exp, args, out):
    A, B, prof = _profile(exp, args)
    params = _params(exp, A.support, B.support)
    form = exp.cfg.get("bound", {}).get("form", "localized")
    rep = bounds.verify_bound(prof, params, form)
    loc = exp.cfg.get("localization", {})
    t_max = loc.get("t_max", float(prof.times.max()))
    verdict = bounds.localization_verdict(prof, loc.get("epsilon", 1e-3), loc.get("d_min", 3), t_max)
    vel = bounds.effective_velocity(prof, loc.get("epsilon", 1e-3))
    _write_profile(out, "lightcone.csv", prof, rep)
    out.json("lightcone.json", {
        "observable": prof.observable, "rejected_placements": list(prof.rejected),
        "params": params.to_json(), "bound": rep.to_json(), "bound_applicable": _applicable(form, params),
        "localized": verdict,
        "localization": {"epsilon": loc.get("epsilon", 1e-3), "d_min": loc.get("d_min", 3), "t_max": t_max},
        "v_eff": vel.v_eff, "v_eff_fit_ok": vel.fit_ok, "front": list(vel.front),
    })
    if args.plot:
        from .plotting import lightcone_png

        out.binary("lightcone.png", lightcone_png(prof, params))
    return {"localized": verdict, "bound_pass": rep.passed, "v": params.v, "lambda": params.lam}


def cmd_verify_bound(exp, args, out):
    A, B, prof = _profile(exp, args)
    params = _params(exp, A.support, B.support)
    form = exp.cfg.get("bound", {}).get("form", "localized")
    rep = bounds.verify_bound(prof, params, form)
    _write_profile(out, "verify_bound.csv", prof, rep)
    out.json("verify_bound.json", {"params": params.to_json(), "bound_applicable": _applicable(form, params),
                                   **rep.to_json()})
    return {"pass": rep.passed, "worst": rep.worst}


def cmd_check_convex(exp, args, out):
    times = exp.cfg.get("convexity_times", [0.1, 0.5, 1.0, 5.0])
    rep = convex.preservation_check(exp.generator, exp.spec, times, method=exp.method)
    out.json("preservation.json", {"spec": exp.spec.to_json(), **rep.to_json()})
    return {"pass": rep.passed, "max_gain": max(rep.max_l1_gain)}


def cmd_check_substochastic(exp, args, out):
    blocks = exp.cfg.get("substochastic", {}).get("blocks")
    if blocks is None:
        blocks = exp.cfg.get("generator", {}).get("classical", [])
    if not blocks:
        raise ConfigError("check-substochastic needs substochastic.blocks or generator.classical")
    times = exp.cfg.get("convexity_times", [0.1, 0.5, 1.0, 5.0])
    results = []
    for b in blocks:
        rep = convex.substochastic_check(b["matrix"], len(b["support"]))
        gen = embed_classical(ClassicalChain(((tuple(b["support"]), b["matrix"]),)))
        pres = convex.preservation_check(gen, convex.ConvexBasisSpec.diagonal(), times)
        results.append({"support": b["support"], **rep.to_json(), "preservation": pres.to_json()})
    out.json("substochastic.json", {"blocks": results})
    return {"blocks": len(results), "all_pass": all(r["pass"] for r in results)}


def cmd_graph_cases(exp, args, out):
    gcfg = exp.cfg.get("graph_cases") or exp.cfg.get("generator", {}).get("graph")
    if gcfg is None:
        raise ConfigError("graph-cases needs a graph_cases or generator.graph section")
    spec = graph_spec(gcfg)
    t = gcfg.get("t", 1.0)
    rows, worst_exact, worst_tab, worst_r = [], 0.0, 0.0, 0.0
    verts = spec.vertices
    for letters in itertools.product("IXYZ", repeat=len(verts)):
        sigma = PauliString(tuple((v, l) for v, l in zip(verts, letters) if l != "I"))
        for k in verts:
            case = convex.classify_graph_case(sigma, k, spec)
            num = convex.evolve_graph_term(sigma, k, spec, t)
            e_exact = float(np.abs((num - convex.graph_case_exact(sigma, k, spec, t)).to_vector(verts)).max())
            e_tab = float(np.abs((num - convex.graph_case_tabulated(sigma, k, spec, t)).to_vector(verts)).max())
            r = convex.membership(num, convex.ConvexBasisSpec.full()).r
            worst_exact, worst_tab, worst_r = max(worst_exact, e_exact), max(worst_tab, e_tab), max(worst_r, r)
            rows.append((sigma.label(), k, case.case, case.closed_form, case.tabulated_form, e_exact, e_tab, r))
    out.csv("graph_cases.csv", ["sigma", "k", "case", "closed_form", "tabulated_form", "err_exact", "err_tabulated", "r"], rows)
    summary = {"alpha": spec.alpha, "rate": spec.rate, "t": t, "rows": len(rows),
               "max_err_exact": worst_exact, "max_err_tabulated": worst_tab, "max_membership_r": worst_r}
    out.json("graph_cases.json", summary)
    return summary


def cmd_decay_fit(exp, args, out):
    gen = exp.generator
    l1 = gen.l1 if gen.l1.terms else gen
    dcfg = exp.cfg.get("decay", {})
    times = time_grid(dcfg.get("times"), 10.0, 41)
    sites = dcfg.get("sites")
    if sites is None:
        l1 = bounds._lambda_patch(l1, exp.cfg.get("bound", {}).get("patch_sites", 4))
    else:
        l1 = Generator(tuple(t for t in l1.terms if set(t.support) <= set(sites)))
    rep = convex.decay_rate(l1, exp.spec, times, sites, exp.method)
    lam = rep.lambda_fit
    out.csv("decay.csv", ["t", "deviation", "bound"],
            [(t, d, np.exp(-lam * t) if np.isfinite(lam) else float("nan")) for t, d in zip(rep.times, rep.deviation)])
    out.json("decay.json", {"sites": list(l1.sites), **rep.to_json(),
                            "lambda_certified": bounds.certified_rate(rep.times, rep.deviation)})
    if args.plot:
        from .plotting import decay_png

        out.binary("decay.png", decay_png(rep.times, rep.deviation, lam))
    return {"lambda_fit": lam, "fit_ok": rep.fit_ok}


def cmd_path_series(exp, args, out):
    pcfg = exp.cfg.get("path_series", {})
    A_sup = tuple(pcfg.get("A", [0]))
    Z = tuple(pcfg.get("Z", [exp.lattice.n_sites - 2, exp.lattice.n_sites - 1]))
    ts = pcfg.get("t", [0.1, 0.2])
    A = OperatorSum.parse(exp.cfg.get("observables", {}).get("A", f"Z{A_sup[0]}"))
    params = _params(exp, A_sup, Z)
    entries = []
    measured = None
    if any(t.support == Z for t in exp.generator.l0.terms):
        measured = bounds.boundary_response(exp.generator, A, Z, ts, exp.method)
    for i, t in enumerate(ts):
        ser = bounds.path_weight_series(exp.lattice, exp.generator, A.support, Z, pcfg.get("n_max", 3), exp.F,
                                        exp.mu, t, params.lam, params.c_phi, params.l0_mu_norm, exp.spec)
        entry = {"t": t, **ser.to_json()}
        if measured is not None:
            entry["measured"] = float(measured[i])
            entry["certified"] = bool(measured[i] <= ser.total)
        entries.append(entry)
    out.json("path_series.json", {"A": A.support, "Z": list(Z), "lambda": params.lam, "entries": entries})
    return {"certified": all(e.get("certified", True) for e in entries)}


HANDLERS = {
    "constants": cmd_constants,
    "evolve": cmd_evolve,
    "lightcone": cmd_lightcone,
    "check-convex": cmd_check_convex,
    "check-substochastic": cmd_check_substochastic,
    "graph-cases": cmd_graph_cases,
    "decay-fit": cmd_decay_fit,
    "path-series": cmd_path_series,
    "verify-bound": cmd_verify_bound,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lindloc", description="Local Lindblad dynamics and localization bounds.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="TOML or JSON experiment file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: LINDLOC_THREADS or 1)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--t-max", type=float, default=None, help="override times.t_max")
    ap.add_argument("--mu", type=float, default=None, help="override mu")
    ap.add_argument("--plot", action="store_true", help="also render PNG figures")
    return ap


def _threads(flag, cfg) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("LINDLOC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return cfg.get("threads", 1)


def _fail(out, args, status, exc, code):
    if code == 3:
        details = exc.details if isinstance(exc, LindlocError) else {}
        out.json("diagnostic.json", {"error": type(exc).__name__, "message": str(exc),
                                     "details": {k: _plain(v) for k, v in details.items()}})
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    out.manifest({"subcommand": args.subcommand, "status": status})
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = OutputWriter(args.out)
    try:
        cfg = load_config(args.config)
        if args.t_max is not None:
            cfg.setdefault("times", {})
            cfg["times"].pop("values", None)
            cfg["times"]["t_max"] = args.t_max
        args.threads = _threads(args.threads, cfg)
        exp = experiment(cfg, seed=args.seed, mu=args.mu)
        try:
            exp.generator
        except LindlocError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        summary = HANDLERS[args.subcommand](exp, args, out)
    except ConfigError as exc:
        return _fail(out, args, "config-error", exc, 2)
    except (LindlocError, ArithmeticError, MemoryError, np.linalg.LinAlgError) as exc:
        return _fail(out, args, "numerical-error", exc, 3)
    out.manifest({"subcommand": args.subcommand, "status": "ok"})
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def _plain(v):
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
