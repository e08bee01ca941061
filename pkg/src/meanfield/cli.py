"""Command-line entry point: ``meanfield <group> <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import equilibria, potentials


def _model(args):
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = yaml.safe_load(fh) or {}
    eq_cfg = dict(cfg.get("equilibrium", {}))
    pot_cfg = dict(cfg.get("potential", {}))
    for key in ("kind", "theta", "v0", "file"):
        val = getattr(args, f"eq_{key}", None)
        if val is not None:
            eq_cfg[key] = val
    if getattr(args, "potential", None):
        pot_cfg["kind"] = args.potential
    if getattr(args, "amplitude", None) is not None:
        pot_cfg["amplitude"] = args.amplitude
    eq_cfg.setdefault("kind", "two_stream")
    if eq_cfg["kind"] == "two_stream":
        eq_cfg.setdefault("theta", 0.05)
        eq_cfg.setdefault("v0", 0.5)
    pot_cfg.setdefault("kind", "cosine")
    return equilibria.from_config(eq_cfg), potentials.from_config(pot_cfg), cfg


def _model_args(p):
    p.add_argument("--config", help="YAML file with equilibrium/potential blocks")
    p.add_argument("--eq", dest="eq_kind", choices=equilibria.KINDS)
    p.add_argument("--theta", dest="eq_theta", type=float)
    p.add_argument("--v0", dest="eq_v0", type=float)
    p.add_argument("--table", dest="eq_file", help="two-column (v, f) file for a tabulated profile")
    p.add_argument("--potential", choices=potentials.KINDS)
    p.add_argument("--amplitude", type=float)


def _print(obj):
    print(json.dumps(obj, sort_keys=True, default=float))


# -- spectral ---------------------------------------------------------------------

def cmd_spectral(args) -> int:
    from .linvlasov import SpectralState, apply_L
    from .spectral import dispersion, find_real_growth_rate, penrose_check, scan_unstable_spectrum

    eq, pot, _ = _model(args)
    pc = penrose_check(eq, pot)

    def residual(lam, k):
        from .spectral import Eigenmode
        mode = Eigenmode(k, complex(lam), eq)
        st = SpectralState.from_eigenmode(mode, k, eq.velocity_grid(args.n_v))
        r = apply_L(st, eq, pot).profiles - lam * st.profiles
        return float(np.linalg.norm(r) / np.linalg.norm(st.profiles))

    if args.command == "penrose":
        _print({"k0": pc.k0, "lambda_re": None, "lambda_im": None, "margin": pc.margin,
                "unstable": pc.unstable, "penrose_integral": pc.penrose_integral,
                "residual": None, "diagnostic": pc.diagnostic})
        return 0
    if args.command == "growth-rate":
        if not pc.unstable:
            _print({"k0": pc.k0, "margin": pc.margin, "error": "Penrose stable"})
            return 1
        lam = find_real_growth_rate(eq, pot, pc.k0)
        _print({"k0": pc.k0, "lambda_re": lam, "lambda_im": 0.0, "margin": pc.margin,
                "dispersion_abs": abs(dispersion(eq, pot, lam, pc.k0)), "residual": residual(lam, pc.k0)})
        return 0
    roots = scan_unstable_spectrum(eq, pot, (args.re_min, args.re_max, args.im_min, args.im_max))
    for r in roots:
        _print({"k0": r.k, "lambda_re": r.lam.real, "lambda_im": r.lam.imag, "margin": pc.margin,
                "dispersion_abs": r.residual, "residual": residual(r.lam, r.k)})
    if not roots:
        _print({"k0": None, "lambda_re": None, "lambda_im": None, "margin": pc.margin, "residual": None})
    return 0


# -- linear / hierarchy----------------------------------------------------------------

def cmd_linear(args) -> int:
    from .linvlasov import NormSpec, SpectralState, propagate, trajectory_records, write_jsonl
    from .spectral import growing_mode

    eq, pot, _ = _model(args)
    mode = growing_mode(eq, pot)
    v = eq.velocity_grid(args.n_v)
    state = SpectralState.from_eigenmode(mode, max(args.modes, mode.k0), v)
    t_end = args.t_end if args.t_end is not None else 5.0 / mode.lam.real
    traj = propagate(state, eq, pot, t_end, args.dt, save_every=args.save_every)
    recs = list(trajectory_records(traj, NormSpec()))
    if args.out:
        write_jsonl(args.out, recs)
    else:
        for r in recs:
            _print(r)
    return 0


def cmd_grenier(args) -> int:
    from .linvlasov import NormSpec, SpectralState, build_hierarchy, residual_Rapp, weighted_norm
    from .spectral import growing_mode

    eq, pot, _ = _model(args)
    mode = growing_mode(eq, pot)
    t_end = args.t_end if args.t_end is not None else 4.0 / mode.lam.real
    h = build_hierarchy(mode, eq, pot, args.K, t_end, args.dt, args.epsilon, args.n_v, args.save_every)
    out = open(args.out, "w") if args.out else sys.stdout
    for i, t in enumerate(h.times):
        rec = {"t": float(t)}
        for j in range(1, h.K + 1):
            st = SpectralState(h.v, h.profiles[i, j - 1], t)
            rho = st.density_hat()
            rec[f"g{j}_norm"] = weighted_norm(st, NormSpec())
            rec[f"g{j}_rho_abs"] = {str(k): float(abs(rho[st.M + k])) for k in range(0, st.M + 1)}
        rec["R_app_norm"] = residual_Rapp(h, eq, pot, float(t))[1]
        out.write(json.dumps(rec, sort_keys=True) + "\n")
    if args.out:
        out.close()
    if args.dump:
        h.dump(args.dump)
    return 0


# -- nbody ---------------------------------------------------------------------------

def cmd_nbody(args) -> int:
    from .nbody import SnapshotObserver, default_observers, run, sample_initial, write_jsonl
    from .spectral import growing_mode

    with open(args.config) as fh:
        cfg = yaml.safe_load(fh) or {}
    eq = equilibria.from_config(cfg.get("equilibrium", {}))
    pot = potentials.from_config(cfg.get("potential", {}))
    eps = float(cfg.get("epsilon", 0.0))
    mode = None
    k0 = int(cfg.get("k0", 1))
    if eps:
        mode = growing_mode(eq, pot).normalized(cfg.get("mode_normalization", "envelope"))
        mode = mode.rescaled(float(cfg.get("mode_scale", 1.0)))
        k0 = mode.k0
    state = sample_initial(eq, mode, eps, int(cfg.get("N", 1000)), int(cfg.get("seed", 0)))
    out_dir = Path(cfg.get("output_dir", "runs/nbody"))
    out_dir.mkdir(parents=True, exist_ok=True)
    obs = default_observers(k0)
    if cfg.get("snapshots", False):
        obs.append(SnapshotObserver(out_dir / "snapshots", eq))
    final, recs = run(state, pot, float(cfg.get("t_end", 10.0)), float(cfg.get("dt", 0.01)),
                      obs, int(cfg.get("output_every", 10)), cfg.get("force", "auto"))
    write_jsonl(out_dir / "observables.jsonl", recs)
    final.save(out_dir / "final.bin", pot, eq)
    p = np.array([r["momentum"] for r in recs])
    drift = float(np.max(np.abs(p - p[0])))
    _print({"N": state.N, "records": len(recs), "momentum_drift": drift, "output_dir": str(out_dir)})
    return 0 if drift <= 1e-12 * max(1.0, final.t) else 2


# -- w1 ------------------------------------------------------------------------------

def cmd_w1(args) -> int:
    from .transport import EmpiricalMeasure, w1_dual_lower_bound, w1_entropic, w1_exact

    a = EmpiricalMeasure.from_jsonl(args.a)
    b = EmpiricalMeasure.from_jsonl(args.b)
    if args.command == "exact":
        cost, plan = w1_exact(a, b)
        _print({"w1": cost, **plan.certificate, "metric": "euclidean(wrapped x, v)"})
    elif args.command == "entropic":
        res = w1_entropic(a, b, reg=args.reg)
        _print({"upper": res.upper, "lower": res.lower, "gap": res.gap, "reg": res.reg,
                "converged": res.converged})
    else:
        _print({"lower_bound": w1_dual_lower_bound(a, b, args.k), "k": args.k})
    return 0


# -- experiments --------------------------------------------------------------------

def cmd_experiment(args) -> int:
    from . import harness
    from .spectral import growing_mode
    from .transport import sampling_rate_experiment

    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    out = Path(args.out or cfg.output_dir) / args.command
    status = 0
    if args.command == "instability":
        rep = harness.instability_experiment(cfg, out, progress=lambda r: print(json.dumps(r, default=float),
                                                                             file=sys.stderr))
        plots = {}
        if rep["fit"]:
            med = [p for p in rep["per_N"] if p["t_star_median"] is not None]
            plots["tstar"] = {"N": [p["N"] for p in med], "t_star": [p["t_star_median"] for p in med],
                              "a": rep["fit"]["a"], "b": rep["fit"]["b"]}
        first = out / f"run_unstable_N{cfg.N_list[-1]}_s{cfg.seeds[0]}.jsonl"
        ts = harness.TimeSeries.from_jsonl(first)
        plots["growth"] = {"t": ts.column("t").tolist(),
                           "mode_abs": np.hypot(ts.column("mode_re"), ts.column("mode_im")).tolist(),
                           "lam0": rep["lam0"]}
        harness.emit_plots(plots, out)
        if any(r["momentum_drift"] > 1e-12 * max(1.0, r["t_max"]) for r in rep["runs"]):
            status = 2
        _print({k: rep[k] for k in ("lam0", "threshold", "fit", "predicted_slope", "slope_rel_error",
                                    "control_crossings", "per_N")})
    elif args.command == "dobrushin":
        rep = harness.dobrushin_check(cfg, out)
        first = [r for r in rep["rows"] if r[0] == 0]
        harness.emit_plots({"dobrushin": {"t": [r[1] for r in first], "w1": [r[2] for r in first],
                                          "bound": [r[3] for r in first]}}, out)
        status = 3 if rep["violations"] else 0
        _print({k: rep[k] for k in ("C0", "violations", "earliest_violation", "max_rate_over_C0")})
    else:
        eq, pot = cfg.build()
        mode = growing_mode(eq, pot).normalized(cfg.mode_normalization)
        eps = cfg.sr_epsilon
        if eps is None:
            eps = 0.95 / mode.envelope()
        table = sampling_rate_experiment(eq, mode, eps, cfg.sr_m_list, cfg.sr_trials, cfg.sr_seed,
                                         cfg.sr_Q, cfg.sr_nx, cfg.sr_nv, rel_gap=cfg.sr_rel_gap)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "sampling_rate.csv")
        harness.emit_plots({"sampling": {"m": table.m, "mean": table.mean, "slope": table.slope,
                                         "intercept": table.intercept}}, out)
        _print({"m": table.m, "mean": table.mean, "stderr": table.stderr, "slope": table.slope,
                **table.meta})
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meanfield")
    groups = ap.add_subparsers(dest="group", required=True)

    sp = groups.add_parser("spectral", help="Penrose check, growth rate, spectrum scan")
    sp.add_argument("command", choices=["penrose", "growth-rate", "scan"])
    _model_args(sp)
    sp.add_argument("--n-v", type=int, default=1024)
    sp.add_argument("--re-min", type=float, default=0.05)
    sp.add_argument("--re-max", type=float, default=3.0)
    sp.add_argument("--im-min", type=float, default=-2.0)
    sp.add_argument("--im-max", type=float, default=2.1)
    sp.set_defaults(func=cmd_spectral)

    lp = groups.add_parser("linear", help="linearized propagation of the growing mode")
    lp.add_argument("command", choices=["evolve"])
    _model_args(lp)
    lp.add_argument("--n-v", type=int, default=1024)
    lp.add_argument("--modes", type=int, default=1)
    lp.add_argument("--t-end", type=float)
    lp.add_argument("--dt", type=float, default=0.01)
    lp.add_argument("--save-every", type=int, default=10)
    lp.add_argument("--out")
    lp.set_defaults(func=cmd_linear)

    gp = groups.add_parser("grenier", help="build the high-order approximate solution")
    gp.add_argument("command", choices=["build"])
    _model_args(gp)
    gp.add_argument("--K", type=int, default=3)
    gp.add_argument("--epsilon", type=float, default=1e-3)
    gp.add_argument("--t-end", type=float)
    gp.add_argument("--dt", type=float, default=0.01)
    gp.add_argument("--n-v", type=int, default=1024)
    gp.add_argument("--save-every", type=int, default=10)
    gp.add_argument("--out")
    gp.add_argument("--dump", help="binary dump of all profiles")
    gp.set_defaults(func=cmd_grenier)

    np_ = groups.add_parser("nbody", help="N-body runs")
    np_.add_argument("command", choices=["run"])
    np_.add_argument("--config", required=True)
    np_.set_defaults(func=cmd_nbody)

    wp = groups.add_parser("w1", help="Wasserstein-1 between two JSONL measures")
    wp.add_argument("command", choices=["exact", "entropic", "lower-bound"])
    wp.add_argument("--a", required=True)
    wp.add_argument("--b", required=True)
    wp.add_argument("--reg", type=float)
    wp.add_argument("--k", type=int, default=1)
    wp.set_defaults(func=cmd_w1)

    ep = groups.add_parser("experiment", help="instability / dobrushin / sampling-rate experiments")
    ep.add_argument("command", choices=["instability", "dobrushin", "sampling-rate"])
    ep.add_argument("--config")
    ep.add_argument("--out")
    ep.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.func(args) or 0)


if __name__ == "__main__":
    sys.exit(main())
