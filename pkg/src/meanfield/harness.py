"""Experiment drivers: threshold-crossing times, Dobrushin check, plots."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import equilibria, potentials
from .nbody import (EnergyObserver, ModeObserver, MomentumObserver, ParticleState,
                    run, sample_initial)
from .spectral import growing_mode, penrose_check
from .transport import EmpiricalMeasure, w1_exact

EPS0 = 0.1


class ParameterWarning(UserWarning):
    pass


class InvariantViolation(RuntimeError):
    pass


# -- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    equilibrium: dict = field(default_factory=lambda: {"kind": "two_stream", "theta": 0.05, "v0": 0.5})
    potential: dict = field(default_factory=lambda: {"kind": "cosine", "amplitude": 1.0})
    control: dict = field(default_factory=lambda: {"kind": "maxwellian", "theta": 1.0})
    alpha: float = 0.1
    K: int = 3
    N_list: list = field(default_factory=lambda: [1000, 10000, 100000])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eps0: float = EPS0
    threshold: float | None = None  # W1 units; default eps0 / (4 pi k0)
    mode_normalization: str = "density"
    mode_scale: float | None = None  # default: largest scale keeping eps_max * B <= 0.95
    dt: float = 0.01
    t_margin: float = 3.0
    output_every: int = 1
    C2: float | None = None
    s: float = 0.45
    workers: int = 1
    # Dobrushin check
    dob_N: int = 1000
    dob_eta: float = 1e-3
    dob_t_end: float = 2.0
    dob_dt: float = 1e-3
    dob_pairs: int = 10
    dob_checkpoints: int = 21
    dob_tol: float = 1e-9
    # sampling-rate experiment
    sr_m_list: list = field(default_factory=lambda: [100, 1000, 10000])
    sr_trials: int = 20
    sr_seed: int = 7
    sr_epsilon: float | None = None  # default: the largest admissible eps of the instability run
    sr_Q: int = 40000
    sr_nx: int = 200
    sr_nv: int = 8000
    sr_rel_gap: float = 0.02
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def build(self):
        return equilibria.from_config(self.equilibrium), potentials.from_config(self.potential)


def validate_parameters(cfg: ExperimentConfig, lam0: float) -> list[str]:
    """Check K lam0 >= C2 and alpha K <= s; violations become warnings."""
    _, pot = cfg.build()
    notes = []
    C2 = cfg.C2
    if C2 is None:
        try:
            C2 = 2.0 * pot.hessian_sup()
        except potentials.UnsupportedPotential:
            C2 = None
            notes.append("C2 unavailable for a non-smooth potential; growth rate is measured")
    if C2 is not None and cfg.K * lam0 < C2:
        notes.append(f"binding constraint K*lam0 >= C2: {cfg.K}*{lam0:.4g} < {C2:.4g}")
    if cfg.alpha * cfg.K > cfg.s:
        notes.append(f"binding constraint alpha*K <= s: {cfg.alpha}*{cfg.K} > {cfg.s}")
    for n in notes:
        warnings.warn(n, ParameterWarning)
    return notes


# -- fitting ------------------------------------------------------------------------

def fit_exponential(t, values, window=None) -> tuple[float, float, float]:
    """Least squares on log(value); returns (rate, intercept, r2)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if t.size < 2:
        raise ValueError("need at least two samples in the fit window")
    if np.any(y <= 0):
        raise ValueError("non-positive values in the fit window")
    return fit_line(t, np.log(y))


def fit_line(x, y) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icpt), r2


# -- time series ---------------------------------------------------------------------

@dataclass
class TimeSeries:
    records: list
    meta: dict

    def __post_init__(self):
        t = [r["t"] for r in self.records]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise InvariantViolation("time series is not strictly increasing")

    def column(self, key) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.records], dtype=float)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.meta}, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TimeSeries":
        lines = [json.loads(x) for x in open(path) if x.strip()]
        return cls(lines[1:], lines[0]["meta"])


class LowerBoundObserver:
    """Dual W1 lower bound against an x-uniform reference: |rho_k| / (2 pi k)."""

    def __init__(self, k: int):
        self.k = k

    def __call__(self, state, pot):
        m = np.mean(np.exp(-2j * np.pi * self.k * state.x))
        return {"w1_lower": float(abs(m) / (2 * np.pi * self.k))}


# -- instability experiment -----------------------------------------------------------

def _prepare_mode(cfg: ExperimentConfig, eq, pot):
    mode = growing_mode(eq, pot).normalized(cfg.mode_normalization)
    eps_max = min(cfg.N_list) ** (-cfg.alpha)
    B = mode.envelope()
    scale = cfg.mode_scale if cfg.mode_scale is not None else min(1.0, 0.95 / (eps_max * B))
    return mode.rescaled(scale), scale


def _single_run(eq, pot, mode, eps, N, seed, t_max, cfg, k0, delta, meta):
    state = sample_initial(eq, mode, eps, N, seed)
    obs = [ModeObserver(k0), LowerBoundObserver(k0), EnergyObserver(), MomentumObserver()]
    _, recs = run(state, pot, t_max, cfg.dt, obs, cfg.output_every)
    ts = TimeSeries(recs, meta)
    lb = ts.column("w1_lower")
    hit = np.nonzero(lb >= delta)[0]
    t_star = float(ts.column("t")[hit[0]]) if hit.size else None
    return ts, t_star


def instability_experiment(cfg: ExperimentConfig, out_dir=None, progress=None) -> dict:
    """Threshold-crossing times T*(N) for eps = N^-alpha and the stable control."""
    eq, pot = cfg.build()
    pc = penrose_check(eq, pot)
    if not pc.unstable:
        raise ValueError(f"equilibrium is Penrose stable (margin {pc.margin:.4g})")
    mode, scale = _prepare_mode(cfg, eq, pot)
    lam0, k0 = float(mode.lam.real), mode.k0
    notes = validate_parameters(cfg, lam0)
    delta = cfg.threshold if cfg.threshold is not None else cfg.eps0 / (4 * np.pi * k0)
    ctrl_eq = equilibria.from_config(cfg.control)
    rho_unit = 2 * abs(mode.density_hat())  # cosine amplitude of the sampled mode per unit eps
    digest = cfg.digest()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "config.yaml", "w") as fh:
            yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)

    runs = []
    for N in cfg.N_list:
        eps = N ** (-cfg.alpha)
        # eps * rho_unit * e^{lam0 t} reaches the threshold amplitude 2*(2 pi k0 delta)
        target = 4 * np.pi * k0 * delta
        t_cross = max(np.log(target / (eps * rho_unit)), 0.0) / lam0
        t_max = t_cross + cfg.t_margin / lam0
        for seed in cfg.seeds:
            for label, e, m, ep in (("unstable", eq, mode, eps), ("control", ctrl_eq, None, 0.0)):
                meta = {"N": N, "seed": seed, "case": label, "epsilon": ep,
                        "config_hash": digest, "code_version": __version__}
                ts, t_star = _single_run(e, pot, m, ep, N, seed, t_max, cfg, k0, delta, meta)
                t = ts.column("t")
                amp = np.hypot(ts.column("mode_re"), ts.column("mode_im"))
                rate = None
                if label == "unstable":
                    hi = t_star if t_star is not None else t[-1]
                    lo = 0.5 / lam0
                    sel = (t >= lo) & (t <= hi) & (amp > 0)
                    if sel.sum() >= 3:
                        rate = fit_exponential(t[sel], amp[sel])[0]
                p = ts.column("momentum")
                rec = {"N": N, "seed": seed, "case": label, "epsilon": ep, "t_star": t_star,
                       "crossed": t_star is not None, "growth_rate": rate,
                       "max_w1_lower": float(np.max(ts.column("w1_lower"))),
                       "momentum_drift": float(np.max(np.abs(p - p[0]))), "t_max": t_max}
                runs.append(rec)
                if out:
                    ts.to_jsonl(out / f"run_{label}_N{N}_s{seed}.jsonl")
                if progress:
                    progress(rec)

    unstable = [r for r in runs if r["case"] == "unstable"]
    control = [r for r in runs if r["case"] == "control"]
    per_N = []
    for N in cfg.N_list:
        ts_ = [r["t_star"] for r in unstable if r["N"] == N and r["t_star"] is not None]
        rates = [r["growth_rate"] for r in unstable if r["N"] == N and r["growth_rate"] is not None]
        enough = 2 * len(ts_) > len(cfg.seeds)
        per_N.append({"N": N, "t_star_median": float(np.median(ts_)) if enough else None,
                      "crossings": len(ts_), "runs": len(cfg.seeds),
                      "growth_rate_median": float(np.median(rates)) if rates else None})
    usable = [p for p in per_N if p["t_star_median"] is not None]
    fit = None
    if len(usable) >= 3:
        a, b, r2 = fit_line(np.log([p["N"] for p in usable]), [p["t_star_median"] for p in usable])
        fit = {"a": a, "b": b, "r2": r2}
    predicted = cfg.alpha / lam0
    report = {
        "lam0": lam0, "k0": k0, "threshold": delta, "mode_scale": scale,
        "predicted_slope": predicted, "fit": fit, "per_N": per_N, "runs": runs,
        "parameter_notes": notes, "config_hash": digest,
        "slope_rel_error": abs(fit["a"] - predicted) / predicted if fit else None,
        "control_crossings": sum(r["crossed"] for r in control),
        "control_max_w1_lower": max((r["max_w1_lower"] for r in control), default=0.0),
        "growth_rate_rel_errors": [abs(p["growth_rate_median"] - lam0) / lam0
                                   for p in per_N if p["growth_rate_median"] is not None],
        "metric": "dual witness |rho_k|/(2 pi k)",
    }
    if out:
        write_csv(out / "tstar.csv", ["N", "t_star_median", "crossings", "runs", "growth_rate_median"],
                  [[p[k] for k in ("N", "t_star_median", "crossings", "runs", "growth_rate_median")]
                   for p in per_N])
        write_csv(out / "runs.csv", list(runs[0].keys()), [list(r.values()) for r in runs])
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True, default=float)
    return report


# -- Dobrushin check -----------------------------------------------------------------

def _jitter(state: ParticleState, eta: float, seed: int) -> ParticleState:
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0xD0B]))
    return ParticleState(state.x.copy(), state.v + rng.uniform(-eta, eta, state.N), state.t, state.seed)


def _w1_particles(a: ParticleState, b: ParticleState) -> float:
    return w1_exact(EmpiricalMeasure(a.x, a.v), EmpiricalMeasure(b.x, b.v))[0]


def dobrushin_check(cfg: ExperimentConfig, out_dir=None, eta: float | None = None,
                    pairs: int | None = None) -> dict:
    """W1(mu(t), nu(t)) <= e^{C0 t} W1(mu(0), nu(0)) along paired N-body runs."""
    eq, pot = cfg.build()
    C0 = 2.0 * pot.hessian_sup()
    eta = cfg.dob_eta if eta is None else eta
    pairs = cfg.dob_pairs if pairs is None else pairs
    n_steps = int(round(cfg.dob_t_end / cfg.dob_dt))
    every = max(1, n_steps // (cfg.dob_checkpoints - 1))
    rows, violations, rates = [], [], []
    for p in range(pairs):
        a = sample_initial(eq, None, 0.0, cfg.dob_N, 1000 + p)
        b = _jitter(a, eta, 1000 + p)
        _, ra = _trajectory(a, pot, cfg, every)
        _, rb = _trajectory(b, pot, cfg, every)
        w0 = _w1_particles(ra[0], rb[0])
        ts, ws = [], []
        for sa, sb in zip(ra, rb):
            w = _w1_particles(sa, sb)
            bound = np.exp(C0 * sa.t) * w0 * (1 + cfg.dob_tol) + 1e-15
            ok = w <= bound
            rows.append([p, sa.t, w, bound, ok])
            ts.append(sa.t)
            ws.append(w)
            if not ok:
                violations.append({"pair": p, "t": sa.t, "w1": w, "bound": bound})
        if w0 > 0:
            rates.append(fit_exponential(ts, ws)[0])
    report = {"C0": C0, "eta": eta, "pairs": pairs, "N": cfg.dob_N,
              "violations": violations, "earliest_violation": min((v["t"] for v in violations), default=None),
              "growth_rates": rates, "max_rate_over_C0": max(rates) / C0 if rates else 0.0,
              "rows": rows}
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "dobrushin.csv", ["pair", "t", "w1", "bound", "ok"], rows)
        with open(out / "dobrushin.json", "w") as fh:
            json.dump({k: v for k, v in report.items() if k != "rows"}, fh, indent=1, default=float)
    return report


def _trajectory(state, pot, cfg, every):
    snaps = []

    class Keep:
        def __call__(self, s, pot):
            snaps.append(s.copy())
            return {}

    run(state, pot, cfg.dob_t_end, cfg.dob_dt, [Keep()], every)
    return None, snaps


# -- output ------------------------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if x is None else (repr(float(x)) if isinstance(x, (float, np.floating)) else x)
                        for x in r])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


PLOT_KINDS = {
    "growth": ("t", "mode_abs", "log", "|rho_k0(t)|"),
    "tstar": ("log_N", "t_star", "linear", "T*"),
    "sampling": ("m", "mean", "loglog", "E W1"),
    "dobrushin": ("t", "w1", "log", "W1(mu(t), nu(t))"),
}


def plot_csv(csv_path, svg_path, kind: str) -> None:
    """Render a CSV written by emit_plots; identical CSV gives an identical SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "meanfield"
    header, rows = read_csv(csv_path)
    cols = {h: np.array([float(r[i]) if r[i] != "" else np.nan for r in rows]) for i, h in enumerate(header)}
    xk, yk, scale, label = PLOT_KINDS[kind]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(cols[xk], cols[yk], "o" if kind in ("tstar", "sampling") else "-", label=label)
    for extra in [h for h in header if h.startswith("ref_")]:
        ax.plot(cols[xk], cols[extra], "--", label=extra[4:])
    if scale == "log":
        ax.set_yscale("log")
    elif scale == "loglog":
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xk)
    ax.set_ylabel(label)
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_plots(report: dict, out_dir) -> list[Path]:
    """Write <kind>.csv and <kind>.svg for every plottable block in ``report``.

    Recognized keys: growth {t, mode_abs, lam0}, tstar {N, t_star, a, b},
    sampling {m, mean, slope, intercept}, dobrushin {t, w1, bound}.
    """
    out = Path(out_dir)
    files = []
    blocks = {k: report[k] for k in PLOT_KINDS if report.get(k)}
    if not blocks:
        return files
    out.mkdir(parents=True, exist_ok=True)
    for kind, blk in blocks.items():
        if kind == "growth":
            t = np.asarray(blk["t"], float)
            y = np.asarray(blk["mode_abs"], float)
            ref = y[0] * np.exp(blk["lam0"] * (t - t[0]))
            header, rows = ["t", "mode_abs", "ref_lam0"], list(zip(t, y, ref))
        elif kind == "tstar":
            x = np.log(np.asarray(blk["N"], float))
            y = np.asarray(blk["t_star"], float)
            header, rows = ["log_N", "t_star", "ref_fit"], list(zip(x, y, blk["a"] * x + blk["b"]))
        elif kind == "sampling":
            m = np.asarray(blk["m"], float)
            y = np.asarray(blk["mean"], float)
            header, rows = ["m", "mean", "ref_fit"], list(zip(m, y, np.exp(blk["intercept"]) * m ** blk["slope"]))
        else:
            header, rows = ["t", "w1", "ref_bound"], list(zip(blk["t"], blk["w1"], blk["bound"]))
        csv_path, svg_path = out / f"{kind}.csv", out / f"{kind}.svg"
        write_csv(csv_path, header, rows)
        plot_csv(csv_path, svg_path, kind)
        files += [csv_path, svg_path]
    return files
