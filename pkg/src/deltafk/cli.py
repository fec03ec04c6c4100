"""Command-line interface.

Every subcommand resolves one configuration from, in increasing order of
precedence, built-in defaults, the JSON document given by ``--config`` and
explicit flags.  The resolved configuration is embedded in the JSON report
printed on standard output (and written to ``--out`` when given).  Floats
are reported with 12 significant digits; reports contain no timestamps, so
a rerun with the same configuration reproduces them byte for byte.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.  Errors are
printed to standard error as a JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DeltaFKError, NumericalFailure, ValidationError

SUBCOMMANDS = ("psi", "nu", "kernel", "zmu", "rho", "simulate", "fk", "penalize", "zeta", "verify")


@dataclass
class ExperimentConfig:
    """Everything that determines a report."""

    experiment: str = ""
    model: dict = field(default_factory=lambda: {"kind": "brownian", "sigma2": 1.0})
    mu: float = 1.0
    a: float = 0.0
    quadrature: dict = field(default_factory=dict)
    contour: dict = field(default_factory=dict)
    path: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


PATH_DEFAULTS = {"t_end": 1.0, "dt": 1e-3, "eps": None, "seed": 0, "n_paths": 10_000,
                 "block_size": 4096, "workers": 1}


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # comma lists such as "-1,0,1" are values, not options
        self._negative_number_matcher = re.compile(r"^-\.?\d")

    def error(self, message):
        raise ConfigError(message)


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _complex(text: str) -> complex:
    return complex(text.replace(" ", "").replace("i", "j"))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deltafk", description="Delta-potential Feynman-Kac numerics for symmetric Levy processes.")
    sub = p.add_subparsers(dest="command")
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="JSON configuration document")
        sp.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
        sp.add_argument("--workers", type=int, help="worker processes for Monte Carlo")
        sp.add_argument("--out", help="directory for report and CSV artifacts")
        sp.add_argument("--model", choices=("brownian", "stable", "mixed"))
        sp.add_argument("--sigma2", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--B", type=float)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--a", type=float)
        return sp

    sp = common(sub.add_parser("psi", help="psi_lambda(x) by Fourier quadrature"))
    sp.add_argument("--lam", type=_complex)
    sp.add_argument("--x", type=_floats)

    common(sub.add_parser("nu", help="eigenvalue nu and eigenfunction constants"))

    sp = common(sub.add_parser("kernel", help="semigroup kernel p_mu(t, x, y) on a grid (CSV)"))
    sp.add_argument("--t", type=float)
    sp.add_argument("--x", type=_floats)
    sp.add_argument("--y", type=_floats)

    sp = common(sub.add_parser("zmu", help="normalizer Z_mu(t, x)"))
    sp.add_argument("--t", type=_floats)
    sp.add_argument("--x", type=float)

    sp = common(sub.add_parser("rho", help="h-transformed density rho_mu(t, x, y) (CSV)"))
    sp.add_argument("--t", type=float)
    sp.add_argument("--x", type=_floats)
    sp.add_argument("--y", type=_floats)

    sp = common(sub.add_parser("simulate", help="local-time estimates from simulated paths"))
    sp.add_argument("--t-end", dest="t_end", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--level", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--paths-csv", dest="paths_csv", type=int, help="stream this many raw paths to CSV")

    sp = common(sub.add_parser("fk", help="Feynman-Kac Monte Carlo against the spectral value"))
    sp.add_argument("--f", choices=("one", "psi_nu"))
    sp.add_argument("--t", type=float)
    sp.add_argument("--x", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--eps", type=float)

    sp = common(sub.add_parser("penalize", help="penalized-measure convergence table"))
    sp.add_argument("--T", type=_floats)
    sp.add_argument("--t", type=float)
    sp.add_argument("--radius", type=float, help="event |omega(t) - a| <= radius")
    sp.add_argument("--x", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--dt", type=float)

    sp = common(sub.add_parser("zeta", help="h-transformed chain histogram against pi_nu"))
    sp.add_argument("--dt", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--x0", type=float)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--range", dest="hist_range", type=float)

    sp = common(sub.add_parser("verify", help="run a verification suite"))
    sp.add_argument("--suite", choices=("closed-forms", "mc-smoke"))
    return p


SUB_DEFAULTS = {
    "psi": {"lam": 0.5, "x": [0.0, 1.0]},
    "nu": {},
    "kernel": {"t": 1.0, "x": [0.0], "y": [-1.0, 0.0, 1.0]},
    "zmu": {"t": [1.0], "x": 0.0},
    "rho": {"t": 1.0, "x": [0.0], "y": [-1.0, 0.0, 1.0]},
    "simulate": {"level": 0.0, "n": 10_000, "paths_csv": 0},
    "fk": {"f": "one", "t": 1.0, "x": 0.0, "n": 10_000},
    "penalize": {"T": [2.0, 4.0, 8.0], "t": 1.0, "radius": 1.0, "x": 0.0, "n": 20_000},
    "zeta": {"dt": 0.1, "steps": 10_000, "burn_in": 1000, "x0": 0.0, "bins": 20, "hist_range": 2.5},
    "verify": {"suite": "closed-forms"},
}
PATH_FLAGS = ("t_end", "dt", "eps")


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = ExperimentConfig.from_dict(doc)
    else:
        cfg = ExperimentConfig()
    cfg.experiment = cfg.experiment or args.command
    model = dict(cfg.model)
    if args.model is not None and args.model != model.get("kind"):
        model = {"kind": args.model}
    for key in ("sigma2", "alpha", "B"):
        if getattr(args, key) is not None:
            model[key] = getattr(args, key)
    cfg.model = model
    if args.mu is not None:
        cfg.mu = args.mu
    if args.a is not None:
        cfg.a = args.a
    path = dict(PATH_DEFAULTS)
    path.update(cfg.path)
    if args.seed is not None:
        path["seed"] = args.seed
    if args.workers is not None:
        path["workers"] = args.workers
    params = dict(SUB_DEFAULTS[args.command])
    params.update(cfg.params)
    for key in list(vars(args)):
        if key in ("command", "config", "seed", "workers", "out", "model", "sigma2", "alpha", "B", "mu", "a"):
            continue
        val = getattr(args, key)
        if val is None:
            continue
        if key in PATH_FLAGS:
            path[key] = val
        else:
            params[key] = val
    extra = set(params) - set(SUB_DEFAULTS[args.command])
    if extra:
        raise ConfigError(f"unknown parameters for {args.command}: {sorted(extra)}")
    cfg.path = path
    cfg.params = params
    if args.out is not None:
        cfg.out = args.out
    return cfg


# -- formatting -------------------------------------------------------------------------


def _clean(obj):
    """Round floats to 12 significant digits and make everything JSON-native."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return str(v)
        return float(f"{v:.12g}")
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True)


def _fmt(v) -> str:
    return f"{float(v):.12g}"


def write_csv(path: str, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# -- subcommand bodies --------------------------------------------------------------------


def _setup(cfg: ExperimentConfig):
    from .delta_semigroup import ContourConfig
    from .levy_models import LevyModel
    from .quadrature import QuadratureConfig

    model = LevyModel.from_dict(cfg.model)
    qcfg = QuadratureConfig.from_dict(cfg.quadrature)
    ccfg = ContourConfig.from_dict(cfg.contour)
    return model, qcfg, ccfg


def _potential(cfg, model, qcfg):
    from .delta_semigroup import DeltaPotential

    return DeltaPotential.solve(model, cfg.mu, cfg.a, qcfg)


def _path_cfg(cfg: ExperimentConfig, **over):
    from .pathsim import PathConfig

    d = dict(cfg.path)
    d.update(over)
    return PathConfig.from_dict(d)


def _pot_dict(pot) -> dict:
    return {"mu": pot.mu, "a": pot.a, "nu": pot.nu, "psi_nu_at_0": pot.psi_nu_at_0,
            "l2_norm_sq": pot.l2_norm_sq, "l1_norm": pot.l1_norm}


def cmd_psi(cfg, artifacts):
    from .spectral_core import psi_eval

    model, qcfg, _ = _setup(cfg)
    lam = cfg.params["lam"]
    lam = _complex(lam) if isinstance(lam, str) else lam
    rows = []
    for x in cfg.params["x"]:
        v = psi_eval(model, lam, x, qcfg)
        rows.append({"x": x, "value": v.value if abs(v.value.imag) > v.est_error else v.value.real,
                     "est_error": v.est_error})
    return {"psi": rows}


def cmd_nu(cfg, artifacts):
    model, qcfg, _ = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    out = {"nu": pot.nu, "potential": _pot_dict(pot)}
    if model.kind == "stable":
        from .spectral_core import stable_nu_closed_form
        from scipy.integrate import quad

        integral = quad(lambda th: 1.0 / (th**model.alpha + 1.0), 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
        out["closed_form"] = stable_nu_closed_form(model.alpha, model.B, cfg.mu, integral)
    return out


def cmd_kernel(cfg, artifacts):
    from .delta_semigroup import p_mu_matrix

    model, qcfg, ccfg = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    t = cfg.params["t"]
    xs, ys = cfg.params["x"], cfg.params["y"]
    v, e = p_mu_matrix(pot, model, t, xs, ys, qcfg, ccfg)
    rows = [(t, x, y, v[i, j], e[i, j]) for i, x in enumerate(xs) for j, y in enumerate(ys)]
    artifacts.append(("kernel.csv", ("t", "x", "y", "value", "est_error"), rows))
    return {"potential": _pot_dict(pot), "kernel": [dict(zip(("t", "x", "y", "value", "est_error"), r)) for r in rows]}


def cmd_zmu(cfg, artifacts):
    from .delta_semigroup import Z_mu, z_mu_tail

    model, qcfg, ccfg = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    x = cfg.params["x"]
    rows = []
    for t in cfg.params["t"]:
        Z = Z_mu(pot, model, t, x, qcfg, ccfg)
        tail = z_mu_tail(pot, model, t, x, qcfg, ccfg).value if t > 0 else 0.0
        rows.append({"t": t, "x": x, "Z": Z.value, "est_error": Z.est_error, "z_tail": tail,
                     "damped": math.exp(-pot.nu * t) * Z.value})
    return {"potential": _pot_dict(pot), "zmu": rows,
            "limit": float(pot.psi_nu([x], qcfg)[0]) / (pot.nu * pot.l2_norm_sq)}


def cmd_rho(cfg, artifacts):
    from .delta_semigroup import rho_mu_matrix

    model, qcfg, ccfg = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    t = cfg.params["t"]
    xs, ys = cfg.params["x"], cfg.params["y"]
    v, e = rho_mu_matrix(pot, model, t, xs, ys, qcfg, ccfg)
    rows = [(t, x, y, v[i, j], e[i, j]) for i, x in enumerate(xs) for j, y in enumerate(ys)]
    artifacts.append(("rho.csv", ("t", "x", "y", "value", "est_error"), rows))
    return {"potential": _pot_dict(pot), "rho": [dict(zip(("t", "x", "y", "value", "est_error"), r)) for r in rows]}


def cmd_simulate(cfg, artifacts):
    from .pathsim import _plan, run_paths, simulate_path, block_rng

    model, qcfg, _ = _setup(cfg)
    pc = _path_cfg(cfg)
    level = cfg.params["level"]
    plan = _plan(model, pc, level)
    mom = run_paths(plan, _LocalTimePayload(), cfg.params["n"], pc.seed, pc.block_size, pc.workers)
    out = {"local_time": mom.estimate(0).to_dict(), "position_sq": mom.estimate(1).to_dict(),
           "path_config": pc.resolved(model)}
    k = cfg.params["paths_csv"]
    if k:
        rng = block_rng(pc.seed, 2**32)
        rows = []
        for i in range(k):
            s = simulate_path(model, pc, level, rng)
            rows.append((i, pc.t_end, float(s.values[-1]), s.local_time, math.exp(cfg.mu * s.local_time)))
        artifacts.append(("paths.csv", ("path_id", "t_end", "value_at_t", "local_time", "weight"), rows))
    return out


@dataclass(frozen=True)
class _LocalTimePayload:
    def __call__(self, xi, L, disc):
        return np.stack([L[:, -1], xi[:, -1] ** 2], axis=1)


def cmd_fk(cfg, artifacts):
    from .delta_semigroup import Z_mu
    from .pathsim import Constant, feynman_kac_mc, psi_nu_function

    model, qcfg, ccfg = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    p = cfg.params
    t, x = p["t"], p["x"]
    pc = _path_cfg(cfg, t_end=t)
    if p["f"] == "one":
        f = Constant(1.0)
        target = Z_mu(pot, model, t, x, qcfg, ccfg).value
    else:
        f = psi_nu_function(pot, qcfg)
        target = math.exp(pot.nu * t) * float(pot.psi_nu([x], qcfg)[0])
    est = feynman_kac_mc(model, pot, f, t, x, pc, p["n"], pc.seed)
    return {"estimate": est.to_dict(), "target": target, "path_config": pc.resolved(model),
            "potential": _pot_dict(pot)}


def cmd_penalize(cfg, artifacts):
    from .pathsim import Indicator
    from .penalization import PenalizedSpec, weak_convergence_check

    model, qcfg, ccfg = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    p = cfg.params
    Ts = sorted(p["T"])
    pc = _path_cfg(cfg, t_end=Ts[-1])
    g = Indicator(pot.a - p["radius"], pot.a + p["radius"])
    specs = [PenalizedSpec(pot, model, T, p["x"]) for T in Ts]
    rows = weak_convergence_check(specs, p["t"], g, pc, p["n"], pc.seed, qcfg, ccfg)
    table = [{"experiment": "weak_convergence", "T": r.T, "estimate": r.estimate.mean,
              "stderr": r.estimate.stderr, "ess": r.estimate.ess, "exact": r.exact,
              "target": r.target} for r in rows]
    artifacts.append(("penalize.csv", ("T", "estimate", "stderr", "ess", "exact", "target"),
                      [(r["T"], r["estimate"], r["stderr"], r["ess"], r["exact"], r["target"]) for r in table]))
    return {"table": table, "path_config": pc.resolved(model), "potential": _pot_dict(pot)}


def cmd_zeta(cfg, artifacts):
    from .penalization import stationary_histogram, zeta_chain

    model, qcfg, ccfg = _setup(cfg)
    pot = _potential(cfg, model, qcfg)
    p = cfg.params
    chain = zeta_chain(pot, p["x0"], p["dt"], p["steps"], cfg.path["seed"], burn_in=p["burn_in"],
                       qcfg=qcfg, ccfg=ccfg)
    r = p["hist_range"]
    edges = pot.a + np.linspace(-r, r, p["bins"] + 1)
    h = stationary_histogram(pot, chain, edges, qcfg, dt=p["dt"], ccfg=ccfg)
    rows = list(zip(edges[:-1], edges[1:], h.freq, h.stderr, h.expected))
    artifacts.append(("zeta_histogram.csv", ("lo", "hi", "freq", "stderr", "expected"), rows))
    return {"passes": h.passes(), "max_abs_z": float(np.max(np.abs(h.z_scores))),
            "histogram": [dict(zip(("lo", "hi", "freq", "stderr", "expected"), r)) for r in rows],
            "potential": _pot_dict(pot)}


def _check(name, value, target, tol):
    ok = abs(value - target) <= tol
    return {"name": name, "value": value, "target": target, "tol": tol, "pass": bool(ok)}


def suite_closed_forms(cfg):
    """Brownian oracle suite (sigma2 = 1, mu = 1, a = 0)."""
    from .delta_semigroup import DeltaPotential, Z_mu, p_mu_matrix
    from .levy_models import LevyModel
    from .oracles import Z_brownian, p_mu_brownian, psi_brownian
    from .spectral_core import nu_solve, p0_kernel, psi_eval, psi_l1_norm

    _, qcfg, ccfg = _setup(cfg)
    m = LevyModel.brownian(1.0)
    checks = [_check("nu", nu_solve(m, 1.0, qcfg), 0.5, 1e-8)]
    for lam in (0.3, 0.5, 2.0):
        for x in (0.0, 0.5, 1.0, 3.0):
            checks.append(_check(f"psi lam={lam} x={x}", psi_eval(m, lam, x, qcfg).value.real,
                                 float(psi_brownian(lam, x)), 1e-6))
    checks.append(_check("psi l1 nu=0.5", psi_l1_norm(m, 0.5, qcfg), 2.0, 1e-5))
    checks.append(_check("p0 t=1 z=1", p0_kernel(m, 1.0, 1.0, 0.0, qcfg), math.exp(-0.5) / math.sqrt(2 * math.pi), 1e-8))
    pot = DeltaPotential.solve(m, 1.0, 0.0, qcfg)
    for t in (0.5, 1.0, 2.0):
        z = Z_mu(pot, m, t, 0.0, qcfg, ccfg).value
        ref = Z_brownian(1.0, t)
        checks.append(_check(f"Z t={t}", z, ref, 1e-3 * ref))
    z10 = math.exp(-pot.nu * 10.0) * Z_mu(pot, m, 10.0, 0.0, qcfg, ccfg).value
    checks.append(_check("damped Z t=10", z10, math.exp(-5.0) * Z_brownian(1.0, 10.0), 1e-3))
    pts = [-1.0, 0.0, 0.5, 2.0]
    v, _ = p_mu_matrix(pot, m, 1.0, pts, pts, qcfg, ccfg)
    ref = p_mu_brownian(1.0, 1.0, np.array(pts)[:, None], np.array(pts)[None, :])
    checks.append(_check("p_mu t=1 max abs error", float(np.max(np.abs(v - ref))), 0.0, 1e-8))
    return checks


def suite_mc_smoke(cfg):
    """Small Monte Carlo runs whose reports must be reproducible bit for bit."""
    from .delta_semigroup import DeltaPotential, Z_mu
    from .levy_models import LevyModel
    from .pathsim import Constant, PathConfig, feynman_kac_mc, laplace_local_time_check

    _, qcfg, ccfg = _setup(cfg)
    m = LevyModel.brownian(1.0)
    pot = DeltaPotential.solve(m, 1.0, 0.0, qcfg)
    seed, workers = int(cfg.path["seed"]), int(cfg.path["workers"])
    pc = PathConfig(t_end=1.0, dt=1e-3, seed=seed, block_size=1024, workers=workers)
    fk = feynman_kac_mc(m, pot, Constant(1.0), 1.0, 0.0, pc, 4096, seed)
    target = Z_mu(pot, m, 1.0, 0.0, qcfg, ccfg).value
    pl = PathConfig(t_end=20.0, dt=5e-3, seed=seed, block_size=1024, workers=workers)
    lap = laplace_local_time_check(m, pl, 0.0, 0.5, 2048, seed)
    checks = [
        dict(_check("fk f=1", fk.mean, target, 4 * fk.stderr + 0.05 * target), estimate=fk.to_dict()),
        dict(_check("laplace x=0", lap.mean, 1.0, 4 * lap.stderr + 0.1), estimate=lap.to_dict()),
    ]
    return checks


def cmd_verify(cfg, artifacts):
    suite = cfg.params["suite"]
    checks = suite_closed_forms(cfg) if suite == "closed-forms" else suite_mc_smoke(cfg)
    passed = all(c["pass"] for c in checks)
    artifacts.append(("verify.csv", ("name", "value", "target", "tol", "pass"),
                      [(c["name"], c["value"], c["target"], c["tol"], c["pass"]) for c in checks]))
    return {"suite": suite, "passed": passed, "checks": checks}


COMMANDS = {
    "psi": cmd_psi, "nu": cmd_nu, "kernel": cmd_kernel, "zmu": cmd_zmu, "rho": cmd_rho,
    "simulate": cmd_simulate, "fk": cmd_fk, "penalize": cmd_penalize, "zeta": cmd_zeta,
    "verify": cmd_verify,
}


def _error(exc: Exception, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run_subcommand(argv=None) -> int:
    """Parse ``argv``, run the subcommand and print its report; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        artifacts = []
        result = COMMANDS[args.command](cfg, artifacts)
        report = dict(result)
        report["experiment"] = cfg.experiment
        report["config"] = asdict(cfg)
        report["config"]["out"] = None
        text = dumps(report)
        if cfg.out:
            os.makedirs(cfg.out, exist_ok=True)
            with open(os.path.join(cfg.out, f"{cfg.experiment}.json"), "w") as fh:
                fh.write(text + "\n")
            for name, header, rows in artifacts:
                write_csv(os.path.join(cfg.out, name), header, rows)
        print(text)
        if args.command == "verify" and not result["passed"]:
            return 2
        return 0
    except ValidationError as exc:
        return _error(exc, 1)
    except NumericalFailure as exc:
        return _error(exc, 2)
    except (ValueError, TypeError) as exc:
        return _error(exc, 1)
    except DeltaFKError as exc:
        return _error(exc, 2)


def main():
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
