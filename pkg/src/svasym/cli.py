"""Command-line front end: flat-config ingestion, subcommand dispatch,
CSV/JSON artifact emission.

Configs are flat ``key = value`` documents with dotted keys (greppable,
trivially diffable).  Unknown keys are hard errors so typos never pass
silently.  Every Monte-Carlo-touching artifact records its seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import measures, poisson, rates, simulate, verify
from . import hamiltonian as ham
from .errors import ParseError, SvasymError, UnknownKeyError, ValidationError
from .model import MODEL_KEYS, ModelParams, Regime, from_doc, to_doc, validate

RUN_KEYS = {
    "regime", "t", "eps", "tilt.p", "horizon", "x_target", "strike",
    "eps_sequence",
    "mc.paths", "mc.steps_per_unit_time", "mc.seed", "mc.scheme",
    "grid.n", "grid.y_lo", "grid.y_hi",
    "p_grid.max", "p_grid.count",
    "x_grid.min", "x_grid.max", "x_grid.count",
    "logK_grid.min", "logK_grid.max", "logK_grid.count",
}
KNOWN_KEYS = MODEL_KEYS | RUN_KEYS


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    regime: Regime = Regime.ULTRA_FAST
    t: float = 1.0
    eps: float = 0.5
    tilt_p: float = 1.0
    horizon: float = 50.0
    x_target: float = 0.15
    strike: float = 1.1
    eps_sequence: tuple = (0.5, 0.35, 0.25, 0.18)
    mc: simulate.McConfig = simulate.McConfig()
    grid: measures.GridSpec = measures.GridSpec()
    p_grid_max: float = 2.0
    p_grid_count: int = 33
    x_grid_min: float = -0.5
    x_grid_max: float = 0.5
    x_grid_count: int = 101
    logk_min: float = -0.4
    logk_max: float = 0.4
    logk_count: int = 81

    def p_grid(self) -> np.ndarray:
        return np.linspace(-self.p_grid_max, self.p_grid_max, self.p_grid_count)

    def x_grid(self) -> np.ndarray:
        return np.linspace(self.x_grid_min, self.x_grid_max, self.x_grid_count)

    def logk_grid(self) -> np.ndarray:
        return np.linspace(self.logk_min, self.logk_max, self.logk_count)


def _parse_scalar(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_config(path: str) -> RunConfig:
    """Parse, default, and validate a flat key = value config document."""
    doc = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"expected 'key = value', got {stripped!r}",
                                 line=lineno)
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in KNOWN_KEYS:
                raise UnknownKeyError(key)
            if key in doc:
                raise ParseError(f"duplicate key {key!r}", line=lineno)
            doc[key] = _parse_scalar(raw)

    model = from_doc({k: v for k, v in doc.items() if k in MODEL_KEYS})
    mc = simulate.McConfig(
        paths=int(doc.get("mc.paths", 10_000)),
        steps_per_unit_time=int(doc.get("mc.steps_per_unit_time", 100)),
        seed=int(doc.get("mc.seed", 42)),
        scheme=str(doc.get("mc.scheme", "full_truncation")))
    grid = measures.GridSpec(
        n=int(doc.get("grid.n", measures.DEFAULT_GRID_N)),
        y_lo=doc.get("grid.y_lo"), y_hi=doc.get("grid.y_hi"))
    eps_seq = doc.get("eps_sequence")
    if eps_seq is not None:
        eps_seq = tuple(float(tok) for tok in str(eps_seq).split())
    cfg = RunConfig(model=model, mc=mc, grid=grid)
    if eps_seq:
        cfg = replace(cfg, eps_sequence=eps_seq)
    simple = {
        "regime": ("regime", lambda v: Regime.from_r(int(v))),
        "t": ("t", float), "eps": ("eps", float),
        "tilt.p": ("tilt_p", float), "horizon": ("horizon", float),
        "x_target": ("x_target", float), "strike": ("strike", float),
        "p_grid.max": ("p_grid_max", float),
        "p_grid.count": ("p_grid_count", int),
        "x_grid.min": ("x_grid_min", float),
        "x_grid.max": ("x_grid_max", float),
        "x_grid.count": ("x_grid_count", int),
        "logK_grid.min": ("logk_min", float),
        "logK_grid.max": ("logk_max", float),
        "logK_grid.count": ("logk_count", int),
    }
    for key, (attr, conv) in simple.items():
        if key in doc:
            cfg = replace(cfg, **{attr: conv(doc[key])})
    return cfg


def write_config(cfg: RunConfig, path: str) -> None:
    """Serialize a RunConfig back to the flat document form."""
    doc = to_doc(cfg.model)
    doc.update({
        "regime": cfg.regime.r, "t": cfg.t, "eps": cfg.eps,
        "tilt.p": cfg.tilt_p, "horizon": cfg.horizon,
        "x_target": cfg.x_target, "strike": cfg.strike,
        "eps_sequence": " ".join(repr(e) for e in cfg.eps_sequence),
        "mc.paths": cfg.mc.paths,
        "mc.steps_per_unit_time": cfg.mc.steps_per_unit_time,
        "mc.seed": cfg.mc.seed, "mc.scheme": cfg.mc.scheme,
        "grid.n": cfg.grid.n,
        "p_grid.max": cfg.p_grid_max, "p_grid.count": cfg.p_grid_count,
        "x_grid.min": cfg.x_grid_min, "x_grid.max": cfg.x_grid_max,
        "x_grid.count": cfg.x_grid_count,
        "logK_grid.min": cfg.logk_min, "logK_grid.max": cfg.logk_max,
        "logK_grid.count": cfg.logk_count,
    })
    if cfg.grid.y_lo is not None:
        doc["grid.y_lo"] = cfg.grid.y_lo
    if cfg.grid.y_hi is not None:
        doc["grid.y_hi"] = cfg.grid.y_hi
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(doc):
            fh.write(f"{key} = {doc[key]}\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _emit(out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    print(f"wrote {path}")
    return path


def _fast_ingredients(cfg: RunConfig):
    """Hamiltonian curve and Legendre transform for fast-regime commands."""
    curve = ham.build_curve(cfg.model, cfg.p_grid(), method="eigen")
    slopes = np.gradient(curve.values, curve.p_grid)
    q_max = float(np.max(np.abs(slopes)))
    q_needed = np.union1d(np.linspace(-q_max, q_max, 801),
                          (cfg.model.x0 - cfg.x_grid()) / cfg.t)
    q_needed = np.union1d(q_needed, (cfg.model.x0 - cfg.logk_grid()) / cfg.t)
    q_needed = q_needed[np.abs(q_needed) <= q_max]
    return curve, ham.legendre(curve, q_needed)


def _cmd_validate(cfg: RunConfig, out: str) -> int:
    report = validate(cfg.model)
    payload = {"passed": report.passed,
               "clauses": [{"clause": c.clause, "passed": c.passed,
                            "message": c.message} for c in report]}
    _write_json(_emit(out, "validation.json"), payload)
    for c in report:
        print(f"  [{'ok' if c.passed else 'FAIL'}] {c.clause}: {c.message}")
    return 0 if report.passed else 1


def _cmd_invariant(cfg: RunConfig, out: str) -> int:
    table = measures.invariant_density(cfg.model, cfg.tilt_p, cfg.grid)
    table.to_csv(_emit(out, "invariant.csv"))
    print(f"  grid [{table.grid[0]:g}, {table.grid[-1]:g}], "
          f"{table.grid.size} points, mean {table.mean():.6g}")
    return 0


def _cmd_sigma_bar(cfg: RunConfig, out: str) -> int:
    value, err = measures.sigma_bar_sq(cfg.model, with_error=True)
    _write_json(_emit(out, "sigma_bar.json"),
                {"sigma_bar_sq": value, "error_estimate": err})
    print(f"  sigma_bar_sq = {value!r} (err est {err:.3g})")
    return 0


def _cmd_poisson(cfg: RunConfig, out: str) -> int:
    cor = poisson.solve_corrector(cfg.model, cfg.tilt_p, cfg.grid)
    cor.to_csv(_emit(out, "poisson.csv"))
    res = poisson.core_residual_norm(cfg.model, cor)
    print(f"  p = {cor.p:g}, core residual {res:.3g}")
    return 0


def _cmd_hamiltonian(cfg: RunConfig, out: str) -> int:
    curve = ham.build_curve(cfg.model, cfg.p_grid(), method="eigen")
    curve.to_csv(_emit(out, "hamiltonian.csv"))
    print(f"  {curve.p_grid.size} points on [{curve.p_grid[0]:g}, "
          f"{curve.p_grid[-1]:g}]")
    return 0


def _cmd_rate(cfg: RunConfig, out: str) -> int:
    if cfg.regime is Regime.ULTRA_FAST:
        sbar2 = measures.sigma_bar_sq(cfg.model)
        curve = rates.rate_curve(cfg.regime, cfg.model.x0, cfg.t, cfg.x_grid(),
                                 sigma_bar_sq=sbar2)
    else:
        _, leg = _fast_ingredients(cfg)
        curve = rates.rate_curve(cfg.regime, cfg.model.x0, cfg.t, cfg.x_grid(),
                                 legendre=leg)
    curve.to_csv(_emit(out, "rate.csv"))
    return 0


def _cmd_price(cfg: RunConfig, out: str) -> int:
    kwargs = {}
    if cfg.regime is Regime.ULTRA_FAST:
        kwargs["sigma_bar_sq"] = measures.sigma_bar_sq(cfg.model)
    else:
        kwargs["legendre"] = _fast_ingredients(cfg)[1]
    value = rates.option_price_log_asymptote(cfg.strike, cfg.model.x0, cfg.t,
                                             cfg.regime, **kwargs)
    _write_json(_emit(out, "price.json"),
                {"strike": cfg.strike, "regime": cfg.regime.r, "t": cfg.t,
                 "log_price_asymptote": value})
    print(f"  eps log price -> {value!r}")
    return 0


def _cmd_smile(cfg: RunConfig, out: str) -> int:
    sbar2 = measures.sigma_bar_sq(cfg.model)
    leg = None
    if cfg.regime is Regime.FAST:
        leg = _fast_ingredients(cfg)[1]
    smile = rates.implied_vol_curve(cfg.model.x0, cfg.regime, cfg.t,
                                    cfg.logk_grid(), sigma_bar_sq=sbar2,
                                    legendre=leg)
    smile.to_csv(_emit(out, "smile.csv"))
    return 0


def _cmd_simulate(cfg: RunConfig, out: str, raw: bool = False) -> int:
    batch = simulate.simulate_xy(cfg.model, cfg.regime, cfg.eps, cfg.t, cfg.mc)
    batch.to_csv(_emit(out, "simulate_summary.csv"))
    if raw:
        batch.to_binary(_emit(out, "simulate_paths.bin"))
    s = batch.summary()
    print(f"  {s['paths']} paths, mean X {s['mean_x']:.6g}, "
          f"var X {s['var_x']:.6g}, seed {s['seed']}")
    return 0


def _cmd_verify_ldp(cfg: RunConfig, out: str) -> int:
    kwargs = {}
    if cfg.regime is Regime.ULTRA_FAST:
        kwargs["sigma_bar_sq"] = measures.sigma_bar_sq(cfg.model)
    else:
        kwargs["legendre"] = _fast_ingredients(cfg)[1]
    report = verify.ldp_tail(cfg.model, cfg.regime, cfg.x_target, cfg.t,
                             cfg.eps_sequence, cfg.mc, **kwargs)
    _write_json(_emit(out, "ldp.json"), report.to_json())
    print(f"  verdict {report.verdict}, predicted {report.predicted:.6g}")
    return 0


def _cmd_accept(cfg: RunConfig, out: str) -> int:
    path = os.path.join(out, "acceptance.json")
    report = verify.run_acceptance({"seed": cfg.mc.seed, "model": cfg.model,
                                    "out": path})
    print(f"wrote {path}")
    for entry in report["criteria"]:
        print(f"  [{'PASS' if entry['pass'] else 'FAIL'}] "
              f"{entry['criterion_id']}: {entry['description']}")
    return 0 if report["passed"] else 1


_COMMANDS = {
    "validate": _cmd_validate, "invariant": _cmd_invariant,
    "sigma-bar": _cmd_sigma_bar, "poisson": _cmd_poisson,
    "hamiltonian": _cmd_hamiltonian, "rate": _cmd_rate,
    "price": _cmd_price, "smile": _cmd_smile,
    "simulate": _cmd_simulate, "verify-ldp": _cmd_verify_ldp,
    "accept": _cmd_accept,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svasym",
        description="Small-time asymptotics for fast mean-reverting "
                    "stochastic volatility models")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="path to a flat key = value config document")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--regime", type=int, choices=(2, 4),
                       help="override the config's regime exponent")
        p.add_argument("--t", type=float, help="override the scaled time")
        p.add_argument("--eps", type=float, help="override eps")
        p.add_argument("--seed", type=int, help="override the MC seed")
        p.add_argument("--paths", type=int, help="override the MC path count")
        p.add_argument("--p", type=float, dest="tilt_p",
                       help="override the momentum parameter")
        if name == "simulate":
            p.add_argument("--raw", action="store_true",
                           help="also stream raw terminal samples to a "
                                "binary record file")
    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.regime is not None:
            cfg = replace(cfg, regime=Regime.from_r(args.regime))
        if args.t is not None:
            cfg = replace(cfg, t=args.t)
        if args.eps is not None:
            cfg = replace(cfg, eps=args.eps)
        if args.tilt_p is not None:
            cfg = replace(cfg, tilt_p=args.tilt_p)
        if args.seed is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, seed=args.seed))
        if args.paths is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, paths=args.paths))
        os.makedirs(args.out, exist_ok=True)
        if args.command == "simulate":
            return _COMMANDS[args.command](cfg, args.out, raw=args.raw)
        return _COMMANDS[args.command](cfg, args.out)
    except (ParseError, UnknownKeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, SvasymError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
