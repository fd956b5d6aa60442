"""Monte Carlo simulation of the two-scale system and its tilted relatives.

The rescaled pair follows

    dX = eps (r - sigma^2(Y)/2) ds + sqrt(eps) sigma(Y) dW1,
    dY = lam (m - Y) ds + nu sqrt(lam) Y^beta dW2,   lam = eps / delta,

with delta = eps^regime and correlated drivers <W1, W2> = rho s.  The step
size couples to the fast scale, dt = (delta/eps) / steps_per_unit_time, so
the factor's relaxation is resolved uniformly in eps.

Randomness is counter-based: block i of paths draws from a Philox stream
keyed by (seed, i), so results are bit-identical regardless of how blocks
are scheduled across threads (worker count comes from SVASYM_THREADS,
0 or unset meaning auto).
"""

from __future__ import annotations

import math
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import StabilityError, ValidationError, VarianceWarning
from .model import ModelParams, Regime, sigma_eval

BLOCK_PATHS = 65536
SCHEMES = ("full_truncation", "reflect")


@dataclass(frozen=True)
class McConfig:
    paths: int = 10_000
    steps_per_unit_time: int = 100
    seed: int = 42
    scheme: str = "full_truncation"


@dataclass(frozen=True)
class McEstimate:
    """A Monte Carlo point estimate with its standard error."""
    value: float
    stderr: float
    n: int
    seed: int


@dataclass(frozen=True)
class PathBatch:
    """Terminal values and pathwise time-integral accumulators."""

    x: np.ndarray
    y: np.ndarray
    int_sigma_sq: np.ndarray   # int_0^t sigma^2(Y_s) ds
    int_sigma_dw: np.ndarray   # int_0^t sigma(Y_s) dW1_s
    truncated_fraction: float
    seed: int
    n_steps: int
    dt: float

    def summary(self) -> dict:
        return {
            "paths": int(self.x.size),
            "mean_x": float(np.mean(self.x)),
            "var_x": float(np.var(self.x)),
            "mean_y": float(np.mean(self.y)),
            "truncated_fraction": float(self.truncated_fraction),
            "seed": int(self.seed),
            "n_steps": int(self.n_steps),
            "dt": float(self.dt),
        }

    def to_csv(self, path) -> None:
        s = self.summary()
        keys = list(s)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(keys) + "\r\n")
            fh.write(",".join(repr(s[k]) for k in keys) + "\r\n")

    def to_binary(self, path) -> None:
        """Raw terminal samples as a fixed-width little-endian record file.

        Layout: magic b"SVABIN1\\0", uint64 path count, then the x array and
        the y array back to back as float64.
        """
        with open(path, "wb") as fh:
            fh.write(b"SVABIN1\x00")
            fh.write(struct.pack("<Q", self.x.size))
            fh.write(self.x.astype("<f8").tobytes())
            fh.write(self.y.astype("<f8").tobytes())


@dataclass(frozen=True)
class TiltedBatch:
    """Terminal values and accumulators for the tilted factor process."""

    y: np.ndarray
    int_sigma_sq: np.ndarray   # accumulated after burn-in
    int_sigma_dw2: np.ndarray  # int sigma(Y) dW2, after burn-in
    duration: float            # accumulation window length (T - burn_in)
    seed: int


def _worker_count() -> int:
    try:
        n = int(os.environ.get("SVASYM_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + block))


def _map_blocks(n_paths: int, seed: int, fn: Callable[[np.random.Generator, int], tuple]):
    """Run fn over fixed-size path blocks, merging results in block order."""
    sizes = [BLOCK_PATHS] * (n_paths // BLOCK_PATHS)
    if n_paths % BLOCK_PATHS:
        sizes.append(n_paths % BLOCK_PATHS)
    jobs = [(i, s) for i, s in enumerate(sizes)]
    workers = min(_worker_count(), len(jobs))
    if workers <= 1:
        return [fn(_block_rng(seed, i), s) for i, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, _block_rng(seed, i), s) for i, s in jobs]
        return [f.result() for f in futs]


def _check_mc(params: ModelParams, mc: McConfig) -> None:
    if mc.paths < 1:
        raise ValidationError("paths must be >= 1")
    if mc.scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {mc.scheme!r}; choose from {SCHEMES}")
    if params.beta != 0.0 and mc.steps_per_unit_time < 100:
        raise ValidationError(
            "steps_per_unit_time must be >= 100 when beta is in [1/2, 1) "
            "(the factor is stiff near the boundary)")


def _sigma_state(params: ModelParams, y: np.ndarray) -> np.ndarray:
    """sigma at the positive part of the state (scheme contract: sigma is
    never evaluated at a negative point)."""
    if params.beta == 0.0:
        return sigma_eval(params.sigma, y, beta=0.0)
    return sigma_eval(params.sigma, np.maximum(y, 1e-300), beta=params.beta)


def _step_y(params: ModelParams, y: np.ndarray, lam: float, dt: float,
            w2: np.ndarray, scheme: str, extra_drift=None):
    """One step of the factor process; returns (y_new, truncated_count).

    beta = 0 uses the exact linear propagator (exponential integrator), so
    the marginal law is exact for every step size; beta >= 1/2 uses the
    chosen positivity scheme with coefficients frozen at the positive part.
    """
    if np.max(np.abs(w2)) > 10.0:
        raise StabilityError("a factor step exceeded 10 local standard deviations")
    if params.beta == 0.0:
        a = math.exp(-lam * dt)
        y_new = params.m + (y - params.m) * a
        if extra_drift is not None:
            y_new = y_new + extra_drift * (1.0 - a) / lam
        if params.nu > 0.0:
            y_new = y_new + params.nu * math.sqrt(0.5 * (1.0 - a * a)) * w2
        return y_new, 0
    yp = np.maximum(y, 0.0)
    drift = lam * (params.m - yp)
    if extra_drift is not None:
        drift = drift + extra_drift
    y_new = y + drift * dt + params.nu * math.sqrt(lam * dt) * yp ** params.beta * w2
    neg = int(np.count_nonzero(y_new < 0.0))
    if scheme == "reflect":
        y_new = np.abs(y_new)
    return y_new, neg


def simulate_xy(params: ModelParams, regime: Regime, eps: float, t: float,
                mc: McConfig) -> PathBatch:
    """Simulate the coupled (X, Y) system to slow time t."""
    _check_mc(params, mc)
    if not 0.0 < eps <= 1.0:
        raise ValidationError("eps must lie in (0, 1]")
    delta = eps ** regime.r
    lam = eps / delta
    dt = (delta / eps) / mc.steps_per_unit_time
    n_steps = max(1, int(math.ceil(t / dt)))
    dt = t / n_steps
    rho_c = math.sqrt(1.0 - params.rho ** 2)
    sq_dt = math.sqrt(dt)

    def run(rng: np.random.Generator, n: int):
        x = np.full(n, params.x0)
        y = np.full(n, params.y0)
        iss = np.zeros(n)
        isw = np.zeros(n)
        truncated = 0
        for _ in range(n_steps):
            w1 = rng.standard_normal(n)
            w2 = params.rho * w1 + rho_c * rng.standard_normal(n)
            sig = _sigma_state(params, y)
            sig_sq = sig * sig
            dw1 = sq_dt * w1
            x += eps * (params.r - 0.5 * sig_sq) * dt + math.sqrt(eps) * sig * dw1
            iss += sig_sq * dt
            isw += sig * dw1
            y, neg = _step_y(params, y, lam, dt, w2, mc.scheme)
            truncated += neg
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise StabilityError("non-finite state encountered; step too coarse")
        return x, np.maximum(y, 0.0) if params.beta != 0.0 else y, iss, isw, truncated

    parts = _map_blocks(mc.paths, mc.seed, run)
    total_steps = mc.paths * n_steps
    return PathBatch(
        x=np.concatenate([p[0] for p in parts]),
        y=np.concatenate([p[1] for p in parts]),
        int_sigma_sq=np.concatenate([p[2] for p in parts]),
        int_sigma_dw=np.concatenate([p[3] for p in parts]),
        truncated_fraction=sum(p[4] for p in parts) / total_steps,
        seed=mc.seed, n_steps=n_steps, dt=dt)


def simulate_tilted(params: ModelParams, T: float, mc: McConfig, *,
                    p: float = 0.0, h: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                    y_start: Optional[float] = None,
                    burn_in: float = 0.0) -> TiltedBatch:
    """Simulate the tilted factor process on its own clock.

    ``p`` adds the momentum tilt rho p sigma(y) nu |y|^beta to the drift; an
    ``h`` table (grid, values) adds the Girsanov shift nu^2 |y|^{2 beta}
    h'(y).  Accumulators (int sigma^2 ds, int sigma dW2) start after
    ``burn_in``.
    """
    _check_mc(params, mc)
    if not 0.0 <= burn_in < T:
        raise ValidationError("burn_in must lie in [0, T)")
    dt = 1.0 / mc.steps_per_unit_time
    n_steps = max(1, int(math.ceil(T / dt)))
    dt = T / n_steps
    burn_steps = int(round(burn_in / dt))
    y0 = params.y0 if y_start is None else float(y_start)
    if h is not None:
        h_grid = np.asarray(h[0], dtype=float)
        h_prime = np.gradient(np.asarray(h[1], dtype=float), h_grid)

    def extra(yp: np.ndarray, sig: np.ndarray) -> np.ndarray:
        out = params.rho * p * sig * params.nu * np.abs(yp) ** params.beta
        if h is not None:
            out = out + params.nu ** 2 * np.abs(yp) ** (2.0 * params.beta) \
                * np.interp(yp, h_grid, h_prime)
        return out

    def run(rng: np.random.Generator, n: int):
        y = np.full(n, y0)
        iss = np.zeros(n)
        isw2 = np.zeros(n)
        sq_dt = math.sqrt(dt)
        for k in range(n_steps):
            w2 = rng.standard_normal(n)
            yp = np.maximum(y, 0.0) if params.beta != 0.0 else y
            sig = _sigma_state(params, y)
            if k >= burn_steps:
                iss += sig * sig * dt
                isw2 += sig * sq_dt * w2
            y, _ = _step_y(params, y, 1.0, dt, w2, mc.scheme,
                           extra_drift=extra(yp, sig))
        if not np.all(np.isfinite(y)):
            raise StabilityError("non-finite state encountered; step too coarse")
        return np.maximum(y, 0.0) if params.beta != 0.0 else y, iss, isw2

    parts = _map_blocks(mc.paths, mc.seed, run)
    return TiltedBatch(
        y=np.concatenate([q[0] for q in parts]),
        int_sigma_sq=np.concatenate([q[1] for q in parts]),
        int_sigma_dw2=np.concatenate([q[2] for q in parts]),
        duration=T - burn_steps * dt, seed=mc.seed)


def ergodic_average(params: ModelParams, phi, T: float, mc: McConfig, *,
                    p: float = 0.0, h=None, y_start: Optional[float] = None,
                    burn_in: Optional[float] = None, n_batches: int = 8) -> McEstimate:
    """Long-run time average (1/T) int phi(Y_s) ds across paths.

    ``phi`` is a callable on arrays or a (grid, values) table.  The standard
    error is taken across independent paths; a VarianceWarning is issued
    when consecutive within-path time batches remain correlated (batch
    length shorter than the mixing time).
    """
    _check_mc(params, mc)
    if burn_in is None:
        burn_in = T / 10.0
    if callable(phi):
        phi_fn = phi
    else:
        g, v = np.asarray(phi[0], dtype=float), np.asarray(phi[1], dtype=float)
        phi_fn = lambda yy: np.interp(yy, g, v)
    dt = 1.0 / mc.steps_per_unit_time
    n_steps = max(1, int(math.ceil(T / dt)))
    dt = T / n_steps
    burn_steps = int(round(burn_in / dt))
    acc_steps = n_steps - burn_steps
    y0 = params.y0 if y_start is None else float(y_start)
    if h is not None:
        h_grid = np.asarray(h[0], dtype=float)
        h_prime = np.gradient(np.asarray(h[1], dtype=float), h_grid)

    def run(rng: np.random.Generator, n: int):
        y = np.full(n, y0)
        batches = np.zeros((n, n_batches))
        for k in range(n_steps):
            w2 = rng.standard_normal(n)
            yp = np.maximum(y, 0.0) if params.beta != 0.0 else y
            ex = params.rho * p * _sigma_state(params, y) * params.nu \
                * np.abs(yp) ** params.beta
            if h is not None:
                ex = ex + params.nu ** 2 * np.abs(yp) ** (2.0 * params.beta) \
                    * np.interp(yp, h_grid, h_prime)
            if k >= burn_steps:
                b = min((k - burn_steps) * n_batches // acc_steps, n_batches - 1)
                batches[:, b] += phi_fn(yp if params.beta != 0.0 else y)
            y, _ = _step_y(params, y, 1.0, dt, w2, mc.scheme, extra_drift=ex)
        return (batches,)

    parts = _map_blocks(mc.paths, mc.seed, run)
    batches = np.concatenate([q[0] for q in parts], axis=0)
    per_batch_steps = np.bincount(
        np.minimum(np.arange(acc_steps) * n_batches // acc_steps, n_batches - 1),
        minlength=n_batches)
    batch_means = batches / per_batch_steps  # (paths, n_batches)
    path_means = batches.sum(axis=1) / acc_steps
    value = float(np.mean(path_means))
    se = float(np.std(path_means, ddof=1) / math.sqrt(mc.paths)) if mc.paths > 1 else 0.0
    centered = batch_means - path_means[:, None]
    num = float(np.sum(centered[:, :-1] * centered[:, 1:]))
    den = float(np.sum(centered * centered))
    if den > 0 and num / den > 0.5:
        warnings.warn("within-path time batches are strongly autocorrelated; "
                      "increase T for a trustworthy error bar", VarianceWarning)
    return McEstimate(value=value, stderr=se, n=mc.paths, seed=mc.seed)


def log_mean_exp(samples: np.ndarray) -> Tuple[float, float]:
    """log of the sample mean of exp(samples), with a delta-method standard
    error of the log."""
    n = samples.size
    lme = float(logsumexp(samples) - math.log(n))
    z = np.exp(samples - np.max(samples))
    se = float(np.std(z, ddof=1) / (np.mean(z) * math.sqrt(n))) if n > 1 else 0.0
    return lme, se


@dataclass(frozen=True)
class MomentRow:
    eps: float
    value: float      # eps * log E[S^p]
    stderr: float


@dataclass(frozen=True)
class MomentTable:
    p: float
    t: float
    rows: Tuple[MomentRow, ...]
    passed: bool      # |value| decreases toward 0 along the eps sequence


def moment_check(params: ModelParams, regime: Regime, eps_sequence: Sequence[float],
                 p: float, t: float, mc: McConfig) -> MomentTable:
    """Estimate eps * log E[S^p] along a decreasing eps sequence.

    The limit is 0; pass iff the magnitude decreases monotonically
    (within one standard error) along the sequence.
    """
    if p <= 1.0:
        raise ValidationError("moment exponent p must exceed 1")
    rows = []
    for eps in eps_sequence:
        batch = simulate_xy(params, regime, eps, t, mc)
        lme, se = log_mean_exp(p * batch.x)
        if se > 0.25:
            warnings.warn(f"heavy-tailed moment estimate at eps={eps:g} "
                          f"(relative SE {se:.1%})", VarianceWarning)
        rows.append(MomentRow(eps=eps, value=eps * lme, stderr=eps * se))
    passed = all(abs(b.value) <= abs(a.value) + a.stderr + b.stderr
                 for a, b in zip(rows, rows[1:]))
    return MomentTable(p=p, t=t, rows=tuple(rows), passed=passed)
