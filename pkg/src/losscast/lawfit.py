"""Scaling-law baselines: Chinchilla-form loss fits and hyperparameter power laws.

The Chinchilla form  l(N, D) = E + A/N^alpha + B/D^beta  is fit to frontier
points (best run per (N, D)) by minimizing a Huber loss on log predictions,
with a multi-start Nelder-Mead over (log E, log A, log B, alpha, beta).
Predictions are evaluated in log space as a log-sum-exp of the three terms.
Optimal learning rate and batch size follow power laws
  lr*(N, D) = c * N^a * D^b      bs*(D) = d * D^g
fit by ordinary least squares on logs. N is in millions of parameters, D in
billions of tokens throughout.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import FitError, ScopeError
from .ingest import RunRecord, nd_key
from .schema import RunConfig

HUBER_DELTA = 1e-3
ALPHA_STARTS = (0.1, 0.3, 0.5, 0.7, 0.9)
E_FRACTION_STARTS = (0.5, 0.9)


@dataclass(frozen=True)
class Scope:
    """Which runs a fit covers: a source, optionally narrowed to one optimizer."""

    source: str
    optimizer: str | None = None

    def contains(self, config: RunConfig) -> bool:
        if config.source != self.source:
            return False
        return self.optimizer is None or config.optimizer == self.optimizer

    def tag(self) -> str:
        return self.source if self.optimizer is None else f"{self.source}.{self.optimizer}"


@dataclass
class ChinchillaFit:
    e: float
    a: float
    b: float
    alpha: float
    beta: float
    scope: Scope
    objective: float = math.nan
    n_points: int = 0

    def to_dict(self) -> dict:
        return {
            "form": "chinchilla",
            "E": self.e, "A": self.a, "B": self.b,
            "alpha": self.alpha, "beta": self.beta,
            "scope": {"source": self.scope.source, "optimizer": self.scope.optimizer},
            "objective": self.objective,
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChinchillaFit":
        return cls(
            e=d["E"], a=d["A"], b=d["B"], alpha=d["alpha"], beta=d["beta"],
            scope=Scope(d["scope"]["source"], d["scope"]["optimizer"]),
            objective=d.get("objective", math.nan),
            n_points=d.get("n_points", 0),
        )


@dataclass
class PowerLawFit:
    c: float
    alpha_lr: float
    beta_lr: float
    d: float
    gamma_bs: float
    scope: Scope | None = None

    def lr_opt(self, n, d):
        return self.c * np.power(n, self.alpha_lr) * np.power(d, self.beta_lr)

    def bs_opt(self, d):
        return self.d * np.power(d, self.gamma_bs)

    def to_dict(self) -> dict:
        return {
            "form": "power_law",
            "c": self.c, "alpha_lr": self.alpha_lr, "beta_lr": self.beta_lr,
            "d": self.d, "gamma_bs": self.gamma_bs,
            "scope": None if self.scope is None else
                {"source": self.scope.source, "optimizer": self.scope.optimizer},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PowerLawFit":
        scope = data.get("scope")
        return cls(
            c=data["c"], alpha_lr=data["alpha_lr"], beta_lr=data["beta_lr"],
            d=data["d"], gamma_bs=data["gamma_bs"],
            scope=None if scope is None else Scope(scope["source"], scope["optimizer"]),
        )


@dataclass
class FrontierPoint:
    n: float
    d: float
    best_loss: float
    best_config: RunConfig
    run_id: str = ""


# -- frontier selection --------------------------------------------------------

def select_best_per_group(runs, scope: Scope | None = None) -> list[FrontierPoint]:
    """Lowest-final-loss run per (N, D) within scope; ties break on run_id."""
    best: dict[tuple[float, float], RunRecord] = {}
    for r in runs:
        if r.final_loss is None:
            continue
        if scope is not None and not scope.contains(r.config):
            continue
        key = nd_key(r.config)
        cur = best.get(key)
        if (
            cur is None
            or r.final_loss < cur.final_loss
            or (r.final_loss == cur.final_loss and r.run_id < cur.run_id)
        ):
            best[key] = r
    return [
        FrontierPoint(n=key[0], d=key[1], best_loss=best[key].final_loss,
                      best_config=best[key].config, run_id=best[key].run_id)
        for key in sorted(best)
    ]


# -- Chinchilla fit --------------------------------------------------------------

def predict_chinchilla(fit: ChinchillaFit, n, d):
    """E + A/N^alpha + B/D^beta, evaluated via log-sum-exp."""
    n = np.asarray(n, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(n <= 0) or np.any(d <= 0):
        raise ValueError("N and D must be positive")
    log_e = math.log(fit.e)
    log_a = math.log(fit.a) if fit.a > 0 else -math.inf
    log_b = math.log(fit.b) if fit.b > 0 else -math.inf
    base = log_e + np.zeros(np.broadcast(n, d).shape)
    acc = np.logaddexp(
        np.logaddexp(base, log_a - fit.alpha * np.log(n)),
        log_b - fit.beta * np.log(d),
    )
    out = np.exp(acc)
    return float(out) if out.ndim == 0 else out


def residual_target(p, fit: ChinchillaFit, n, d):
    """Observed loss minus the baseline prediction at (N, D)."""
    return p - predict_chinchilla(fit, n, d)


def _huber_sum(r: np.ndarray, delta: float) -> float:
    a = np.abs(r)
    quad = 0.5 * r * r
    lin = delta * (a - 0.5 * delta)
    return float(np.sum(np.where(a <= delta, quad, lin)))


def _chinchilla_objective(theta, log_n, log_d, log_loss, delta):
    log_e, log_a, log_b, alpha, beta = theta
    pred = np.logaddexp(
        np.logaddexp(log_e, log_a - alpha * log_n),
        log_b - beta * log_d,
    )
    return _huber_sum(pred - log_loss, delta)


def fit_chinchilla(
    points: list[FrontierPoint],
    scope: Scope | None = None,
    delta: float = HUBER_DELTA,
    alpha_starts=ALPHA_STARTS,
    beta_starts=ALPHA_STARTS,
) -> ChinchillaFit:
    """Multi-start simplex fit of the Chinchilla form on frontier points.

    Requires at least 5 points spanning at least 2 distinct N and 2 distinct D.
    The returned optimum's objective never exceeds any start's objective.
    """
    if len(points) < 5:
        raise FitError(f"need at least 5 frontier points, got {len(points)}")
    ns = np.array([p.n for p in points], dtype=np.float64)
    ds = np.array([p.d for p in points], dtype=np.float64)
    losses = np.array([p.best_loss for p in points], dtype=np.float64)
    if len(set(ns.tolist())) < 2 or len(set(ds.tolist())) < 2:
        raise FitError("frontier must span at least 2 distinct N and 2 distinct D")
    if np.any(losses <= 0):
        raise FitError("frontier losses must be positive")

    log_n, log_d, log_loss = np.log(ns), np.log(ds), np.log(losses)
    l_min = float(losses.min())

    best_theta, best_obj = None, math.inf
    for a0 in alpha_starts:
        for b0 in beta_starts:
            for q in E_FRACTION_STARTS:
                e0 = q * l_min
                resid = np.maximum(losses - e0, 1e-6)
                a_coef = max(0.5 * float(np.mean(resid * ns**a0)), 1e-8)
                b_coef = max(0.5 * float(np.mean(resid * ds**b0)), 1e-8)
                theta0 = np.array(
                    [math.log(e0), math.log(a_coef), math.log(b_coef), a0, b0]
                )
                res = minimize(
                    _chinchilla_objective, theta0,
                    args=(log_n, log_d, log_loss, delta),
                    method="Nelder-Mead",
                    options={"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-14},
                )
                if res.fun < best_obj:
                    best_obj, best_theta = float(res.fun), res.x

    if best_theta is None or not math.isfinite(best_obj):
        raise FitError("chinchilla fit failed to converge from any start")
    log_e, log_a, log_b, alpha, beta = best_theta
    return ChinchillaFit(
        e=math.exp(log_e), a=math.exp(log_a), b=math.exp(log_b),
        alpha=float(alpha), beta=float(beta),
        scope=scope or Scope("unscoped"),
        objective=best_obj, n_points=len(points),
    )


# -- power-law fit ---------------------------------------------------------------

def fit_power_law(frontier: list[FrontierPoint], scope: Scope | None = None) -> PowerLawFit:
    """OLS on logs of the frontier configs' (lr, batch size) against (N, D)."""
    if len(frontier) < 3:
        raise FitError(f"need at least 3 frontier points, got {len(frontier)}")
    ns = np.array([p.n for p in frontier])
    ds = np.array([p.d for p in frontier])
    lrs = np.array([p.best_config.peak_lr for p in frontier])
    bss = np.array([p.best_config.batch_size for p in frontier])
    if len(set(ns.tolist())) < 2 or len(set(ds.tolist())) < 2:
        raise FitError("frontier must span at least 2 distinct N and 2 distinct D")
    if np.any(lrs <= 0) or np.any(bss <= 0):
        raise FitError("frontier configs must carry positive lr and batch size")

    x_lr = np.column_stack([np.ones(len(ns)), np.log(ns), np.log(ds)])
    if np.linalg.matrix_rank(x_lr) < 3:
        raise FitError("log N and log D are collinear; learning-rate law unidentifiable")
    coef_lr, *_ = np.linalg.lstsq(x_lr, np.log(lrs), rcond=None)

    x_bs = np.column_stack([np.ones(len(ds)), np.log(ds)])
    if np.linalg.matrix_rank(x_bs) < 2:
        raise FitError("log D is constant; batch-size law unidentifiable")
    coef_bs, *_ = np.linalg.lstsq(x_bs, np.log(bss), rcond=None)

    return PowerLawFit(
        c=math.exp(coef_lr[0]), alpha_lr=float(coef_lr[1]), beta_lr=float(coef_lr[2]),
        d=math.exp(coef_bs[0]), gamma_bs=float(coef_bs[1]),
        scope=scope,
    )


# -- scoped fitting and the baseline predictor -----------------------------------

def fit_baselines(
    train_runs: list[RunRecord],
    per_optimizer: bool = False,
    delta: float = HUBER_DELTA,
) -> dict[Scope, ChinchillaFit]:
    """One Chinchilla fit per source (optionally per (source, optimizer)).

    Scopes with too few frontier points to fit are skipped rather than fatal,
    but at least one scope must succeed.
    """
    scopes: list[Scope] = []
    sources = sorted({r.config.source for r in train_runs})
    for src in sources:
        if per_optimizer:
            opts = sorted({r.config.optimizer for r in train_runs if r.config.source == src})
            scopes.extend(Scope(src, opt) for opt in opts)
        else:
            scopes.append(Scope(src))

    fits: dict[Scope, ChinchillaFit] = {}
    for scope in scopes:
        points = select_best_per_group(train_runs, scope)
        try:
            fits[scope] = fit_chinchilla(points, scope=scope, delta=delta)
        except FitError:
            continue
    if not fits:
        raise FitError("no scope had enough frontier points for a Chinchilla fit")
    return fits


class ChinchillaPredictor:
    """Configuration-agnostic baseline: predicts purely from (source, N, D).

    Lookup prefers an optimizer-scoped fit when one exists, then falls back
    to the source-level fit.
    """

    def __init__(self, fits: dict[Scope, ChinchillaFit]):
        if not fits:
            raise ScopeError("predictor needs at least one fit")
        self.fits = dict(fits)

    def fit_for(self, config: RunConfig) -> ChinchillaFit:
        keyed = Scope(config.source, config.optimizer)
        if keyed in self.fits:
            return self.fits[keyed]
        plain = Scope(config.source)
        if plain in self.fits:
            return self.fits[plain]
        raise ScopeError(f"no baseline fit covers source '{config.source}'")

    def predict_final_loss(self, config: RunConfig) -> float:
        fit = self.fit_for(config)
        return float(predict_chinchilla(fit, config.model_size_n, config.data_size_d))


def save_fits(fits, out_dir: str | os.PathLike) -> list[str]:
    """One human-readable JSON parameter file per scope; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    items = fits.items() if isinstance(fits, dict) else [(f.scope, f) for f in fits]
    for scope, fit in items:
        tag = scope.tag() if scope is not None else "unscoped"
        path = os.path.join(out_dir, f"{fit.to_dict()['form']}_{tag}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(fit.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(path)
    return paths


def load_fits(paths) -> dict[Scope, ChinchillaFit | PowerLawFit]:
    fits: dict[Scope, ChinchillaFit | PowerLawFit] = {}
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        fit: ChinchillaFit | PowerLawFit
        if data.get("form") == "power_law":
            fit = PowerLawFit.from_dict(data)
        else:
            fit = ChinchillaFit.from_dict(data)
        fits[fit.scope or Scope("unscoped")] = fit
    return fits
