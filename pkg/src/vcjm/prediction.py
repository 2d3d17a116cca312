"""Dynamic individualized predictions pi_l(t, dt) and association-curve
extraction with credible bands.

Predictions condition on a subject's measurement history through time t and
on survival beyond t. Each retained posterior draw contributes one
random-effect vector (Metropolis steps from the conditional longitudinal
mode) and one pi value; bands are pointwise percentiles over draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .likelihood import (
    DEFAULT_MAX_PANEL,
    _integrated_design_rows,
    gk_panel_nodes,
    hazard_breakpoints,
)
from .model import ModelContext, ValidationError
from .sampler import PosteriorDraws
from .splines import SplineDomainError, bspline_matrix

MH_STEP_SCALE = 2.38  # optimal-scaling constant for Gaussian targets


@dataclass(frozen=True)
class PredictionRequest:
    times: np.ndarray
    values: np.ndarray
    covariates: Mapping[str, float]
    t: float
    dt_grid: np.ndarray
    subsample: int = 500

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "dt_grid", np.asarray(self.dt_grid, dtype=float))
        if self.times.shape != self.values.shape:
            raise ValidationError("history times and values differ in length")
        if self.t < 0:
            raise ValidationError(f"base time must be >= 0, got {self.t}")
        if self.times.size and float(self.times.max()) > self.t:
            raise ValidationError(
                f"history time {self.times.max():g} exceeds base time {self.t:g}"
            )
        if self.dt_grid.size == 0:
            raise ValidationError("horizon grid is empty")
        if np.any(self.dt_grid < 0):
            raise ValidationError("horizons must be >= 0")
        if self.subsample < 1:
            raise ValidationError("draw subsample must be >= 1")


@dataclass
class PredictionResult:
    t: float
    dt: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    samples: np.ndarray | None = None  # (draws, horizons) when retained


@dataclass
class LambdaCurve:
    term: int
    name: str
    t: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def subsample_indices(total: int, size: int) -> np.ndarray:
    """Evenly spaced draw indices: deterministic and near-independent."""
    if size >= total:
        return np.arange(total)
    return np.unique(np.round(np.linspace(0, total - 1, size)).astype(int))


class _DrawViews:
    """Per-parameter column slices of a stacked draw matrix."""

    def __init__(self, context: ModelContext, theta: np.ndarray):
        p, q = context.p, context.q
        G = theta.shape[0]
        k = 0
        self.beta = theta[:, k:k + p]
        k += p
        self.sigma = theta[:, k]
        k += 1
        ntl = q * (q + 1) // 2
        tril = theta[:, k:k + ntl]
        k += ntl
        Sigma = np.zeros((G, q, q))
        rows, cols = np.tril_indices(q)
        Sigma[:, rows, cols] = tril
        Sigma[:, cols, rows] = tril
        self.Sigma_b = Sigma
        ng = len(context.spec.survival_covariates)
        self.gamma = theta[:, k:k + ng]
        k += ng
        self.alphas = []
        for L in context.L:
            self.alphas.append(theta[:, k:k + L])
            k += L
        self.gamma_h0 = theta[:, k:k + context.U]
        k += context.U
        self.n_draws = G


class _HazardPieces:
    """One subject's hazard design rows on a fixed set of times."""

    def __init__(self, context: ModelContext, covs: Mapping[str, float], ts: np.ndarray):
        spec = context.spec
        self.Bh = bspline_matrix(spec.baseline, ts)
        self.X = spec.fixed.matrix(ts, covs)
        self.Z = spec.random.matrix(ts, covs)
        form = spec.association.form
        self.dX = spec.fixed.deriv_matrix(ts, covs) if form == "value+slope" else None
        self.dZ = spec.random.deriv_matrix(ts, covs) if form == "value+slope" else None
        self.iX = _integrated_design_rows(spec.fixed, ts, covs) if form == "cumulative" else None
        self.iZ = _integrated_design_rows(spec.random, ts, covs) if form == "cumulative" else None
        self.Ba = [
            None if term.spline is None else bspline_matrix(term.spline, ts)
            for term in spec.association.terms
        ]
        self.form = form

    def log_hazard(self, views: _DrawViews, b: np.ndarray) -> np.ndarray:
        """(times, draws) log hazard without the covariate term gamma'w."""
        out = self.Bh @ views.gamma_h0.T
        if self.form == "value":
            feats = (self.X @ views.beta.T + self.Z @ b.T,)
        elif self.form == "value+slope":
            feats = (
                self.X @ views.beta.T + self.Z @ b.T,
                self.dX @ views.beta.T + self.dZ @ b.T,
            )
        else:
            feats = (self.iX @ views.beta.T + self.iZ @ b.T,)
        for t, feat in enumerate(feats):
            Ba = self.Ba[t]
            lam = views.alphas[t][:, 0][None, :] if Ba is None else Ba @ views.alphas[t].T
            out = out + lam * feat
        return out


def _surv_w(context: ModelContext, covariates: Mapping[str, float]) -> np.ndarray:
    vals = []
    for name in context.spec.survival_covariates:
        if name not in covariates:
            raise ValidationError(f"survival covariate {name!r} missing from request")
        vals.append(float(covariates[name]))
    return np.array(vals)


def _check_domain(context: ModelContext, horizon: float) -> None:
    spec = context.spec
    checks = [("baseline hazard", spec.baseline)]
    for t, term in enumerate(spec.association.terms):
        if term.spline is not None:
            checks.append((f"association term {t}", term.spline))
    for label, sp in checks:
        lo, hi = sp.boundary
        if horizon > hi + 1e-12 or lo > 0:
            raise SplineDomainError(
                f"prediction horizon {horizon:g} is outside the {label} spline "
                f"domain [{lo:g}, {hi:g}]; refit with the spline boundary "
                f"extended to at least {horizon:g}"
            )


def _cumulative_hazard_batch(
    context: ModelContext,
    views: _DrawViews,
    covs: Mapping[str, float],
    b: np.ndarray,
    gw: np.ndarray,
    a: float,
    t_hi: float,
    max_panel: float,
    breaks,
) -> np.ndarray:
    nodes, weights = gk_panel_nodes(a, t_hi, max_panel, breaks)
    if nodes.size == 0:
        return np.zeros(views.n_draws)
    pieces = _HazardPieces(context, covs, nodes)
    logh = pieces.log_hazard(views, b)
    return np.exp(gw) * (weights @ np.exp(logh))


def _sample_b(
    context: ModelContext,
    views: _DrawViews,
    request: PredictionRequest,
    mh_steps: int,
    rng: np.random.Generator,
    max_panel: float,
) -> np.ndarray:
    G, q = views.n_draws, context.q
    if request.times.size == 0:
        # no measurements: the spec'd behavior is a draw from the prior
        chol = np.linalg.cholesky(views.Sigma_b)
        z = rng.standard_normal((G, q))
        return np.einsum("gij,gj->gi", chol, z)

    covs = dict(request.covariates)
    spec = context.spec
    X = spec.fixed.matrix(request.times, covs)
    Z = spec.random.matrix(request.times, covs)
    y = request.values
    sigma2 = views.sigma**2
    Sinv = np.linalg.inv(views.Sigma_b)
    prec = Z.T @ Z / sigma2[:, None, None] + Sinv
    C = np.linalg.inv(prec)
    resid0 = y[:, None] - X @ views.beta.T  # (m, G)
    mode = np.einsum("gij,gj->gi", C, (Z.T @ resid0).T / sigma2[:, None])
    chol_C = np.linalg.cholesky(C)
    scale = MH_STEP_SCALE / math.sqrt(q)

    gw = (
        views.gamma @ _surv_w(context, covs)
        if views.gamma.shape[1]
        else np.zeros(G)
    )
    breaks = hazard_breakpoints(spec)
    nodes, weights = gk_panel_nodes(0.0, request.t, max_panel, breaks)
    pieces = _HazardPieces(context, covs, nodes) if nodes.size else None

    def target(b):
        resid = resid0 - Z @ b.T
        out = -0.5 * np.sum(resid * resid, axis=0) / sigma2
        out -= 0.5 * np.einsum("gi,gij,gj->g", b, Sinv, b)
        if pieces is not None:
            out -= np.exp(gw) * (weights @ np.exp(pieces.log_hazard(views, b)))
        return out

    b = mode.copy()
    cur = target(b)
    for _ in range(mh_steps):
        z = rng.standard_normal((G, q))
        u = rng.uniform(size=G)
        prop = b + scale * np.einsum("gij,gj->gi", chol_C, z)
        new = target(prop)
        accept = np.log(u) < new - cur
        b = np.where(accept[:, None], prop, b)
        cur = np.where(accept, new, cur)
    return b


def sample_subject_effects(
    context: ModelContext,
    draws: PosteriorDraws,
    request: PredictionRequest,
    mh_steps: int = 25,
    seed: int = 0,
    max_panel: float = DEFAULT_MAX_PANEL,
) -> np.ndarray:
    """One random-effect vector per subsampled posterior draw, conditioned
    on the request history and on survival beyond the base time."""
    _check_domain(context, request.t)
    theta = draws.stacked()
    idx = subsample_indices(theta.shape[0], request.subsample)
    views = _DrawViews(context, theta[idx])
    rng = np.random.default_rng(seed)
    return _sample_b(context, views, request, mh_steps, rng, max_panel)


def conditional_survival(
    context: ModelContext,
    draws: PosteriorDraws,
    request: PredictionRequest,
    mh_steps: int = 25,
    seed: int = 0,
    max_panel: float = DEFAULT_MAX_PANEL,
    keep_samples: bool = False,
) -> PredictionResult:
    """pi_l(t, dt) for each horizon in the request grid."""
    horizon = request.t + float(np.max(request.dt_grid))
    _check_domain(context, horizon)
    theta = draws.stacked()
    idx = subsample_indices(theta.shape[0], request.subsample)
    views = _DrawViews(context, theta[idx])
    rng = np.random.default_rng(seed)
    b = _sample_b(context, views, request, mh_steps, rng, max_panel)

    covs = dict(request.covariates)
    gw = (
        views.gamma @ _surv_w(context, covs)
        if views.gamma.shape[1]
        else np.zeros(views.n_draws)
    )
    breaks = hazard_breakpoints(context.spec)
    n_dt = request.dt_grid.shape[0]
    pi = np.empty((views.n_draws, n_dt))
    for j, dt in enumerate(request.dt_grid):
        H = _cumulative_hazard_batch(
            context, views, covs, b, gw, request.t, request.t + float(dt),
            max_panel, breaks,
        )
        pi[:, j] = np.exp(-H)
    return PredictionResult(
        t=request.t,
        dt=request.dt_grid.copy(),
        mean=pi.mean(axis=0),
        lo=np.percentile(pi, 2.5, axis=0),
        hi=np.percentile(pi, 97.5, axis=0),
        samples=pi if keep_samples else None,
    )


def lambda_curve(
    context: ModelContext,
    draws: PosteriorDraws,
    ts,
    term: int = 0,
    subsample: int | None = None,
) -> LambdaCurve:
    """Posterior mean and 2.5/97.5 percentile band of the association
    coefficient curve on a time grid."""
    ts = np.asarray(ts, dtype=float)
    if not 0 <= term < len(context.spec.association.terms):
        raise ValidationError(f"no association term {term}")
    theta = draws.stacked()
    if subsample is not None:
        theta = theta[subsample_indices(theta.shape[0], subsample)]
    views = _DrawViews(context, theta)
    sp = context.spec.association.terms[term].spline
    alpha = views.alphas[term]
    if sp is None:
        curves = np.broadcast_to(alpha[:, 0][:, None], (alpha.shape[0], ts.shape[0]))
    else:
        curves = alpha @ bspline_matrix(sp, ts).T
    return LambdaCurve(
        term=term,
        name=context.alpha_labels[term],
        t=ts,
        mean=curves.mean(axis=0),
        lo=np.percentile(curves, 2.5, axis=0),
        hi=np.percentile(curves, 97.5, axis=0),
    )
