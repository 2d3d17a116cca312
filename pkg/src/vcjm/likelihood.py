"""Log-densities for the joint model: longitudinal, survival, priors.

Two layers live here.  The reference layer evaluates one subject at a time
and follows the written formulas closely; it is the normative definition.
The EvalContext/Workspace layer precomputes stacked design arrays across
all subjects and quadrature nodes so a sampler sweep costs a handful of
matrix-vector products; tests pin it to the reference layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln

from .model import ModelContext, ParameterState, Subject
from .splines import PenaltyMatrix, bspline_matrix, penalty_for

# 15-point Gauss-Kronrod rule on [-1, 1] (7-point Gauss base).
_GK_ABSC = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144838258730,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
    ]
)
_GK_W = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
    ]
)

GK_NODES = np.concatenate([-_GK_ABSC, [0.0], _GK_ABSC[::-1]])
GK_WEIGHTS = np.concatenate([_GK_W, [0.209482141084727828012999174891714], _GK_W[::-1]])

DEFAULT_MAX_PANEL = 2.0


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


GK15 = QuadratureRule(nodes=GK_NODES, weights=GK_WEIGHTS)


def gk_panel_nodes(
    a: float,
    b: float,
    max_panel: float = DEFAULT_MAX_PANEL,
    breakpoints=(),
):
    """Quadrature nodes and weights for [a, b].

    The interval is split at any supplied breakpoints (spline knots, so the
    integrand is analytic inside each panel) and further into panels of at
    most max_panel so long horizons keep full accuracy.
    """
    if b < a:
        raise ValueError(f"integration bounds reversed: [{a}, {b}]")
    if b == a:
        return np.empty(0), np.empty(0)
    cuts = [a] + [float(c) for c in breakpoints if a < c < b] + [b]
    cuts = sorted(set(cuts))
    edge_list = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n_panels = max(1, int(math.ceil((hi - lo) / max_panel - 1e-12)))
        seg = np.linspace(lo, hi, n_panels + 1)
        edge_list.append(seg[:-1] if hi < b else seg)
    edges = np.concatenate(edge_list)
    mids = 0.5 * (edges[:-1] + edges[1:])
    halfs = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mids[:, None] + halfs[:, None] * GK_NODES).ravel()
    weights = (halfs[:, None] * GK_WEIGHTS).ravel()
    return nodes, weights


def hazard_breakpoints(spec) -> tuple[float, ...]:
    """Interior knots of every basis entering the hazard, so quadrature
    panels can align with the integrand's non-smooth points."""
    pts: set[float] = set(spec.baseline.interior_knots)
    for term in spec.association.terms:
        if term.spline is not None:
            pts.update(term.spline.interior_knots)
    tb = spec.fixed.time
    if tb is not None and tb.kind == "ns":
        pts.update(tb.interior_knots)
    return tuple(sorted(pts))


def integrate_gk(f, a: float, b: float, max_panel: float = DEFAULT_MAX_PANEL) -> float:
    nodes, weights = gk_panel_nodes(a, b, max_panel)
    if nodes.size == 0:
        return 0.0
    return float(weights @ np.asarray(f(nodes), dtype=float))


# ---------------------------------------------------------------------------
# reference per-subject operations
# ---------------------------------------------------------------------------


def _scalar_covs(s: Subject) -> dict:
    # fixed/random design covariates are time-constant within subject
    return {k: float(np.ravel(v)[0]) for k, v in s.covariates.items()} if s.n_obs else {}


def _surv_vector(context: ModelContext, s: Subject) -> np.ndarray:
    return np.array(
        [float(s.surv_covariates[k]) for k in context.spec.survival_covariates]
    )


def eta_vector(context: ModelContext, subject_id: str, ts, state: ParameterState):
    s = context.data.subject(subject_id)
    i = context.data.index_of(subject_id)
    covs = _scalar_covs(s)
    X = context.spec.fixed.matrix(ts, covs)
    Z = context.spec.random.matrix(ts, covs)
    return X @ state.beta + Z @ state.b[i]


def eta(context: ModelContext, subject_id: str, t: float, state: ParameterState) -> float:
    return float(eta_vector(context, subject_id, [t], state)[0])


def eta_slope_vector(context: ModelContext, subject_id: str, ts, state: ParameterState):
    s = context.data.subject(subject_id)
    i = context.data.index_of(subject_id)
    covs = _scalar_covs(s)
    dX = context.spec.fixed.deriv_matrix(ts, covs)
    dZ = context.spec.random.deriv_matrix(ts, covs)
    return dX @ state.beta + dZ @ state.b[i]


def eta_slope(context: ModelContext, subject_id: str, t: float, state: ParameterState) -> float:
    return float(eta_slope_vector(context, subject_id, [t], state)[0])


def eta_integral_vector(context: ModelContext, subject_id: str, ts, state: ParameterState):
    """Inner integral of the cumulative form: one 15-point rule on [0, t]."""
    ts = np.asarray(ts, dtype=float)
    half = 0.5 * ts
    inner = (half[:, None] + half[:, None] * GK_NODES).ravel()
    vals = eta_vector(context, subject_id, inner, state).reshape(ts.shape[0], 15)
    return (vals @ GK_WEIGHTS) * half


def association_lambda(term_spline, alpha: np.ndarray, ts):
    """Coefficient curve at times ts: spline curve, or a constant scalar."""
    ts = np.asarray(ts, dtype=float)
    if term_spline is None:
        return np.full(ts.shape[0], float(alpha[0]))
    return bspline_matrix(term_spline, ts) @ alpha


def log_hazard_vector(context: ModelContext, subject_id: str, ts, state: ParameterState):
    spec = context.spec
    s = context.data.subject(subject_id)
    ts = np.asarray(ts, dtype=float)
    out = bspline_matrix(spec.baseline, ts) @ state.gamma_h0
    w = _surv_vector(context, s)
    if w.size:
        out = out + float(w @ state.gamma)
    form = spec.association.form
    if form == "value":
        lam = association_lambda(spec.association.terms[0].spline, state.alphas[0], ts)
        out = out + lam * eta_vector(context, subject_id, ts, state)
    elif form == "value+slope":
        lam1 = association_lambda(spec.association.terms[0].spline, state.alphas[0], ts)
        lam2 = association_lambda(spec.association.terms[1].spline, state.alphas[1], ts)
        out = out + lam1 * eta_vector(context, subject_id, ts, state)
        out = out + lam2 * eta_slope_vector(context, subject_id, ts, state)
    else:  # cumulative
        lam = association_lambda(spec.association.terms[0].spline, state.alphas[0], ts)
        out = out + lam * eta_integral_vector(context, subject_id, ts, state)
    return out


def log_hazard(context: ModelContext, subject_id: str, t: float, state: ParameterState) -> float:
    return float(log_hazard_vector(context, subject_id, [t], state)[0])


def cumulative_hazard(
    context: ModelContext,
    subject_id: str,
    a: float,
    b: float,
    state: ParameterState,
    max_panel: float = DEFAULT_MAX_PANEL,
) -> float:
    if a < 0 or b < a:
        raise ValueError(f"cumulative hazard needs 0 <= a <= b, got [{a}, {b}]")
    nodes, weights = gk_panel_nodes(
        a, b, max_panel, breakpoints=hazard_breakpoints(context.spec)
    )
    if nodes.size == 0:
        return 0.0
    return float(weights @ np.exp(log_hazard_vector(context, subject_id, nodes, state)))


def longitudinal_loglik(context: ModelContext, subject_id: str, state: ParameterState) -> float:
    if state.sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {state.sigma}")
    s = context.data.subject(subject_id)
    resid = s.values - eta_vector(context, subject_id, s.times, state)
    var = state.sigma**2
    return float(
        -0.5 * s.n_obs * math.log(2 * math.pi * var) - float(resid @ resid) / (2 * var)
    )


def survival_loglik(
    context: ModelContext,
    subject_id: str,
    state: ParameterState,
    max_panel: float = DEFAULT_MAX_PANEL,
) -> float:
    s = context.data.subject(subject_id)
    out = -cumulative_hazard(context, subject_id, 0.0, s.surv_time, state, max_panel)
    if s.event:
        out += log_hazard(context, subject_id, s.surv_time, state)
    return float(out)


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


def normal_logpdf_sum(x: np.ndarray, sd: float) -> float:
    x = np.asarray(x, dtype=float)
    return float(
        -0.5 * x.size * math.log(2 * math.pi * sd * sd) - float(x @ x) / (2 * sd * sd)
    )


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return float(
        shape * math.log(rate) - gammaln(shape) + (shape - 1) * math.log(x) - rate * x
    )


def pspline_logprior(alpha: np.ndarray, penalty: PenaltyMatrix, logdet: float, tau: float) -> float:
    """Precision-form smoothing prior: alpha | tau ~ N(0, (tau M)^-1)."""
    if tau <= 0:
        return -math.inf
    L = alpha.shape[0]
    quad = penalty.quad_form(alpha)
    return float(
        0.5 * L * math.log(tau)
        + 0.5 * logdet
        - 0.5 * L * math.log(2 * math.pi)
        - 0.5 * tau * quad
    )


def invwishart_logpdf(S: np.ndarray, df: float, scale_diag: float) -> float:
    """Density of an inverse-Wishart with scale matrix scale_diag * I."""
    q = S.shape[0]
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return -math.inf
    logdet_S = 2.0 * float(np.sum(np.log(np.diag(chol))))
    inv_S = np.linalg.inv(S)
    logdet_Psi = q * math.log(scale_diag)
    return float(
        0.5 * df * logdet_Psi
        - 0.5 * df * q * math.log(2)
        - multigammaln(0.5 * df, q)
        - 0.5 * (df + q + 1) * logdet_S
        - 0.5 * scale_diag * float(np.trace(inv_S))
    )


def b_prior_per_subject(b: np.ndarray, Sigma_b: np.ndarray) -> np.ndarray:
    """log N(b_i; 0, Sigma_b) for each row; -inf everywhere if not SPD."""
    n, q = b.shape
    try:
        chol = np.linalg.cholesky(Sigma_b)
    except np.linalg.LinAlgError:
        return np.full(n, -math.inf)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    sol = np.linalg.solve(chol, b.T)  # (q, n)
    quad = np.einsum("qn,qn->n", sol, sol)
    return -0.5 * (q * math.log(2 * math.pi) + logdet + quad)


class PriorTables:
    """Penalty matrices and their log-determinants, computed once per spec."""

    def __init__(self, context: ModelContext):
        spec = context.spec
        self.alpha_penalties: list[PenaltyMatrix | None] = []
        self.alpha_logdets: list[float] = []
        for term in spec.association.terms:
            if term.spline is None:
                self.alpha_penalties.append(None)
                self.alpha_logdets.append(0.0)
            else:
                pen = penalty_for(term.spline)
                self.alpha_penalties.append(pen)
                self.alpha_logdets.append(float(np.linalg.slogdet(pen.entries)[1]))
        self.h0_penalty = penalty_for(spec.baseline)
        self.h0_logdet = float(np.linalg.slogdet(self.h0_penalty.entries)[1])
        self.wishart_df = (
            spec.hyper.wishart_df if spec.hyper.wishart_df is not None else context.q
        )


def state_in_support(state: ParameterState) -> bool:
    if state.sigma <= 0 or state.tau_h0 <= 0:
        return False
    if any(t <= 0 for t in state.tau_alpha):
        return False
    try:
        np.linalg.cholesky(state.Sigma_b)
    except np.linalg.LinAlgError:
        return False
    return True


def log_prior(context: ModelContext, state: ParameterState, tables: PriorTables | None = None) -> float:
    if tables is None:
        tables = PriorTables(context)
    if not state_in_support(state):
        return -math.inf
    hyper = context.spec.hyper
    lp = normal_logpdf_sum(state.beta, hyper.beta_sd)
    lp += normal_logpdf_sum(state.gamma, hyper.gamma_sd)
    for t, term in enumerate(context.spec.association.terms):
        pen = tables.alpha_penalties[t]
        if pen is None:
            # scalar coefficient: same vague normal prior as gamma
            lp += normal_logpdf_sum(state.alphas[t], hyper.gamma_sd)
        else:
            lp += pspline_logprior(
                state.alphas[t], pen, tables.alpha_logdets[t], state.tau_alpha[t]
            )
            lp += gamma_logpdf(state.tau_alpha[t], hyper.c1, hyper.c2)
    lp += pspline_logprior(state.gamma_h0, tables.h0_penalty, tables.h0_logdet, state.tau_h0)
    lp += gamma_logpdf(state.tau_h0, hyper.f1, hyper.f2)
    lp += invwishart_logpdf(state.Sigma_b, tables.wishart_df, hyper.wishart_scale)
    phi = 1.0 / state.sigma**2
    lp += gamma_logpdf(phi, hyper.sigma2_shape, hyper.sigma2_rate)
    return float(lp)


def log_posterior(
    context: ModelContext,
    state: ParameterState,
    tables: PriorTables | None = None,
    max_panel: float = DEFAULT_MAX_PANEL,
) -> float:
    if not state_in_support(state):
        return -math.inf
    lp = log_prior(context, state, tables)
    bp = b_prior_per_subject(state.b, state.Sigma_b)
    total = lp + float(np.sum(bp))
    for s in context.data:
        total += longitudinal_loglik(context, s.subject_id, state)
        total += survival_loglik(context, s.subject_id, state, max_panel)
    return float(total)


# ---------------------------------------------------------------------------
# vectorized evaluation layer
# ---------------------------------------------------------------------------


def _integrated_design_rows(design, ts: np.ndarray, covs: dict) -> np.ndarray:
    """Rows of the design integrated over [0, t] by one 15-point rule each."""
    ts = np.asarray(ts, dtype=float)
    half = 0.5 * ts
    inner = (half[:, None] + half[:, None] * GK_NODES).ravel()
    M = design.matrix(inner, covs).reshape(ts.shape[0], 15, design.dim)
    return np.einsum("tjk,j,t->tk", M, GK_WEIGHTS, half)


class EvalContext:
    """Stacked design arrays over all subjects, measurement rows, quadrature
    nodes, and event times.  Built once per (spec, data) pair."""

    def __init__(self, context: ModelContext, max_panel: float = DEFAULT_MAX_PANEL):
        self.context = context
        self.max_panel = max_panel
        spec = context.spec
        data = context.data
        n = len(data)
        self.n = n
        self.form = spec.association.form
        self.need_slope = self.form == "value+slope"
        self.need_integral = self.form == "cumulative"

        # longitudinal rows
        ys, Xs, Zs, idx = [], [], [], []
        for i, s in enumerate(data):
            covs = _scalar_covs(s)
            ys.append(s.values)
            Xs.append(spec.fixed.matrix(s.times, covs))
            Zs.append(spec.random.matrix(s.times, covs))
            idx.append(np.full(s.n_obs, i, dtype=np.intp))
        self.y = np.concatenate(ys)
        self.Xl = np.concatenate(Xs, axis=0)
        self.Zl = np.concatenate(Zs, axis=0)
        self.idx_l = np.concatenate(idx)
        self.counts_l = np.bincount(self.idx_l, minlength=n).astype(float)
        self.N = self.y.shape[0]

        # survival scalars
        self.T = np.array([s.surv_time for s in data])
        self.delta = np.array([float(s.event) for s in data])
        self.W = (
            np.array([[float(s.surv_covariates[k]) for k in spec.survival_covariates] for s in data])
            if spec.survival_covariates
            else np.zeros((n, 0))
        )

        # quadrature node rows for H_i(0, T_i)
        breaks = hazard_breakpoints(spec)
        tq_list, wq_list, iq_list = [], [], []
        for i, s in enumerate(data):
            nodes, weights = gk_panel_nodes(0.0, s.surv_time, max_panel, breaks)
            tq_list.append(nodes)
            wq_list.append(weights)
            iq_list.append(np.full(nodes.shape[0], i, dtype=np.intp))
        self.tq = np.concatenate(tq_list)
        self.wq = np.concatenate(wq_list)
        self.idx_q = np.concatenate(iq_list)
        self.M = self.tq.shape[0]

        def design_block(ts, idx):
            X = np.empty((ts.shape[0], spec.fixed.dim))
            Z = np.empty((ts.shape[0], spec.random.dim))
            dX = np.empty_like(X) if self.need_slope else None
            dZ = np.empty_like(Z) if self.need_slope else None
            iX = np.empty_like(X) if self.need_integral else None
            iZ = np.empty_like(Z) if self.need_integral else None
            for i, s in enumerate(data):
                covs = _scalar_covs(s)
                mask = idx == i
                t_i = ts[mask]
                X[mask] = spec.fixed.matrix(t_i, covs)
                Z[mask] = spec.random.matrix(t_i, covs)
                if self.need_slope:
                    dX[mask] = spec.fixed.deriv_matrix(t_i, covs)
                    dZ[mask] = spec.random.deriv_matrix(t_i, covs)
                if self.need_integral:
                    iX[mask] = _integrated_design_rows(spec.fixed, t_i, covs)
                    iZ[mask] = _integrated_design_rows(spec.random, t_i, covs)
            return X, Z, dX, dZ, iX, iZ

        self.Xq, self.Zq, self.dXq, self.dZq, self.iXq, self.iZq = design_block(
            self.tq, self.idx_q
        )
        idx_e = np.arange(n, dtype=np.intp)
        self.Xe, self.Ze, self.dXe, self.dZe, self.iXe, self.iZe = design_block(
            self.T, idx_e
        )

        # spline bases at node and event times
        self.Bh_q = bspline_matrix(spec.baseline, self.tq)
        self.Bh_e = bspline_matrix(spec.baseline, self.T)
        self.Ba_q: list[np.ndarray | None] = []
        self.Ba_e: list[np.ndarray | None] = []
        for term in spec.association.terms:
            if term.spline is None:
                self.Ba_q.append(None)
                self.Ba_e.append(None)
            else:
                self.Ba_q.append(bspline_matrix(term.spline, self.tq))
                self.Ba_e.append(bspline_matrix(term.spline, self.T))

        self.tables = PriorTables(context)

    # -- state-dependent pieces ------------------------------------------

    def lam(self, t: int, state_alpha: np.ndarray, at: str):
        B = self.Ba_q[t] if at == "q" else self.Ba_e[t]
        if B is None:
            return float(state_alpha[0])
        return B @ state_alpha

    def features(self, xb, zb, dxb, dzb, ixb, izb, at: str):
        """Per-term association features from cached eta pieces."""
        if self.form == "value":
            return (xb + zb,)
        if self.form == "value+slope":
            return (xb + zb, dxb + dzb)
        return (ixb + izb,)

    def eta_pieces(self, beta: np.ndarray, b: np.ndarray, at: str):
        """X@beta and gathered Z*b products for rows of kind at in {l,q,e}."""
        if at == "l":
            X, Z, idx = self.Xl, self.Zl, self.idx_l
            return X @ beta, np.einsum("ij,ij->i", Z, b[idx]), None, None, None, None
        if at == "q":
            X, Z, idx = self.Xq, self.Zq, self.idx_q
            dX, dZ, iX, iZ = self.dXq, self.dZq, self.iXq, self.iZq
        else:
            X, Z = self.Xe, self.Ze
            idx = np.arange(self.n, dtype=np.intp)
            dX, dZ, iX, iZ = self.dXe, self.dZe, self.iXe, self.iZe
        xb = X @ beta
        zb = np.einsum("ij,ij->i", Z, b[idx])
        dxb = dX @ beta if dX is not None else None
        dzb = np.einsum("ij,ij->i", dZ, b[idx]) if dZ is not None else None
        ixb = iX @ beta if iX is not None else None
        izb = np.einsum("ij,ij->i", iZ, b[idx]) if iZ is not None else None
        return xb, zb, dxb, dzb, ixb, izb


class Workspace:
    """Mutable per-chain cache of state-dependent products.

    Sampler blocks propose replacement pieces, score them with the
    *_loglik methods, and commit accepted pieces back into the cache.
    """

    def __init__(self, ev: EvalContext, state: ParameterState):
        self.ev = ev
        self.refresh_all(state)

    def refresh_all(self, state: ParameterState) -> None:
        ev = self.ev
        self.pieces_l = ev.eta_pieces(state.beta, state.b, "l")
        self.pieces_q = ev.eta_pieces(state.beta, state.b, "q")
        self.pieces_e = ev.eta_pieces(state.beta, state.b, "e")
        self.gw = ev.W @ state.gamma if ev.W.shape[1] else np.zeros(ev.n)
        self.bh_q = ev.Bh_q @ state.gamma_h0
        self.bh_e = ev.Bh_e @ state.gamma_h0
        self.lam_q = [ev.lam(t, a, "q") for t, a in enumerate(state.alphas)]
        self.lam_e = [ev.lam(t, a, "e") for t, a in enumerate(state.alphas)]
        self.core = self.surv_core()

    def surv_core(self, pieces_q=None, pieces_e=None, bh_q=None, bh_e=None,
                  lam_q=None, lam_e=None):
        """Survival pieces that exclude the covariate effect: the event-time
        log-hazard without gamma'w, and the baseline-association integral.
        The covariate term re-enters cheaply per subject, so gamma updates
        skip the exp over all quadrature rows."""
        ev = self.ev
        pieces_q = pieces_q if pieces_q is not None else self.pieces_q
        pieces_e = pieces_e if pieces_e is not None else self.pieces_e
        bh_q = bh_q if bh_q is not None else self.bh_q
        bh_e = bh_e if bh_e is not None else self.bh_e
        lam_q = lam_q if lam_q is not None else self.lam_q
        lam_e = lam_e if lam_e is not None else self.lam_e
        feats_q = ev.features(*pieces_q, "q")
        feats_e = ev.features(*pieces_e, "e")
        logh_q = bh_q.copy()
        for lam, feat in zip(lam_q, feats_q):
            logh_q += lam * feat
        base = np.bincount(ev.idx_q, weights=ev.wq * np.exp(logh_q), minlength=ev.n)
        logh_e = bh_e.copy()
        for lam, feat in zip(lam_e, feats_e):
            logh_e += lam * feat
        return logh_e, base

    def surv_from_core(self, core, gw=None) -> np.ndarray:
        logh_e, base = core
        gw = gw if gw is not None else self.gw
        return self.ev.delta * (logh_e + gw) - np.exp(gw) * base

    # -- longitudinal ----------------------------------------------------

    def long_loglik_per_subject(self, sigma: float, pieces_l=None) -> np.ndarray:
        ev = self.ev
        xb, zb = (pieces_l or self.pieces_l)[:2]
        resid = ev.y - xb - zb
        rss = np.bincount(ev.idx_l, weights=resid * resid, minlength=ev.n)
        var = sigma * sigma
        return -0.5 * ev.counts_l * math.log(2 * math.pi * var) - rss / (2 * var)

    def residuals(self, pieces_l=None) -> np.ndarray:
        xb, zb = (pieces_l or self.pieces_l)[:2]
        return self.ev.y - xb - zb

    # -- survival --------------------------------------------------------

    def surv_loglik_per_subject(
        self, pieces_q=None, pieces_e=None, gw=None, bh_q=None, bh_e=None,
        lam_q=None, lam_e=None,
    ) -> np.ndarray:
        if all(x is None for x in (pieces_q, pieces_e, bh_q, bh_e, lam_q, lam_e)):
            core = self.core
        else:
            core = self.surv_core(pieces_q, pieces_e, bh_q, bh_e, lam_q, lam_e)
        return self.surv_from_core(core, gw)

    def loglik_per_subject(self, state: ParameterState) -> np.ndarray:
        return self.long_loglik_per_subject(state.sigma) + self.surv_loglik_per_subject()

    def deviance(self, state: ParameterState) -> float:
        """Conditional deviance -2 sum_i log p(y_i, T_i, delta_i | theta, b):
        the likelihood given the random effects, which enter as parameters."""
        return float(-2.0 * np.sum(self.loglik_per_subject(state)))
