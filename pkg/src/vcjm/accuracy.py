"""Censoring-aware discrimination (AUC) and calibration (prediction error),
plus cross-validation and external-validation orchestration.

Pair indicators use strict inequality; ties contribute zero. Pair sums are
accumulated with math.fsum, so results are exactly reproducible against a
brute-force pair enumeration regardless of summation order.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import DataSet, JointModelSpec, ModelContext, ValidationError, validate
from .prediction import PredictionRequest, conditional_survival
from .sampler import PosteriorDraws, run as run_sampler

AUC_MODES = ("literal", "conditional")
PE_MODES = ("coherent", "literal")


@dataclass(frozen=True)
class RiskTable:
    """Per-subject predictions at one (t, dt) cell.

    pi_from_cens holds conditional survival from the censoring time to
    t + dt; pi_cens_horizon holds pi(T_l, dt) exactly as printed. Both are
    needed only on rows censored inside the window and may be NaN
    elsewhere.
    """

    subject_ids: tuple[str, ...]
    pi: np.ndarray
    T: np.ndarray
    delta: np.ndarray
    pi_from_cens: np.ndarray | None = None
    pi_cens_horizon: np.ndarray | None = None

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        T = np.asarray(self.T, dtype=float)
        delta = np.asarray(self.delta)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "delta", delta)
        n = len(self.subject_ids)
        if not (pi.shape == T.shape == delta.shape == (n,)):
            raise ValidationError("risk table arrays must align with subject ids")
        if np.any(~np.isfinite(pi)) or np.any(pi < 0) or np.any(pi > 1):
            raise ValidationError("pi values must lie in [0, 1]")
        for name in ("pi_from_cens", "pi_cens_horizon"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != (n,):
                raise ValidationError(f"{name} must align with subject ids")
            vals = arr[np.isfinite(arr)]
            if np.any(vals < 0) or np.any(vals > 1):
                raise ValidationError(f"{name} values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.subject_ids)


@dataclass(frozen=True)
class SensSpec:
    sensitivity: float
    specificity: float
    n_events: int
    n_survivors: int


@dataclass(frozen=True)
class AccuracyReport:
    t: float
    dt: float
    auc: float
    auc_components: tuple[float, float, float, float]
    pe: float
    pair_counts: tuple[int, int, int, int]
    weighted_pairs: float
    n_at_risk: int


@dataclass(frozen=True)
class CVRow:
    rep: int
    fold: int
    model: str
    t: float
    dt: float
    metric: str
    value: float


def sensitivity_specificity(table: RiskTable, c: float, t: float, dt: float) -> SensSpec:
    """Classification rates over subjects with known status at t + dt."""
    if not 0 <= c <= 1:
        raise ValidationError(f"threshold must lie in [0, 1], got {c}")
    T, delta, pi = table.T, table.delta, table.pi
    events = (T > t) & (T <= t + dt) & (delta == 1)
    survivors = T > t + dt
    n_ev = int(np.sum(events))
    n_sv = int(np.sum(survivors))
    sens = float(np.sum(pi[events] <= c)) / n_ev if n_ev else float("nan")
    spec = float(np.sum(pi[survivors] > c)) / n_sv if n_sv else float("nan")
    return SensSpec(sens, spec, n_ev, n_sv)


def _pair_classes(table: RiskTable, t: float, dt: float):
    T, delta = table.T, table.delta
    hi = t + dt
    ev = (T > t) & (T <= hi) & (delta == 1)
    cw = (T > t) & (T <= hi) & (delta == 0)
    af = T > hi
    earlier = T[:, None] < T[None, :]
    return (
        ev[:, None] & af[None, :],
        cw[:, None] & af[None, :],
        ev[:, None] & cw[None, :] & earlier,
        cw[:, None] & cw[None, :] & earlier,
    )


def auc(table: RiskTable, t: float, dt: float, mode: str = "literal") -> AccuracyReport:
    """Censoring-weighted AUC over the four pair classes.

    The total is the pooled ratio: every pair contributes its weighted
    concordance to one numerator and its weight to one denominator, which
    keeps the total inside [0, 1]. Per-class ratios are also reported.
    """
    if mode not in AUC_MODES:
        raise ValidationError(f"auc mode must be one of {AUC_MODES}")
    pi = table.pi
    if mode == "literal":
        w_l1, w_l2 = pi, pi
    else:
        if table.pi_from_cens is None:
            raise ValidationError("conditional mode needs pi_from_cens")
        w_l1 = w_l2 = table.pi_from_cens
    masks = _pair_classes(table, t, dt)
    conc = (pi[:, None] < pi[None, :]).astype(float)
    one = np.ones((table.n, table.n))
    weights = (
        one,
        (1.0 - w_l1)[:, None] * one,
        one * w_l2[None, :],
        (1.0 - w_l1)[:, None] * w_l2[None, :],
    )
    components = []
    counts = []
    all_num: list[float] = []
    all_den: list[float] = []
    for mask, K in zip(masks, weights):
        den_entries = K[mask]
        num_entries = (conc * K)[mask]
        counts.append(int(np.sum(mask)))
        all_num.extend(num_entries.tolist())
        all_den.extend(den_entries.tolist())
        den = math.fsum(den_entries.tolist())
        components.append(math.fsum(num_entries.tolist()) / den if den > 0 else float("nan"))
    total_den = math.fsum(all_den)
    total = math.fsum(all_num) / total_den if total_den > 0 else float("nan")
    return AccuracyReport(
        t=t,
        dt=dt,
        auc=total,
        auc_components=tuple(components),
        pe=float("nan"),
        pair_counts=tuple(counts),
        weighted_pairs=total_den,
        n_at_risk=int(np.sum(table.T >= t)),
    )


def prediction_error(table: RiskTable, t: float, dt: float, mode: str = "coherent") -> float:
    """Henderson prediction error over subjects at risk at t."""
    if mode not in PE_MODES:
        raise ValidationError(f"pe mode must be one of {PE_MODES}")
    T, delta, pi = table.T, table.delta, table.pi
    at_risk = T >= t
    R = int(np.sum(at_risk))
    if R < 1:
        raise ValidationError(f"no subjects at risk at t={t:g}")
    hi = t + dt
    terms: list[float] = []
    w_src = table.pi_from_cens if mode == "coherent" else table.pi_cens_horizon
    for l in np.flatnonzero(at_risk):
        p = float(pi[l])
        if T[l] > hi:
            terms.append((1.0 - p) ** 2)
        elif T[l] < hi and delta[l] == 1:
            terms.append(p * p)
        elif T[l] < hi:
            if w_src is None or not math.isfinite(float(w_src[l])):
                name = "pi_from_cens" if mode == "coherent" else "pi_cens_horizon"
                raise ValidationError(
                    f"subject {table.subject_ids[l]!r} is censored in the window; "
                    f"{name} is required"
                )
            w = float(w_src[l])
            terms.append(w * (1.0 - p) ** 2 + (1.0 - w) * p * p)
    return math.fsum(terms) / R


def evaluate(
    table: RiskTable,
    t: float,
    dt: float,
    auc_mode: str = "literal",
    pe_mode: str = "coherent",
) -> AccuracyReport:
    report = auc(table, t, dt, mode=auc_mode)
    pe = prediction_error(table, t, dt, mode=pe_mode)
    return AccuracyReport(
        t=report.t,
        dt=report.dt,
        auc=report.auc,
        auc_components=report.auc_components,
        pe=pe,
        pair_counts=report.pair_counts,
        weighted_pairs=report.weighted_pairs,
        n_at_risk=report.n_at_risk,
    )


# ---------------------------------------------------------------------------
# risk-table construction from fitted draws
# ---------------------------------------------------------------------------


def _subject_request(s, t: float, dt_grid, subsample: int) -> PredictionRequest:
    keep = s.times <= t
    covs = {k: float(np.ravel(v)[0]) for k, v in s.covariates.items()} if s.n_obs else {}
    covs.update({k: float(v) for k, v in s.surv_covariates.items()})
    return PredictionRequest(
        times=s.times[keep],
        values=s.values[keep],
        covariates=covs,
        t=t,
        dt_grid=dt_grid,
        subsample=subsample,
    )


def _cell_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def build_risk_table(
    context: ModelContext,
    draws: PosteriorDraws,
    data: DataSet,
    t: float,
    dt: float,
    subsample: int = 500,
    mh_steps: int = 25,
    seed: int = 0,
    aux: bool = True,
) -> RiskTable:
    """Predictions pi(t, dt) for every subject of `data` at risk at t, with
    the censoring-time auxiliaries needed by the weighted metrics."""
    ids, pis, Ts, deltas, pfc, pch = [], [], [], [], [], []
    for k, sid in enumerate(data.subject_ids):
        s = data.subject(sid)
        if s.surv_time < t:
            continue
        req = _subject_request(s, t, np.array([dt]), subsample)
        res = conditional_survival(
            context, draws, req, mh_steps=mh_steps, seed=_cell_seed(seed, 2 * k)
        )
        ids.append(sid)
        pis.append(float(res.mean[0]))
        Ts.append(s.surv_time)
        deltas.append(s.event)
        cens_in_window = s.event == 0 and t < s.surv_time <= t + dt
        if aux and cens_in_window:
            grid = np.array([t + dt - s.surv_time, dt])
            req_c = _subject_request(s, s.surv_time, grid, subsample)
            res_c = conditional_survival(
                context, draws, req_c, mh_steps=mh_steps, seed=_cell_seed(seed, 2 * k + 1)
            )
            pfc.append(float(res_c.mean[0]))
            pch.append(float(res_c.mean[1]))
        else:
            pfc.append(float("nan"))
            pch.append(float("nan"))
    return RiskTable(
        subject_ids=tuple(ids),
        pi=np.array(pis),
        T=np.array(Ts),
        delta=np.array(deltas, dtype=int),
        pi_from_cens=np.array(pfc) if aux else None,
        pi_cens_horizon=np.array(pch) if aux else None,
    )


# ---------------------------------------------------------------------------
# validation orchestration
# ---------------------------------------------------------------------------


def fold_assignments(subject_ids: Sequence[str], folds: int, rng: np.random.Generator):
    """Subject-level partition; fold sizes differ by at most one."""
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if folds > len(subject_ids):
        raise ValidationError("more folds than subjects")
    perm = rng.permutation(len(subject_ids))
    out = {}
    for pos, idx in enumerate(perm):
        out[subject_ids[idx]] = pos % folds
    return out


def _score_rows(
    context: ModelContext,
    draws: PosteriorDraws,
    holdout: DataSet,
    model: str,
    rep: int,
    fold: int,
    times,
    dt: float,
    subsample: int,
    mh_steps: int,
    seed: int,
    auc_mode: str,
    pe_mode: str,
) -> list[CVRow]:
    rows = []
    for t in times:
        cell_seed = _cell_seed(seed, int(round(t * 1000)))
        at_risk = [sid for sid in holdout.subject_ids if holdout.subject(sid).surv_time >= t]
        if not at_risk:
            rows.append(CVRow(rep, fold, model, t, dt, "auc", float("nan")))
            rows.append(CVRow(rep, fold, model, t, dt, "pe", float("nan")))
            continue
        table = build_risk_table(
            context, draws, holdout, t, dt,
            subsample=subsample, mh_steps=mh_steps, seed=cell_seed,
        )
        report = auc(table, t, dt, mode=auc_mode)
        rows.append(CVRow(rep, fold, model, t, dt, "auc", report.auc))
        rows.append(CVRow(rep, fold, model, t, dt, "pe", prediction_error(table, t, dt, mode=pe_mode)))
    return rows


def _run_cell(payload) -> list[CVRow]:
    """Fit one (rep, fold, model) cell and score its holdout; top level so a
    process pool can pickle it."""
    (train, test, spec, model, rep, fold, times, dt, fit_seed, chains, n_iter,
     burn_in, thin, subsample, mh_steps, auc_mode, pe_mode) = payload
    context = validate(spec, train)
    draws = run_sampler(
        context, chains=chains, n_iter=n_iter, burn_in=burn_in, thin=thin,
        seed=fit_seed,
    )
    return _score_rows(
        context, draws, test, model, rep, fold, times, dt,
        subsample, mh_steps, fit_seed, auc_mode, pe_mode,
    )


def _run_cells(payloads, jobs: int) -> list[CVRow]:
    # cell seeds are baked into the payloads, so execution order cannot
    # change any value; map preserves submission order either way
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]
    return [row for cell in results for row in cell]


def cross_validate(
    data: DataSet,
    specs: Mapping[str, JointModelSpec],
    times,
    dt: float,
    folds: int = 5,
    reps: int = 1,
    seed: int = 0,
    chains: int = 2,
    n_iter: int = 2000,
    burn_in: int = 1000,
    thin: int = 2,
    subsample: int = 500,
    mh_steps: int = 25,
    auc_mode: str = "literal",
    pe_mode: str = "coherent",
    jobs: int = 1,
) -> list[CVRow]:
    """Subject-level k-fold cross-validation of each spec; long-format rows."""
    payloads = []
    for rep in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
        assign = fold_assignments(data.subject_ids, folds, rng)
        for fold in range(folds):
            test_ids = [sid for sid in data.subject_ids if assign[sid] == fold]
            train_ids = [sid for sid in data.subject_ids if assign[sid] != fold]
            train = data.subset(train_ids)
            test = data.subset(test_ids)
            for model, spec in specs.items():
                fit_seed = _cell_seed(
                    seed,
                    rep * 100000 + fold * 1000 + zlib.crc32(model.encode()) % 1000,
                )
                payloads.append((
                    train, test, spec, model, rep, fold, tuple(times), dt,
                    fit_seed, chains, n_iter, burn_in, thin, subsample,
                    mh_steps, auc_mode, pe_mode,
                ))
    return _run_cells(payloads, jobs)


def external_validate(
    train: DataSet,
    test: DataSet,
    specs: Mapping[str, JointModelSpec],
    times,
    dt: float,
    seed: int = 0,
    chains: int = 2,
    n_iter: int = 2000,
    burn_in: int = 1000,
    thin: int = 2,
    subsample: int = 500,
    mh_steps: int = 25,
    auc_mode: str = "literal",
    pe_mode: str = "coherent",
    jobs: int = 1,
) -> list[CVRow]:
    """Fit each spec on `train`, score on `test`; long-format rows."""
    payloads = []
    for model, spec in specs.items():
        fit_seed = _cell_seed(seed, zlib.crc32(model.encode()) % 1000)
        payloads.append((
            train, test, spec, model, 0, 0, tuple(times), dt, fit_seed,
            chains, n_iter, burn_in, thin, subsample, mh_steps,
            auc_mode, pe_mode,
        ))
    return _run_cells(payloads, jobs)


def write_rows(rows: Sequence[CVRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("rep,fold,model,t,dt,metric,value\n")
        for r in rows:
            fh.write(f"{r.rep},{r.fold},{r.model},{r.t:g},{r.dt:g},{r.metric},{r.value!r}\n")
