"""Model specification, data model, priors, and parameter containers.

A joint model couples a linear mixed model for the longitudinal response
with a relative-risk survival model whose association coefficients may
vary over time.  Everything here is a declarative value object: specs and
states are immutable, and validation produces a context object that the
likelihood and sampler layers build on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .splines import (
    SplineSpec,
    natural_cubic_deriv_matrix,
    natural_cubic_matrix,
)

VALID_FORMS = ("value", "value+slope", "cumulative")


class ValidationError(ValueError):
    """A model spec or dataset violates a structural invariant."""


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LongitudinalRecord:
    subject_id: str
    time: float
    value: float
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ValidationError(
                f"subject {self.subject_id!r}: longitudinal time {self.time} "
                "must be finite and non-negative"
            )
        if not math.isfinite(self.value):
            raise ValidationError(
                f"subject {self.subject_id!r}: longitudinal value {self.value} "
                "must be finite"
            )


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    time: float
    event: int
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time <= 0:
            raise ValidationError(
                f"subject {self.subject_id!r}: observed time {self.time} "
                "must be finite and positive"
            )
        if self.event not in (0, 1):
            raise ValidationError(
                f"subject {self.subject_id!r}: event indicator {self.event} "
                "must be 0 or 1"
            )


@dataclass(frozen=True)
class Subject:
    """One subject's data, with longitudinal arrays ready for design building."""

    subject_id: str
    times: np.ndarray
    values: np.ndarray
    covariates: Mapping[str, np.ndarray]  # per-record columns
    surv_time: float
    event: int
    surv_covariates: Mapping[str, float]

    @property
    def n_obs(self) -> int:
        return self.times.shape[0]


class DataSet:
    """Ordered collection of subjects with one survival record each."""

    def __init__(self, subjects: Sequence[Subject]):
        seen = set()
        for s in subjects:
            if s.subject_id in seen:
                raise ValidationError(f"duplicate subject id {s.subject_id!r}")
            seen.add(s.subject_id)
            if s.n_obs and float(np.max(s.times)) > s.surv_time + 1e-12:
                raise ValidationError(
                    f"subject {s.subject_id!r}: longitudinal time "
                    f"{float(np.max(s.times)):g} exceeds observed time {s.surv_time:g}"
                )
        self.subjects = tuple(subjects)
        self._index = {s.subject_id: i for i, s in enumerate(self.subjects)}

    @classmethod
    def from_records(
        cls,
        longitudinal: Sequence[LongitudinalRecord],
        survival: Sequence[SurvivalRecord],
    ) -> "DataSet":
        by_subject: dict[str, list[LongitudinalRecord]] = {}
        for rec in longitudinal:
            by_subject.setdefault(rec.subject_id, []).append(rec)
        surv_ids = {rec.subject_id for rec in survival}
        for sid in by_subject:
            if sid not in surv_ids:
                raise ValidationError(
                    f"subject {sid!r} has longitudinal records but no survival record"
                )
        subjects = []
        for srec in survival:
            recs = by_subject.get(srec.subject_id, [])
            cov_names = sorted({k for r in recs for k in r.covariates})
            subjects.append(
                Subject(
                    subject_id=srec.subject_id,
                    times=np.array([r.time for r in recs], dtype=float),
                    values=np.array([r.value for r in recs], dtype=float),
                    covariates={
                        k: np.array([float(r.covariates[k]) for r in recs])
                        for k in cov_names
                    },
                    surv_time=float(srec.time),
                    event=int(srec.event),
                    surv_covariates=dict(srec.covariates),
                )
            )
        return cls(subjects)

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def index_of(self, subject_id: str) -> int:
        try:
            return self._index[subject_id]
        except KeyError:
            raise KeyError(f"unknown subject {subject_id!r}") from None

    def subject(self, subject_id: str) -> Subject:
        return self.subjects[self.index_of(subject_id)]

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(s.subject_id for s in self.subjects)

    def subset(self, subject_ids: Sequence[str]) -> "DataSet":
        return DataSet([self.subject(sid) for sid in subject_ids])


# ---------------------------------------------------------------------------
# design descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeBasis:
    """Time component of a linear design: raw time or a natural cubic basis."""

    kind: str  # "linear" | "ns"
    interior_knots: tuple[float, ...] = ()
    boundary: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("linear", "ns"):
            raise ValidationError(f"unknown time basis kind {self.kind!r}")
        if self.kind == "ns":
            lo, hi = self.boundary
            if not lo < hi:
                raise ValidationError("time basis boundary must satisfy lo < hi")
            prev = lo
            for k in self.interior_knots:
                if not prev < k < hi:
                    raise ValidationError(
                        "time basis interior knots must be strictly increasing "
                        "inside the boundary"
                    )
                prev = k

    @property
    def dim(self) -> int:
        if self.kind == "linear":
            return 1
        return len(self.interior_knots) + 1

    def matrix(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self.kind == "linear":
            return ts.reshape(-1, 1)
        return natural_cubic_matrix(self.interior_knots, self.boundary, ts)

    def deriv_matrix(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self.kind == "linear":
            return np.ones((ts.shape[0], 1))
        return natural_cubic_deriv_matrix(self.interior_knots, self.boundary, ts)

    def column_names(self) -> tuple[str, ...]:
        if self.kind == "linear":
            return ("t",)
        return tuple(f"ns{i + 1}(t)" for i in range(self.dim))


@dataclass(frozen=True)
class LinearDesign:
    """Row layout: intercept, covariates in declared order, then time basis."""

    intercept: bool = True
    covariates: tuple[str, ...] = ()
    time: TimeBasis | None = None

    @property
    def dim(self) -> int:
        d = int(self.intercept) + len(self.covariates)
        if self.time is not None:
            d += self.time.dim
        return d

    def column_names(self) -> tuple[str, ...]:
        names: list[str] = []
        if self.intercept:
            names.append("(intercept)")
        names.extend(self.covariates)
        if self.time is not None:
            names.extend(self.time.column_names())
        return tuple(names)

    def matrix(self, ts, covariates: Mapping[str, np.ndarray | float]) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        npts = ts.shape[0]
        cols = []
        if self.intercept:
            cols.append(np.ones(npts))
        for name in self.covariates:
            if name not in covariates:
                raise ValidationError(f"covariate {name!r} missing from data")
            cols.append(np.broadcast_to(np.asarray(covariates[name], dtype=float), (npts,)))
        if self.time is not None:
            cols.append(self.time.matrix(ts))
        if not cols:
            return np.zeros((npts, 0))
        return np.column_stack(cols)

    def deriv_matrix(self, ts, covariates: Mapping[str, np.ndarray | float]) -> np.ndarray:
        # Time derivative of each design column; covariate terms contribute 0.
        ts = np.asarray(ts, dtype=float)
        npts = ts.shape[0]
        out = np.zeros((npts, self.dim))
        if self.time is not None:
            out[:, self.dim - self.time.dim:] = self.time.deriv_matrix(ts)
        return out


# ---------------------------------------------------------------------------
# association and joint-model specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssociationTerm:
    """One association coefficient: a scalar, or a spline curve over time."""

    spline: SplineSpec | None = None  # None = constant coefficient

    @property
    def constant(self) -> bool:
        return self.spline is None

    @property
    def dim(self) -> int:
        return 1 if self.spline is None else self.spline.dim


@dataclass(frozen=True)
class AssociationSpec:
    form: str
    terms: tuple[AssociationTerm, ...]

    def __post_init__(self):
        if self.form not in VALID_FORMS:
            raise ValidationError(
                f"association form must be one of {VALID_FORMS}, got {self.form!r}"
            )
        expected = 2 if self.form == "value+slope" else 1
        if len(self.terms) != expected:
            raise ValidationError(
                f"association form {self.form!r} takes {expected} term(s), "
                f"got {len(self.terms)}"
            )

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @classmethod
    def constant(cls, form: str) -> "AssociationSpec":
        n = 2 if form == "value+slope" else 1
        return cls(form=form, terms=tuple(AssociationTerm() for _ in range(n)))

    @classmethod
    def time_varying(cls, form: str, spline: SplineSpec) -> "AssociationSpec":
        n = 2 if form == "value+slope" else 1
        return cls(form=form, terms=tuple(AssociationTerm(spline) for _ in range(n)))


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings; defaults follow the smoothing-prior convention."""

    c1: float = 1.0  # gamma shape for the association smoothing precision
    c2: float = 0.005  # gamma rate for the association smoothing precision
    f1: float = 1.0  # gamma shape for the baseline smoothing precision
    f2: float = 0.005  # gamma rate for the baseline smoothing precision
    beta_sd: float = 100.0
    gamma_sd: float = 100.0
    wishart_df: float | None = None  # None: random-effects dimension q
    wishart_scale: float = 1.0  # scale matrix = wishart_scale * I_q
    sigma2_shape: float = 0.01
    sigma2_rate: float = 0.01

    def __post_init__(self):
        for name in ("c1", "c2", "f1", "f2", "beta_sd", "gamma_sd",
                     "wishart_scale", "sigma2_shape", "sigma2_rate"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"hyperparameter {name} must be > 0")
        if self.wishart_df is not None and self.wishart_df <= 0:
            raise ValidationError("wishart_df must be > 0")


@dataclass(frozen=True)
class JointModelSpec:
    fixed: LinearDesign
    random: LinearDesign
    survival_covariates: tuple[str, ...]
    baseline: SplineSpec
    association: AssociationSpec
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def __post_init__(self):
        _check_random_subset(self.fixed, self.random)
        if self.association.form == "value+slope" and self.fixed.time is None:
            raise ValidationError(
                "value+slope association requires a time basis in the "
                "fixed-effects design"
            )
        if self.baseline.penalty_order is None:
            raise ValidationError("baseline hazard basis needs a penalty order")
        for i, term in enumerate(self.association.terms):
            if term.spline is not None and term.spline.penalty_order is None:
                raise ValidationError(
                    f"time-varying association term {i} needs a penalty order"
                )


def _check_random_subset(fixed: LinearDesign, random: LinearDesign) -> None:
    if random.intercept and not fixed.intercept:
        raise ValidationError("random intercept requires a fixed intercept")
    for name in random.covariates:
        if name not in fixed.covariates:
            raise ValidationError(
                f"random-effects covariate {name!r} not in the fixed design"
            )
    if random.time is not None and random.time != fixed.time:
        raise ValidationError(
            "random-effects time basis must match the fixed-effects time basis"
        )


# ---------------------------------------------------------------------------
# parameter state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterState:
    """Immutable snapshot of every sampled quantity in the joint model."""

    beta: np.ndarray  # (p,)
    b: np.ndarray  # (n, q)
    sigma: float  # residual SD, > 0
    Sigma_b: np.ndarray  # (q, q) SPD
    gamma: np.ndarray  # (s,)
    alphas: tuple[np.ndarray, ...]  # one block per association term
    gamma_h0: np.ndarray  # (U,)
    tau_alpha: tuple[float, ...]  # one smoothing precision per block
    tau_h0: float

    def clone_with(self, **changes) -> "ParameterState":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# validation and initialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelContext:
    """A spec checked against a dataset, with dimensions resolved."""

    spec: JointModelSpec
    data: DataSet
    p: int
    q: int
    L: tuple[int, ...]  # per-association-term coefficient counts
    U: int
    fixed_names: tuple[str, ...]
    random_names: tuple[str, ...]
    alpha_labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.data)


_ALPHA_LABELS = {
    "value": ("alpha_value",),
    "value+slope": ("alpha_value", "alpha_slope"),
    "cumulative": ("alpha_cumulative",),
}


def state_names(context: "ModelContext") -> tuple[str, ...]:
    """Scalar parameter names, in the order flatten_state packs them.
    Random effects are kept apart; constant association terms carry no
    smoothing precision."""
    spec = context.spec
    names: list[str] = []
    names.extend(f"beta[{c}]" for c in context.fixed_names)
    names.append("sigma")
    q = context.q
    # bracket indices stay comma-free so draws files parse as plain CSV
    for i in range(q):
        for j in range(i + 1):
            names.append(f"Sigma_b[{i}][{j}]")
    names.extend(f"gamma[{c}]" for c in spec.survival_covariates)
    for t, term in enumerate(spec.association.terms):
        label = context.alpha_labels[t]
        if term.dim == 1:
            names.append(label)
        else:
            names.extend(f"{label}[{ell}]" for ell in range(term.dim))
    names.extend(f"gamma_h0[{u}]" for u in range(context.U))
    for t, term in enumerate(spec.association.terms):
        if term.spline is not None:
            names.append(f"tau_{context.alpha_labels[t]}")
    names.append("tau_h0")
    return tuple(names)


def flatten_state(context: "ModelContext", state: ParameterState) -> np.ndarray:
    q = state.Sigma_b.shape[0]
    parts = [state.beta, [state.sigma], state.Sigma_b[np.tril_indices(q)], state.gamma]
    parts.extend(state.alphas)
    parts.append(state.gamma_h0)
    for t, term in enumerate(context.spec.association.terms):
        if term.spline is not None:
            parts.append([state.tau_alpha[t]])
    parts.append([state.tau_h0])
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def unflatten_state(
    context: "ModelContext", vec: np.ndarray, b: np.ndarray | None = None
) -> ParameterState:
    vec = np.asarray(vec, dtype=float)
    q = context.q
    pos = 0

    def take(k):
        nonlocal pos
        out = vec[pos:pos + k]
        pos += k
        return out

    beta = take(context.p).copy()
    sigma = float(take(1)[0])
    tril = take(q * (q + 1) // 2)
    Sigma = np.zeros((q, q))
    Sigma[np.tril_indices(q)] = tril
    Sigma = Sigma + np.tril(Sigma, -1).T
    gamma = take(len(context.spec.survival_covariates)).copy()
    alphas = tuple(take(L).copy() for L in context.L)
    gamma_h0 = take(context.U).copy()
    tau_alpha = []
    for term in context.spec.association.terms:
        tau_alpha.append(float(take(1)[0]) if term.spline is not None else 1.0)
    tau_h0 = float(take(1)[0])
    if pos != vec.shape[0]:
        raise ValueError(f"flat state has {vec.shape[0]} entries, expected {pos}")
    if b is None:
        b = np.zeros((context.n, q))
    return ParameterState(
        beta=beta, b=b, sigma=sigma, Sigma_b=Sigma, gamma=gamma,
        alphas=alphas, gamma_h0=gamma_h0, tau_alpha=tuple(tau_alpha), tau_h0=tau_h0,
    )


def validate(spec: JointModelSpec, data: DataSet) -> ModelContext:
    """Check spec-vs-data invariants; raises ValidationError with specifics."""
    if len(data) == 0:
        raise ValidationError("dataset has no subjects")
    max_T = max(s.surv_time for s in data)
    lo, hi = spec.baseline.boundary
    if lo > 0 or hi < max_T - 1e-12:
        raise ValidationError(
            f"baseline hazard basis domain [{lo:g}, {hi:g}] does not cover "
            f"(0, {max_T:g}]"
        )
    for i, term in enumerate(spec.association.terms):
        if term.spline is not None:
            tlo, thi = term.spline.boundary
            if tlo > 0 or thi < max_T - 1e-12:
                raise ValidationError(
                    f"association term {i} basis domain [{tlo:g}, {thi:g}] "
                    f"does not cover (0, {max_T:g}]"
                )
    for s in data:
        if s.n_obs == 0:
            raise ValidationError(
                f"subject {s.subject_id!r} has no longitudinal records"
            )
        for name in spec.fixed.covariates:
            if name not in s.covariates:
                raise ValidationError(
                    f"subject {s.subject_id!r}: longitudinal covariate {name!r} "
                    "missing from data"
                )
        for name in spec.survival_covariates:
            if name not in s.surv_covariates:
                raise ValidationError(
                    f"subject {s.subject_id!r}: survival covariate {name!r} "
                    "missing from data"
                )
        # smoke-test that design rows are constructible
        spec.fixed.matrix(s.times, s.covariates)
        spec.random.matrix(s.times, s.covariates)
    return ModelContext(
        spec=spec,
        data=data,
        p=spec.fixed.dim,
        q=spec.random.dim,
        L=tuple(term.dim for term in spec.association.terms),
        U=spec.baseline.dim,
        fixed_names=spec.fixed.column_names(),
        random_names=spec.random.column_names(),
        alpha_labels=_ALPHA_LABELS[spec.association.form],
    )


def serving_context(spec: JointModelSpec) -> ModelContext:
    """Context for scoring new subjects when the training data is not at
    hand; every dimension derives from the spec alone."""
    return ModelContext(
        spec=spec,
        data=DataSet(subjects=()),
        p=spec.fixed.dim,
        q=spec.random.dim,
        L=tuple(term.dim for term in spec.association.terms),
        U=spec.baseline.dim,
        fixed_names=spec.fixed.column_names(),
        random_names=spec.random.column_names(),
        alpha_labels=_ALPHA_LABELS[spec.association.form],
    )


def initialize_state(context: ModelContext, seed: int = 0) -> ParameterState:
    """Deterministic starting point: least-squares longitudinal fit, crude
    constant hazard, zero association."""
    spec, data = context.spec, context.data
    rows = [spec.fixed.matrix(s.times, s.covariates) for s in data]
    X = np.concatenate(rows, axis=0)
    y = np.concatenate([s.values for s in data])
    beta = np.zeros(context.p)
    sigma = 1.0
    if y.size:
        try:
            sol, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
            if rank < context.p:
                warnings.warn(
                    "singular longitudinal design at initialization; "
                    "falling back to zero coefficients"
                )
            else:
                beta = sol
                resid = y - X @ beta
                dof = max(y.size - context.p, 1)
                sigma = max(float(np.sqrt(resid @ resid / dof)), 1e-6)
        except np.linalg.LinAlgError:
            warnings.warn(
                "longitudinal least-squares failed at initialization; "
                "falling back to zero coefficients"
            )
    events = sum(s.event for s in data)
    exposure = sum(s.surv_time for s in data)
    crude = max(events, 0.5) / max(exposure, 1e-12)
    state = ParameterState(
        beta=beta,
        b=np.zeros((context.n, context.q)),
        sigma=sigma,
        Sigma_b=np.eye(context.q),
        gamma=np.zeros(len(spec.survival_covariates)),
        alphas=tuple(np.zeros(L) for L in context.L),
        gamma_h0=np.full(context.U, math.log(crude)),
        tau_alpha=tuple(1.0 for _ in context.L),
        tau_h0=1.0,
    )
    return state
