"""Prediction tests: random-effect conditioning against closed forms, pi
monotonicity and exponential-survival oracles, and coefficient-curve
extraction."""

import math

import numpy as np
import pytest

from vcjm.model import (
    AssociationSpec,
    DataSet,
    JointModelSpec,
    LinearDesign,
    Subject,
    TimeBasis,
    ValidationError,
    flatten_state,
    initialize_state,
    state_names,
    validate,
)
from vcjm.prediction import (
    LambdaCurve,
    PredictionRequest,
    conditional_survival,
    lambda_curve,
    sample_subject_effects,
    subsample_indices,
)
from vcjm.sampler import PosteriorDraws
from vcjm.splines import SplineDomainError, SplineSpec, bspline_matrix


def small_data(n=8, seed=3):
    rng = np.random.default_rng(seed)
    subs = []
    for i in range(n):
        T = float(rng.uniform(4, 10))
        times = np.sort(rng.uniform(0, min(T, 8.0), 5))
        y = 1.0 + 0.2 * times + rng.normal(0, 0.4, 5)
        subs.append(
            Subject(
                subject_id=f"p{i}",
                times=times,
                values=y,
                covariates={"sex": np.full(5, float(i % 2))},
                surv_time=T,
                event=int(i % 3 == 0),
                surv_covariates={"sex": float(i % 2)},
            )
        )
    return DataSet(subjects=tuple(subs))


def make_context(constant=False, with_gamma=False):
    if constant:
        assoc = AssociationSpec.constant("value")
    else:
        assoc = AssociationSpec.time_varying(
            "value",
            SplineSpec(
                degree=2, interior_knots=(5.0, 9.0), boundary=(0.0, 12.0), penalty_order=2
            ),
        )
    spec = JointModelSpec(
        fixed=LinearDesign(intercept=True, covariates=("sex",), time=TimeBasis(kind="linear")),
        random=LinearDesign(intercept=True, covariates=(), time=TimeBasis(kind="linear")),
        survival_covariates=("sex",) if with_gamma else (),
        baseline=SplineSpec(
            degree=2, interior_knots=(4.0, 8.0), boundary=(0.0, 12.0), penalty_order=2
        ),
        association=assoc,
    )
    return validate(spec, small_data())


def base_state(ctx, *, h0=0.05, alpha_scale=0.0, sigma=0.4):
    st = initialize_state(ctx)
    alphas = tuple(np.full(L, alpha_scale) for L in ctx.L)
    return st.clone_with(
        beta=np.array([1.0, 0.3, 0.2]),
        sigma=sigma,
        Sigma_b=np.diag([0.6**2, 0.12**2]),
        gamma=np.full(len(ctx.spec.survival_covariates), 0.25),
        alphas=alphas,
        gamma_h0=np.full(ctx.U, math.log(h0)),
    )


def make_draws(ctx, states):
    theta = np.stack([flatten_state(ctx, s) for s in states])
    return PosteriorDraws(
        names=state_names(ctx),
        chains=[theta],
        deviance=[np.zeros(len(states))],
        b_chains=None,
        b_means=None,
        n_iter=len(states),
        burn_in=0,
        thin=1,
        seed=0,
        chain_seeds=(0,),
        fingerprint="test",
        acceptance=[{}],
        subject_ids=ctx.data.subject_ids,
    )


class TestRequest:
    def test_history_beyond_base_time(self):
        with pytest.raises(ValidationError, match="exceeds base time"):
            PredictionRequest(
                times=[1.0, 5.0], values=[1.0, 2.0], covariates={"sex": 1.0},
                t=4.0, dt_grid=[1.0],
            )

    def test_negative_horizon(self):
        with pytest.raises(ValidationError, match=">= 0"):
            PredictionRequest(
                times=[1.0], values=[1.0], covariates={}, t=4.0, dt_grid=[-1.0]
            )

    def test_length_mismatch(self):
        with pytest.raises(ValidationError, match="length"):
            PredictionRequest(times=[1.0, 2.0], values=[1.0], covariates={}, t=4.0, dt_grid=[1.0])

    def test_empty_grid(self):
        with pytest.raises(ValidationError, match="empty"):
            PredictionRequest(times=[], values=[], covariates={}, t=4.0, dt_grid=[])


class TestSubsample:
    def test_all_when_small(self):
        assert np.array_equal(subsample_indices(10, 500), np.arange(10))

    def test_even_spread(self):
        idx = subsample_indices(1000, 100)
        assert idx.shape[0] == 100
        assert idx[0] == 0 and idx[-1] == 999
        assert np.all(np.diff(idx) > 0)


class TestSampleEffects:
    def test_zero_noise_concentrates_on_interpolant(self):
        # three exact on-line measurements pin both random effects
        ctx = make_context()
        b_true = np.array([0.5, -0.08])
        st = base_state(ctx, sigma=1e-7)
        times = np.array([0.5, 2.0, 3.5])
        sex = 1.0
        eta = st.beta[0] + st.beta[1] * sex + st.beta[2] * times
        values = eta + b_true[0] + b_true[1] * times
        req = PredictionRequest(
            times=times, values=values, covariates={"sex": sex}, t=4.0,
            dt_grid=[1.0], subsample=100,
        )
        b = sample_subject_effects(ctx, make_draws(ctx, [st] * 100), req, seed=1)
        assert np.max(np.abs(b - b_true)) < 1e-4
        assert np.all(b.std(axis=0) < 1e-5)

    def test_empty_history_prior_centered(self):
        ctx = make_context()
        st = base_state(ctx)
        req = PredictionRequest(
            times=[], values=[], covariates={"sex": 0.0}, t=0.0,
            dt_grid=[1.0], subsample=400,
        )
        b = sample_subject_effects(ctx, make_draws(ctx, [st] * 400), req, seed=2)
        sd = np.sqrt(np.diag(st.Sigma_b))
        assert np.all(np.abs(b.mean(axis=0)) < 3 * sd / math.sqrt(400))
        # spread matches the prior scale
        assert np.all(b.std(axis=0) > 0.5 * sd)
        assert np.all(b.std(axis=0) < 1.5 * sd)

    def test_two_measurement_closed_form(self):
        # association zero: b | y is exactly normal with known moments
        ctx = make_context()
        st = base_state(ctx, alpha_scale=0.0, sigma=0.3)
        times = np.array([1.0, 3.0])
        sex = 0.0
        values = np.array([1.8, 2.6])
        req = PredictionRequest(
            times=times, values=values, covariates={"sex": sex}, t=3.5,
            dt_grid=[1.0], subsample=400,
        )
        G = 400
        b = sample_subject_effects(ctx, make_draws(ctx, [st] * G), req, seed=3)

        X = np.column_stack([np.ones(2), np.full(2, sex), times])
        Z = np.column_stack([np.ones(2), times])
        C = np.linalg.inv(Z.T @ Z / st.sigma**2 + np.linalg.inv(st.Sigma_b))
        m = C @ Z.T @ (values - X @ st.beta) / st.sigma**2
        se = np.sqrt(np.diag(C)) / math.sqrt(G)
        assert np.all(np.abs(b.mean(axis=0) - m) < 3 * se)

    def test_deterministic_given_seed(self):
        ctx = make_context()
        st = base_state(ctx)
        req = PredictionRequest(
            times=[1.0, 2.0], values=[1.5, 1.9], covariates={"sex": 1.0}, t=3.0,
            dt_grid=[1.0], subsample=50,
        )
        d = make_draws(ctx, [st] * 50)
        b1 = sample_subject_effects(ctx, d, req, seed=7)
        b2 = sample_subject_effects(ctx, d, req, seed=7)
        b3 = sample_subject_effects(ctx, d, req, seed=8)
        assert np.array_equal(b1, b2)
        assert not np.array_equal(b1, b3)


class TestConditionalSurvival:
    def test_zero_horizon_is_one(self):
        ctx = make_context()
        st = base_state(ctx, alpha_scale=0.1)
        req = PredictionRequest(
            times=[1.0], values=[1.4], covariates={"sex": 0.0}, t=3.0,
            dt_grid=[0.0, 2.0], subsample=40,
        )
        res = conditional_survival(ctx, make_draws(ctx, [st] * 40), req, keep_samples=True)
        assert res.mean[0] == 1.0
        assert np.all(res.samples[:, 0] == 1.0)

    def test_constant_hazard_closed_form(self):
        # association identically zero and flat log baseline: exponential
        # survival with rate h, independent of the random effects
        ctx = make_context(constant=True)
        h = 0.11
        st = base_state(ctx, h0=h, alpha_scale=0.0)
        dt = np.array([0.5, 1.0, 2.0, 4.0])
        req = PredictionRequest(
            times=[1.0, 2.0], values=[1.2, 1.7], covariates={"sex": 0.0}, t=3.0,
            dt_grid=dt, subsample=30,
        )
        res = conditional_survival(ctx, make_draws(ctx, [st] * 30), req)
        expect = np.exp(-h * dt)
        assert np.max(np.abs(res.mean - expect)) < 1e-6
        assert np.max(np.abs(res.lo - expect)) < 1e-6
        assert np.max(np.abs(res.hi - expect)) < 1e-6

    def test_monotone_and_bounded_per_draw(self):
        ctx = make_context(with_gamma=True)
        states = [
            base_state(ctx, h0=0.04 + 0.02 * k, alpha_scale=0.05 * k) for k in range(6)
        ]
        req = PredictionRequest(
            times=[0.5, 2.5], values=[1.1, 2.0], covariates={"sex": 1.0}, t=3.0,
            dt_grid=[0.0, 0.5, 1.0, 2.0, 3.0, 5.0], subsample=60,
        )
        res = conditional_survival(
            ctx, make_draws(ctx, states * 10), req, keep_samples=True
        )
        assert np.all(res.samples >= 0.0)
        assert np.all(res.samples <= 1.0)
        assert np.all(np.diff(res.samples, axis=1) <= 1e-15)
        assert np.all(res.lo <= res.mean + 1e-12)
        assert np.all(res.mean <= res.hi + 1e-12)

    def test_horizon_beyond_domain_names_extension(self):
        ctx = make_context()
        st = base_state(ctx)
        req = PredictionRequest(
            times=[1.0], values=[1.2], covariates={"sex": 0.0}, t=8.0,
            dt_grid=[10.0], subsample=10,
        )
        with pytest.raises(SplineDomainError, match="extended"):
            conditional_survival(ctx, make_draws(ctx, [st] * 10), req)

    def test_on_curve_measurement_at_t_changes_nothing(self):
        # sigma -> 0 limit: a new measurement exactly on the subject's own
        # trajectory at time t carries no information
        ctx = make_context()
        b_true = np.array([0.4, -0.05])
        st = base_state(ctx, sigma=1e-6, alpha_scale=0.2, h0=0.05)
        sex = 1.0
        t = 4.0

        def on_line(ts):
            ts = np.asarray(ts, dtype=float)
            return (
                st.beta[0] + st.beta[1] * sex + st.beta[2] * ts
                + b_true[0] + b_true[1] * ts
            )

        times = np.array([0.5, 2.0])
        req1 = PredictionRequest(
            times=times, values=on_line(times), covariates={"sex": sex}, t=t,
            dt_grid=[1.0, 2.0, 3.0], subsample=50,
        )
        times2 = np.array([0.5, 2.0, t])
        req2 = PredictionRequest(
            times=times2, values=on_line(times2), covariates={"sex": sex}, t=t,
            dt_grid=[1.0, 2.0, 3.0], subsample=50,
        )
        d = make_draws(ctx, [st] * 50)
        r1 = conditional_survival(ctx, d, req1, seed=4)
        r2 = conditional_survival(ctx, d, req2, seed=4)
        assert np.max(np.abs(r1.mean - r2.mean)) < 1e-3

    def test_every_history_record_enters(self):
        ctx = make_context()
        st = base_state(ctx, sigma=0.3, alpha_scale=0.3, h0=0.05)
        base = dict(covariates={"sex": 1.0}, t=4.0, dt_grid=[2.0], subsample=60)
        req1 = PredictionRequest(times=[0.5, 2.0, 3.5], values=[1.2, 1.8, 2.1], **base)
        req2 = PredictionRequest(times=[0.5, 2.0, 3.5], values=[1.2, 1.8, 3.1], **base)
        d = make_draws(ctx, [st] * 60)
        r1 = conditional_survival(ctx, d, req1, seed=5)
        r2 = conditional_survival(ctx, d, req2, seed=5)
        assert np.max(np.abs(r1.mean - r2.mean)) > 1e-4

    def test_missing_survival_covariate_named(self):
        ctx = make_context(with_gamma=True)
        st = base_state(ctx)
        req = PredictionRequest(
            times=[1.0], values=[1.0], covariates={}, t=2.0, dt_grid=[1.0], subsample=5
        )
        with pytest.raises(ValidationError, match="sex"):
            conditional_survival(ctx, make_draws(ctx, [st] * 5), req)


class TestLambdaCurve:
    def test_constant_term_is_flat(self):
        ctx = make_context(constant=True)
        states = [base_state(ctx).clone_with(alphas=(np.array([v]),)) for v in (0.1, 0.4)]
        curve = lambda_curve(ctx, make_draws(ctx, states), ts=[0.0, 3.0, 6.0])
        assert isinstance(curve, LambdaCurve)
        assert np.allclose(curve.mean, 0.25)
        assert np.allclose(curve.lo, curve.lo[0])
        assert np.allclose(curve.hi, curve.hi[0])

    def test_identical_draws_zero_band(self):
        ctx = make_context()
        st = base_state(ctx).clone_with(alphas=(np.linspace(0.1, 0.9, ctx.L[0]),))
        curve = lambda_curve(ctx, make_draws(ctx, [st] * 8), ts=np.linspace(0, 11, 23))
        assert np.array_equal(curve.lo, curve.hi)
        assert np.allclose(curve.lo, curve.mean, rtol=0, atol=1e-14)

    def test_matches_basis_product(self):
        ctx = make_context()
        sp = ctx.spec.association.terms[0].spline
        alphas = [np.sin(np.arange(ctx.L[0]) + k) for k in range(5)]
        states = [base_state(ctx).clone_with(alphas=(a,)) for a in alphas]
        ts = np.linspace(0.0, 12.0, 40)
        curve = lambda_curve(ctx, make_draws(ctx, states), ts=ts)
        B = bspline_matrix(sp, ts)
        direct = np.stack([B @ a for a in alphas])
        assert np.max(np.abs(curve.mean - direct.mean(axis=0))) < 1e-10
        assert np.max(np.abs(curve.lo - np.percentile(direct, 2.5, axis=0))) < 1e-10

    def test_bad_term_index(self):
        ctx = make_context()
        st = base_state(ctx)
        with pytest.raises(ValidationError, match="term"):
            lambda_curve(ctx, make_draws(ctx, [st]), ts=[1.0], term=3)
