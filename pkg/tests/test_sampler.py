"""Sampler tests: determinism, conjugate draws, diagnostics, DIC, and
persistence. Distributional checks use fixed seeds chosen once; they are
exact reruns, not flaky retries."""

import math

import numpy as np
import pytest
from scipy import stats

from vcjm.model import (
    AssociationSpec,
    DataSet,
    JointModelSpec,
    LinearDesign,
    Subject,
    TimeBasis,
    initialize_state,
    state_names,
    validate,
)
from vcjm.sampler import (
    DicResult,
    PosteriorDraws,
    StartupError,
    check_settings,
    dic,
    load_draws,
    mc_standard_error,
    rhat,
    rhat_arrays,
    run,
    run_chain,
    save_draws,
    summarize_draws,
)
from vcjm.splines import SplineSpec, penalty_for


def toy_data(n=40, seed=7):
    rng = np.random.default_rng(seed)
    subs = []
    for i in range(n):
        T = float(rng.uniform(2, 10))
        delta = int(rng.uniform() < 0.6)
        times = np.sort(rng.uniform(0, min(T, 8.0), 6))
        b0, b1 = rng.normal(0, [0.8, 0.15])
        y = 2.0 + 0.3 * times + b0 + b1 * times + rng.normal(0, 0.5, 6)
        subs.append(
            Subject(
                subject_id=f"s{i}",
                times=times,
                values=y,
                covariates={"sex": np.full(6, float(i % 2))},
                surv_time=T,
                event=delta,
                surv_covariates={"sex": float(i % 2)},
            )
        )
    return DataSet(subjects=tuple(subs))


def toy_spec():
    return JointModelSpec(
        fixed=LinearDesign(intercept=True, covariates=("sex",), time=TimeBasis(kind="linear")),
        random=LinearDesign(intercept=True, covariates=(), time=TimeBasis(kind="linear")),
        survival_covariates=("sex",),
        baseline=SplineSpec(
            degree=2, interior_knots=(2.5, 5.0, 7.5), boundary=(0.0, 10.5), penalty_order=2
        ),
        association=AssociationSpec.time_varying(
            "value",
            SplineSpec(
                degree=2, interior_knots=(3.5, 7.0), boundary=(0.0, 10.5), penalty_order=2
            ),
        ),
    )


@pytest.fixture(scope="module")
def ctx():
    return validate(toy_spec(), toy_data())


@pytest.fixture(scope="module")
def fitted(ctx):
    return run(ctx, chains=2, n_iter=4000, burn_in=2000, thin=2, seed=11)


class TestSettings:
    def test_retained_count(self):
        assert check_settings(20000, 5000, 2) == 7500
        assert check_settings(300, 100, 2) == 100
        assert check_settings(101, 100, 1) == 1

    def test_paper_scale_settings_accepted(self):
        assert check_settings(150000, 50000, 2) == 50000

    def test_bad_settings_rejected(self):
        with pytest.raises(ValueError):
            check_settings(100, 100, 2)
        with pytest.raises(ValueError):
            check_settings(100, -1, 2)
        with pytest.raises(ValueError):
            check_settings(100, 50, 0)

    def test_unknown_freeze_target(self, ctx):
        with pytest.raises(ValueError, match="freeze"):
            run_chain(ctx, 20, 10, 1, seed=0, freeze=("betta",))

    def test_nonfinite_start_is_startup_error(self, ctx):
        bad = initialize_state(ctx).clone_with(sigma=-1.0)
        with pytest.raises(StartupError):
            run_chain(ctx, 20, 10, 1, seed=0, init=bad)


class TestDeterminism:
    def test_same_seed_bit_identical(self, ctx):
        r1 = run_chain(ctx, 120, 60, 2, seed=5)
        r2 = run_chain(ctx, 120, 60, 2, seed=5)
        assert np.array_equal(r1.theta, r2.theta)
        assert np.array_equal(r1.deviance, r2.deviance)
        assert np.array_equal(r1.b_draws, r2.b_draws)

    def test_different_seeds_differ(self, ctx):
        r1 = run_chain(ctx, 120, 60, 2, seed=5)
        r3 = run_chain(ctx, 120, 60, 2, seed=6)
        assert not np.array_equal(r1.theta, r3.theta)

    def test_run_reproducible(self, ctx):
        d1 = run(ctx, chains=2, n_iter=80, burn_in=40, thin=2, seed=3)
        d2 = run(ctx, chains=2, n_iter=80, burn_in=40, thin=2, seed=3)
        for a, b in zip(d1.chains, d2.chains):
            assert np.array_equal(a, b)

    def test_default_three_chains_equal_lengths(self, ctx):
        d = run(ctx, n_iter=40, burn_in=20, thin=2, seed=1)
        assert d.n_chains == 3
        shapes = {c.shape for c in d.chains}
        assert shapes == {(10, len(state_names(ctx)))}
        assert len(set(d.chain_seeds)) == 3


class _RecordingRng:
    """Stand-in generator that records gamma() calls."""

    def __init__(self):
        self.calls = []

    def gamma(self, shape, scale):
        self.calls.append((float(shape), float(scale)))
        return 1.0


class TestConjugates:
    def test_tau_full_conditional_shape_and_rate(self):
        # 11-dim smooth block with quadratic form alpha'M alpha == 2 gives
        # the Gamma(6.5, 1.005) full conditional (shape, rate).
        sp = SplineSpec(
            degree=2,
            interior_knots=tuple(np.linspace(1.0, 9.0, 8)),
            boundary=(0.0, 10.5),
            penalty_order=2,
        )
        assert sp.dim == 11
        spec = JointModelSpec(
            fixed=LinearDesign(intercept=True, covariates=(), time=TimeBasis(kind="linear")),
            random=LinearDesign(intercept=True, covariates=(), time=TimeBasis(kind="linear")),
            survival_covariates=(),
            baseline=SplineSpec(
                degree=2, interior_knots=(5.0,), boundary=(0.0, 10.5), penalty_order=2
            ),
            association=AssociationSpec.time_varying("value", sp),
        )
        c = validate(spec, toy_data(n=10))
        pen = penalty_for(sp)
        raw = np.sin(np.arange(11) + 1.0)
        alpha = raw * math.sqrt(2.0 / pen.quad_form(raw))
        assert pen.quad_form(alpha) == pytest.approx(2.0, abs=1e-12)

        from vcjm.sampler import _ChainRunner

        runner = _ChainRunner(c, seed=0)
        runner.state = runner.state.clone_with(alphas=(alpha,))
        rec = _RecordingRng()
        runner.rng = rec
        runner.update_taus()
        shape, scale = rec.calls[0]
        assert shape == 6.5
        assert 1.0 / scale == pytest.approx(1.005, abs=1e-12)

    def test_tau_draws_match_gamma_distribution(self, ctx):
        # All blocks frozen except tau: retained tau draws are iid from the
        # exact full conditional; KS against it must not reject.
        init = initialize_state(ctx)
        term = ctx.spec.association.terms[0]
        pen = penalty_for(term.spline)
        alpha = np.linspace(-0.5, 1.5, term.dim)
        init = init.clone_with(alphas=(alpha,))
        r = run_chain(
            ctx,
            10001,
            1,
            1,
            seed=2024,
            freeze=("beta", "gamma", "alpha", "gamma_h0", "b", "sigma", "Sigma_b"),
            store_b=False,
            init=init,
        )
        names = state_names(ctx)
        col = names.index("tau_alpha_value")
        draws = r.theta[:, col]
        assert draws.shape[0] == 10000
        hyper = ctx.spec.hyper
        shape = hyper.c1 + 0.5 * term.dim
        rate = hyper.c2 + 0.5 * pen.quad_form(alpha)
        ks = stats.kstest(draws, stats.gamma(a=shape, scale=1.0 / rate).cdf)
        assert ks.pvalue > 0.01

    def test_pure_longitudinal_matches_gls(self):
        # Association and baseline frozen at (numerically) zero hazard: the
        # marginal posterior mean of beta must agree with the GLS estimator
        # under the known variance components, within 3 MC standard errors.
        # Few subjects with many visits keep the beta/b random walk mixing
        # fast enough for honest batch-means errors.
        rng = np.random.default_rng(42)
        subs = []
        for i in range(12):
            T = float(rng.uniform(4, 10))
            delta = int(rng.uniform() < 0.6)
            times = np.sort(rng.uniform(0, min(T, 8.0), 9))
            b0, b1 = rng.normal(0, [0.5, 0.1])
            y = 2.0 + 0.3 * times + b0 + b1 * times + rng.normal(0, 0.5, 9)
            subs.append(
                Subject(
                    subject_id=f"s{i}",
                    times=times,
                    values=y,
                    covariates={"sex": np.full(9, float(i % 2))},
                    surv_time=T,
                    event=delta,
                    surv_covariates={"sex": float(i % 2)},
                )
            )
        data = DataSet(subjects=tuple(subs))
        spec = toy_spec()
        c = validate(spec, data)
        sigma = 0.5
        Sigma_b = np.diag([0.5**2, 0.1**2])
        init = initialize_state(c).clone_with(
            sigma=sigma,
            Sigma_b=Sigma_b,
            gamma_h0=np.full(c.U, -30.0),
            alphas=(np.zeros(c.L[0]),),
        )
        r = run_chain(
            c,
            20000,
            4000,
            1,
            seed=9,
            freeze=("gamma", "alpha", "gamma_h0", "sigma", "Sigma_b", "tau"),
            store_b=False,
            init=init,
        )
        names = state_names(c)
        cols = [i for i, nm in enumerate(names) if nm.startswith("beta[")]
        beta_draws = r.theta[:, cols]
        post_mean = beta_draws.mean(axis=0)
        se = mc_standard_error([beta_draws])

        xtvx = np.zeros((c.p, c.p))
        xtvy = np.zeros(c.p)
        for sid in data.subject_ids:
            s = data.subject(sid)
            X = spec.fixed.matrix(s.times, s.covariates)
            Z = spec.random.matrix(s.times, s.covariates)
            V = Z @ Sigma_b @ Z.T + sigma**2 * np.eye(len(s.times))
            Vi = np.linalg.inv(V)
            xtvx += X.T @ Vi @ X
            xtvy += X.T @ Vi @ s.values
        gls = np.linalg.solve(xtvx, xtvy)
        assert np.all(np.abs(post_mean - gls) < 3 * se)


class TestAcceptance:
    def test_post_burn_in_rates_in_band(self, fitted):
        for chain_rates in fitted.acceptance:
            for name, rate in chain_rates.items():
                assert 0.1 <= rate <= 0.5, (name, rate)


class TestRhat:
    def test_identical_constant_chains_give_one(self):
        c = np.full((50, 3), 2.5)
        out = rhat_arrays([c, c.copy()])
        assert np.all(out == 1.0)

    def test_stationary_chains_near_one(self):
        # split-form rhat may dip a hair under 1 for finite stationary chains
        rng = np.random.default_rng(0)
        chains = [rng.standard_normal((4000, 2)) for _ in range(4)]
        out = rhat_arrays(chains)
        assert np.all(out > 0.99)
        assert np.all(out < 1.05)

    def test_separated_chains_flagged(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((500, 1))
        b = rng.standard_normal((500, 1)) + 10.0
        out = rhat_arrays([a, b])
        assert out[0] > 1.1

    def test_fitted_rhat_finite(self, fitted):
        out = rhat(fitted)
        assert np.all(np.isfinite(out))
        assert np.all(out > 0.98)


class TestMcse:
    def test_iid_chain_se_scale(self):
        rng = np.random.default_rng(3)
        c = rng.standard_normal((10000, 1))
        se = mc_standard_error([c])
        assert 0.005 < se[0] < 0.02

    def test_pooling_reduces_se(self):
        rng = np.random.default_rng(4)
        one = [rng.standard_normal((4096, 1))]
        two = one + [rng.standard_normal((4096, 1))]
        assert mc_standard_error(two)[0] < mc_standard_error(one)[0]


class TestSummaries:
    def test_rows_align_with_names(self, ctx, fitted):
        rows = summarize_draws(fitted)
        assert [r.name for r in rows] == list(state_names(ctx))
        for r in rows:
            assert r.q025 <= r.mean <= r.q975
            assert r.sd > 0
            assert r.se_mc > 0
            assert r.se_mc < r.sd  # MC error of the mean, not the spread
            assert math.isfinite(r.rhat)

    def test_sigma_positive_in_draws(self, ctx, fitted):
        col = state_names(ctx).index("sigma")
        assert np.all(fitted.stacked()[:, col] > 0)


class TestDic:
    def test_fitted_dic(self, ctx, fitted):
        d = dic(fitted, ctx)
        assert isinstance(d, DicResult)
        assert math.isfinite(d.dic)
        assert d.pD > 0
        assert d.dic == pytest.approx(d.pD + d.mean_deviance)

    def test_degenerate_draws_have_zero_pd(self, ctx, fitted):
        row = fitted.chains[0][:1]
        dev = fitted.deviance[0][:1]
        b = fitted.b_chains[0][:1]
        reps = PosteriorDraws(
            names=fitted.names,
            chains=[np.repeat(row, 5, axis=0)],
            deviance=[np.repeat(dev, 5)],
            b_chains=[np.repeat(b, 5, axis=0)],
            b_means=[b[0]],
            n_iter=5,
            burn_in=0,
            thin=1,
            seed=0,
            chain_seeds=(0,),
            fingerprint=fitted.fingerprint,
            acceptance=[{}],
            subject_ids=fitted.subject_ids,
        )
        d = dic(reps, ctx)
        assert d.pD == pytest.approx(0.0, abs=1e-8)
        assert d.dic == pytest.approx(d.mean_deviance, abs=1e-8)

    def test_dic_requires_random_effects(self, ctx, fitted):
        stripped = PosteriorDraws(
            names=fitted.names,
            chains=fitted.chains,
            deviance=fitted.deviance,
            b_chains=None,
            b_means=None,
            n_iter=fitted.n_iter,
            burn_in=fitted.burn_in,
            thin=fitted.thin,
            seed=fitted.seed,
            chain_seeds=fitted.chain_seeds,
            fingerprint=fitted.fingerprint,
            acceptance=fitted.acceptance,
            subject_ids=fitted.subject_ids,
        )
        with pytest.raises(ValueError, match="random-effects"):
            dic(stripped, ctx)


class TestPersistence:
    def test_round_trip_bit_exact(self, ctx, fitted, tmp_path):
        save_draws(fitted, tmp_path, ctx)
        back = load_draws(tmp_path)
        assert back.names == fitted.names
        assert back.subject_ids == fitted.subject_ids
        assert back.chain_seeds == fitted.chain_seeds
        for a, b in zip(fitted.chains, back.chains):
            assert np.array_equal(a, b)
        for a, b in zip(fitted.deviance, back.deviance):
            assert np.array_equal(a, b)
        for a, b in zip(fitted.b_chains, back.b_chains):
            assert np.array_equal(a, b)
        for a, b in zip(fitted.b_means, back.b_means):
            assert np.array_equal(a, b)

    def test_draws_files_have_named_header(self, ctx, fitted, tmp_path):
        save_draws(fitted, tmp_path, ctx)
        first = (tmp_path / "draws_chain1.csv").read_text().splitlines()
        assert first[0].split(",") == list(fitted.names)
        assert len(first) == 1 + fitted.chains[0].shape[0]

    def test_round_trip_without_b_draws(self, ctx, tmp_path):
        d = run(ctx, chains=2, n_iter=60, burn_in=30, thin=2, seed=8, store_b=False)
        save_draws(d, tmp_path, ctx)
        back = load_draws(tmp_path)
        assert back.b_chains is None
        assert back.b_means is not None
        # DIC still available through the stored random-effects means
        assert math.isfinite(dic(back, ctx).dic)
