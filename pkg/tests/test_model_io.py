"""Model spec, data model, validation, initialization, and persistence."""

import json
import math

import numpy as np
import pytest

from vcjm.io import (
    DataFormatError,
    model_spec_from_dict,
    model_spec_to_dict,
    read_dataset,
    read_longitudinal,
    read_survival,
    spec_fingerprint,
    write_dataset,
    write_model_spec,
    read_model_spec,
)
from vcjm.model import (
    AssociationSpec,
    AssociationTerm,
    DataSet,
    Hyperparameters,
    JointModelSpec,
    LinearDesign,
    LongitudinalRecord,
    ParameterState,
    SurvivalRecord,
    TimeBasis,
    ValidationError,
    flatten_state,
    initialize_state,
    state_names,
    unflatten_state,
    validate,
)
from vcjm.splines import SplineSpec


def cardio_spec(boundary=(0.0, 20.1)) -> JointModelSpec:
    """Intercept + gender + 2 natural-cubic time terms fixed; intercept +
    2 time terms random; quadratic 8-interior-knot bases for smooth terms."""
    tb = TimeBasis(kind="ns", interior_knots=(5.02,), boundary=boundary)
    smooth = SplineSpec.equally_spaced(2, 8, boundary)
    return JointModelSpec(
        fixed=LinearDesign(intercept=True, covariates=("gender",), time=tb),
        random=LinearDesign(intercept=True, covariates=(), time=tb),
        survival_covariates=("gender",),
        baseline=smooth,
        association=AssociationSpec.time_varying("value+slope", smooth),
    )


def small_data(n=5, seed=0, boundary_hi=20.1) -> DataSet:
    rng = np.random.default_rng(seed)
    long_recs, surv_recs = [], []
    for i in range(n):
        sid = f"s{i}"
        T = float(rng.uniform(5.0, boundary_hi))
        times = np.sort(rng.uniform(0, T, size=4))
        g = float(rng.integers(0, 2))
        for t in times:
            long_recs.append(
                LongitudinalRecord(sid, float(t), float(rng.normal(3, 1)), {"gender": g})
            )
        surv_recs.append(SurvivalRecord(sid, T, int(rng.integers(0, 2)), {"gender": g}))
    return DataSet.from_records(long_recs, surv_recs)


class TestDataModel:
    def test_record_invariants(self):
        with pytest.raises(ValidationError):
            LongitudinalRecord("a", -0.5, 1.0)
        with pytest.raises(ValidationError):
            LongitudinalRecord("a", float("nan"), 1.0)
        with pytest.raises(ValidationError):
            SurvivalRecord("a", 0.0, 1)
        with pytest.raises(ValidationError):
            SurvivalRecord("a", 1.0, 2)

    def test_longitudinal_requires_survival(self):
        with pytest.raises(ValidationError, match="no survival record"):
            DataSet.from_records([LongitudinalRecord("a", 1.0, 2.0)], [])

    def test_longitudinal_time_beyond_observed_time(self):
        with pytest.raises(ValidationError, match="exceeds observed time"):
            DataSet.from_records(
                [LongitudinalRecord("a", 5.0, 2.0)], [SurvivalRecord("a", 3.0, 1)]
            )

    def test_subject_lookup_and_subset(self):
        data = small_data()
        assert data.subject("s2").subject_id == "s2"
        with pytest.raises(KeyError, match="unknown subject"):
            data.subject("nope")
        sub = data.subset(["s3", "s1"])
        assert sub.subject_ids == ("s3", "s1")


class TestSpecs:
    def test_cardio_shape_dims(self):
        spec = cardio_spec()
        assert spec.fixed.dim == 4
        assert spec.random.dim == 3
        assert spec.fixed.column_names() == ("(intercept)", "gender", "ns1(t)", "ns2(t)")

    def test_value_slope_two_blocks_of_11(self):
        spec = cardio_spec()
        assert [t.dim for t in spec.association.terms] == [11, 11]

    def test_association_term_count_enforced(self):
        with pytest.raises(ValidationError, match="term"):
            AssociationSpec(form="value", terms=(AssociationTerm(), AssociationTerm()))
        with pytest.raises(ValidationError, match="form"):
            AssociationSpec(form="quadratic", terms=(AssociationTerm(),))

    def test_random_subset_of_fixed(self):
        tb = TimeBasis("linear")
        with pytest.raises(ValidationError, match="random intercept"):
            JointModelSpec(
                fixed=LinearDesign(intercept=False, time=tb),
                random=LinearDesign(intercept=True),
                survival_covariates=(),
                baseline=SplineSpec.equally_spaced(2, 3, (0.0, 10.0)),
                association=AssociationSpec.constant("value"),
            )
        with pytest.raises(ValidationError, match="time basis must match"):
            JointModelSpec(
                fixed=LinearDesign(time=tb),
                random=LinearDesign(
                    time=TimeBasis("ns", (2.0,), (0.0, 10.0))
                ),
                survival_covariates=(),
                baseline=SplineSpec.equally_spaced(2, 3, (0.0, 10.0)),
                association=AssociationSpec.constant("value"),
            )

    def test_slope_needs_time_basis(self):
        with pytest.raises(ValidationError, match="time basis"):
            JointModelSpec(
                fixed=LinearDesign(intercept=True),
                random=LinearDesign(intercept=True),
                survival_covariates=(),
                baseline=SplineSpec.equally_spaced(2, 3, (0.0, 10.0)),
                association=AssociationSpec.constant("value+slope"),
            )

    def test_hyperparameter_defaults(self):
        h = Hyperparameters()
        assert (h.c1, h.c2, h.f1, h.f2) == (1.0, 0.005, 1.0, 0.005)
        assert h.beta_sd == 100.0
        with pytest.raises(ValidationError):
            Hyperparameters(c2=0.0)

    def test_design_matrix_layout(self):
        d = LinearDesign(intercept=True, covariates=("g",), time=TimeBasis("linear"))
        M = d.matrix([0.0, 2.0], {"g": 1.0})
        np.testing.assert_allclose(M, [[1, 1, 0], [1, 1, 2]])
        D = d.deriv_matrix([0.0, 2.0], {"g": 1.0})
        np.testing.assert_allclose(D, [[0, 0, 1], [0, 0, 1]])


class TestValidate:
    def test_missing_covariate_named(self):
        spec = cardio_spec()
        data = DataSet.from_records(
            [LongitudinalRecord("a", 1.0, 2.0, {"age": 50.0})],
            [SurvivalRecord("a", 3.0, 1, {"gender": 0.0})],
        )
        with pytest.raises(ValidationError, match="'gender'"):
            validate(spec, data)

    def test_empty_subject_rejected(self):
        spec = cardio_spec()
        data = DataSet.from_records([], [SurvivalRecord("a", 3.0, 1, {"gender": 0.0})])
        with pytest.raises(ValidationError, match="no longitudinal records"):
            validate(spec, data)

    def test_baseline_domain_must_cover_followup(self):
        spec = cardio_spec(boundary=(0.0, 8.0))
        data = small_data(boundary_hi=20.0)
        with pytest.raises(ValidationError, match="does not cover"):
            validate(spec, data)

    def test_dimensions_and_idempotence(self):
        spec = cardio_spec()
        data = small_data()
        ctx1 = validate(spec, data)
        ctx2 = validate(spec, data)
        assert (ctx1.p, ctx1.q, ctx1.U) == (4, 3, 11)
        assert ctx1.L == (11, 11)
        assert ctx1.n == 5
        assert ctx2.p == ctx1.p and ctx2.L == ctx1.L


class TestInitializeState:
    def test_all_zero_response_gives_zero_beta(self):
        spec = cardio_spec()
        data = small_data()
        zeroed = DataSet.from_records(
            [
                LongitudinalRecord(s.subject_id, float(t), 0.0, {"gender": float(s.covariates["gender"][0])})
                for s in data
                for t in s.times
            ],
            [
                SurvivalRecord(s.subject_id, s.surv_time, s.event, dict(s.surv_covariates))
                for s in data
            ],
        )
        state = initialize_state(validate(spec, zeroed), seed=1)
        np.testing.assert_allclose(state.beta, 0.0, atol=1e-10)

    def test_crude_hazard_arithmetic(self):
        # 50 events over 500 subject-years -> log(0.1) in every entry
        tb = TimeBasis("linear")
        spec = JointModelSpec(
            fixed=LinearDesign(time=tb),
            random=LinearDesign(time=None),
            survival_covariates=(),
            baseline=SplineSpec.equally_spaced(2, 3, (0.0, 6.0)),
            association=AssociationSpec.constant("value"),
        )
        long_recs, surv_recs = [], []
        for i in range(100):
            sid = f"s{i}"
            long_recs.append(LongitudinalRecord(sid, 0.5, 1.0))
            surv_recs.append(SurvivalRecord(sid, 5.0, int(i < 50)))
        ctx = validate(spec, DataSet.from_records(long_recs, surv_recs))
        with pytest.warns(UserWarning, match="singular"):
            # identical measurement times make the design rank-deficient
            state = initialize_state(ctx, seed=0)
        np.testing.assert_allclose(state.gamma_h0, math.log(0.1), atol=1e-12)

    def test_shapes_and_defaults(self):
        ctx = validate(cardio_spec(), small_data())
        state = initialize_state(ctx, seed=0)
        assert state.beta.shape == (4,)
        assert state.b.shape == (5, 3)
        assert state.sigma > 0
        np.testing.assert_allclose(state.Sigma_b, np.eye(3))
        assert [a.shape for a in state.alphas] == [(11,), (11,)]
        assert all(np.all(a == 0) for a in state.alphas)
        assert state.tau_alpha == (1.0, 1.0)
        assert state.tau_h0 == 1.0

    def test_deterministic(self):
        ctx = validate(cardio_spec(), small_data())
        s1 = initialize_state(ctx, seed=7)
        s2 = initialize_state(ctx, seed=7)
        np.testing.assert_array_equal(s1.beta, s2.beta)
        assert s1.sigma == s2.sigma

    def test_flatten_and_names_align(self):
        ctx = validate(cardio_spec(), small_data())
        state = initialize_state(ctx, seed=0)
        flat = flatten_state(ctx, state)
        names = state_names(ctx)
        assert flat.shape[0] == len(names)
        # p + sigma + tril(q) + s + L1 + L2 + U + taus
        assert len(names) == 4 + 1 + 6 + 1 + 11 + 11 + 11 + 2 + 1

    def test_unflatten_round_trip(self):
        ctx = validate(cardio_spec(), small_data())
        rng = np.random.default_rng(3)
        state = initialize_state(ctx, seed=0).clone_with(
            beta=rng.normal(size=4),
            gamma=rng.normal(size=1),
            alphas=(rng.normal(size=11), rng.normal(size=11)),
            gamma_h0=rng.normal(size=11),
            Sigma_b=np.diag([1.0, 2.0, 3.0]) + 0.1,
            tau_alpha=(2.0, 3.0),
            tau_h0=4.0,
            sigma=0.55,
        )
        back = unflatten_state(ctx, flatten_state(ctx, state), b=state.b)
        np.testing.assert_array_equal(back.beta, state.beta)
        np.testing.assert_array_equal(back.Sigma_b, state.Sigma_b)
        np.testing.assert_array_equal(back.gamma_h0, state.gamma_h0)
        assert back.tau_alpha == state.tau_alpha
        assert back.sigma == state.sigma and back.tau_h0 == state.tau_h0

    def test_constant_term_has_no_smoothing_row(self):
        tb = TimeBasis("linear")
        spec = JointModelSpec(
            fixed=LinearDesign(time=tb),
            random=LinearDesign(time=tb),
            survival_covariates=(),
            baseline=SplineSpec.equally_spaced(2, 3, (0.0, 25.0)),
            association=AssociationSpec.constant("value"),
        )
        ctx = validate(spec, small_data())
        names = state_names(ctx)
        assert "alpha_value" in names
        assert not any(n.startswith("tau_alpha") for n in names)
        assert "tau_h0" in names


class TestCsvIO:
    def test_round_trip(self, tmp_path):
        data = small_data()
        lp, sp = tmp_path / "long.csv", tmp_path / "surv.csv"
        write_dataset(data, lp, sp)
        back = read_dataset(lp, sp)
        assert back.subject_ids == data.subject_ids
        for a, b in zip(data, back):
            np.testing.assert_allclose(a.times, b.times, rtol=0, atol=0)
            np.testing.assert_allclose(a.values, b.values, rtol=0, atol=0)
            assert a.surv_time == b.surv_time and a.event == b.event

    def test_header_checked(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("subject,when,what\n")
        with pytest.raises(DataFormatError, match="header"):
            read_longitudinal(p)

    def test_line_numbers_in_errors(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,time,value\na,1.0,2.0\nb,oops,3.0\n")
        with pytest.raises(DataFormatError, match="line 3"):
            read_longitudinal(p)

    def test_status_restricted(self, tmp_path):
        p = tmp_path / "surv.csv"
        p.write_text("id,time,status\na,1.0,2\n")
        with pytest.raises(DataFormatError, match="status"):
            read_survival(p)

    def test_duplicate_survival_rejected(self, tmp_path):
        p = tmp_path / "surv.csv"
        p.write_text("id,time,status\na,1.0,1\na,2.0,0\n")
        with pytest.raises(DataFormatError, match="duplicate"):
            read_survival(p)


class TestSpecConfig:
    def test_json_round_trip(self, tmp_path):
        spec = cardio_spec()
        path = tmp_path / "model.json"
        write_model_spec(path, spec)
        back = read_model_spec(path)
        assert back == spec

    def test_dict_round_trip_constant_form(self):
        tb = TimeBasis("linear")
        spec = JointModelSpec(
            fixed=LinearDesign(covariates=("g",), time=tb),
            random=LinearDesign(time=tb),
            survival_covariates=("g",),
            baseline=SplineSpec.equally_spaced(2, 5, (0.0, 19.5)),
            association=AssociationSpec.constant("value"),
            hyper=Hyperparameters(c2=0.01),
        )
        back = model_spec_from_dict(model_spec_to_dict(spec))
        assert back == spec
        assert back.hyper.c2 == 0.01

    def test_fingerprint_stable_and_sensitive(self):
        spec = cardio_spec()
        f1 = spec_fingerprint(spec)
        f2 = spec_fingerprint(cardio_spec())
        assert f1 == f2 and len(f1) == 64
        other = cardio_spec()
        other = JointModelSpec(
            fixed=other.fixed,
            random=other.random,
            survival_covariates=other.survival_covariates,
            baseline=other.baseline,
            association=AssociationSpec.constant("value"),
        )
        assert spec_fingerprint(other) != f1

    def test_bad_config_reports_section(self):
        with pytest.raises(DataFormatError, match="missing section"):
            model_spec_from_dict({"fixed": {"intercept": True}})

    def test_invalid_json_reported(self, tmp_path):
        p = tmp_path / "model.json"
        p.write_text("{not json")
        with pytest.raises(DataFormatError, match="invalid JSON"):
            read_model_spec(p)
