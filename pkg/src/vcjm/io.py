"""CSV data files, JSON model configuration, and canonical fingerprints.

Longitudinal CSV: header ``id,time,value,<covariate...>``.
Survival CSV: header ``id,time,status,<covariate...>``, status in {0, 1}.
Model config: JSON with nested sections (schema documented in the README).
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .model import (
    AssociationSpec,
    AssociationTerm,
    DataSet,
    Hyperparameters,
    JointModelSpec,
    LinearDesign,
    LongitudinalRecord,
    SurvivalRecord,
    TimeBasis,
    ValidationError,
)
from .splines import SplineSpec


class DataFormatError(ValueError):
    """A data or config file does not match the documented schema."""


def fmt(x: float) -> str:
    """Shortest decimal string that round-trips a float exactly."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# CSV data files
# ---------------------------------------------------------------------------


def _parse_float(raw: str, path: str, line: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DataFormatError(
            f"{path}: line {line}: column {col!r}: cannot parse {raw!r} as a number"
        ) from None


def read_longitudinal(path: str | Path) -> list[LongitudinalRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:3] != ["id", "time", "value"]:
            raise DataFormatError(
                f"{path}: header must start with id,time,value "
                f"(got {','.join(header[:3])})"
            )
        cov_names = header[3:]
        records = []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {i}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                records.append(
                    LongitudinalRecord(
                        subject_id=row[0],
                        time=_parse_float(row[1], str(path), i, "time"),
                        value=_parse_float(row[2], str(path), i, "value"),
                        covariates={
                            c: _parse_float(v, str(path), i, c)
                            for c, v in zip(cov_names, row[3:])
                        },
                    )
                )
            except ValidationError as exc:
                raise DataFormatError(f"{path}: line {i}: {exc}") from None
    return records


def read_survival(path: str | Path) -> list[SurvivalRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:3] != ["id", "time", "status"]:
            raise DataFormatError(
                f"{path}: header must start with id,time,status "
                f"(got {','.join(header[:3])})"
            )
        cov_names = header[3:]
        records = []
        seen = set()
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {i}: expected {len(header)} fields, got {len(row)}"
                )
            if row[0] in seen:
                raise DataFormatError(
                    f"{path}: line {i}: duplicate survival record for subject {row[0]!r}"
                )
            seen.add(row[0])
            status_raw = row[2].strip()
            if status_raw not in ("0", "1"):
                raise DataFormatError(
                    f"{path}: line {i}: status must be 0 or 1, got {status_raw!r}"
                )
            try:
                records.append(
                    SurvivalRecord(
                        subject_id=row[0],
                        time=_parse_float(row[1], str(path), i, "time"),
                        event=int(status_raw),
                        covariates={
                            c: _parse_float(v, str(path), i, c)
                            for c, v in zip(cov_names, row[3:])
                        },
                    )
                )
            except ValidationError as exc:
                raise DataFormatError(f"{path}: line {i}: {exc}") from None
    return records


def read_dataset(longitudinal_path: str | Path, survival_path: str | Path) -> DataSet:
    return DataSet.from_records(
        read_longitudinal(longitudinal_path), read_survival(survival_path)
    )


def write_longitudinal(path: str | Path, records: Sequence[LongitudinalRecord]) -> None:
    cov_names = sorted({k for r in records for k in r.covariates})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "value", *cov_names])
        for r in records:
            writer.writerow(
                [r.subject_id, fmt(r.time), fmt(r.value)]
                + [fmt(r.covariates[c]) for c in cov_names]
            )


def write_survival(path: str | Path, records: Sequence[SurvivalRecord]) -> None:
    cov_names = sorted({k for r in records for k in r.covariates})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "status", *cov_names])
        for r in records:
            writer.writerow(
                [r.subject_id, fmt(r.time), str(r.event)]
                + [fmt(r.covariates[c]) for c in cov_names]
            )


def write_dataset(
    data: DataSet, longitudinal_path: str | Path, survival_path: str | Path
) -> None:
    long_recs = []
    surv_recs = []
    for s in data:
        cov_cols = {
            k: np.broadcast_to(np.asarray(v, dtype=float), (s.n_obs,))
            for k, v in s.covariates.items()
        }
        for j in range(s.n_obs):
            long_recs.append(
                LongitudinalRecord(
                    subject_id=s.subject_id,
                    time=float(s.times[j]),
                    value=float(s.values[j]),
                    covariates={k: float(col[j]) for k, col in cov_cols.items()},
                )
            )
        surv_recs.append(
            SurvivalRecord(
                subject_id=s.subject_id,
                time=s.surv_time,
                event=s.event,
                covariates=dict(s.surv_covariates),
            )
        )
    write_longitudinal(longitudinal_path, long_recs)
    write_survival(survival_path, surv_recs)


# ---------------------------------------------------------------------------
# model spec config (JSON)
# ---------------------------------------------------------------------------


def _time_basis_to_dict(tb: TimeBasis | None) -> dict | None:
    if tb is None:
        return None
    if tb.kind == "linear":
        return {"kind": "linear"}
    return {
        "kind": "ns",
        "interior_knots": list(tb.interior_knots),
        "boundary": list(tb.boundary),
    }


def _time_basis_from_dict(obj: Mapping | None, where: str) -> TimeBasis | None:
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == "linear":
        return TimeBasis(kind="linear")
    if kind == "ns":
        return TimeBasis(
            kind="ns",
            interior_knots=tuple(float(k) for k in obj.get("interior_knots", [])),
            boundary=tuple(float(v) for v in obj["boundary"]),
        )
    raise DataFormatError(f"{where}: time basis kind must be 'linear' or 'ns'")


def _design_to_dict(d: LinearDesign) -> dict:
    return {
        "intercept": d.intercept,
        "covariates": list(d.covariates),
        "time": _time_basis_to_dict(d.time),
    }


def _design_from_dict(obj: Mapping, where: str) -> LinearDesign:
    return LinearDesign(
        intercept=bool(obj.get("intercept", True)),
        covariates=tuple(obj.get("covariates", [])),
        time=_time_basis_from_dict(obj.get("time"), where),
    )


def _spline_to_dict(s: SplineSpec) -> dict:
    return {
        "degree": s.degree,
        "interior_knots": list(s.interior_knots),
        "boundary": list(s.boundary),
        "penalty_order": s.penalty_order,
    }


def _spline_from_dict(obj: Mapping, where: str) -> SplineSpec:
    try:
        return SplineSpec(
            degree=int(obj["degree"]),
            interior_knots=tuple(float(k) for k in obj.get("interior_knots", [])),
            boundary=tuple(float(v) for v in obj["boundary"]),
            penalty_order=obj.get("penalty_order", 2),
        )
    except KeyError as exc:
        raise DataFormatError(f"{where}: missing spline field {exc}") from None


def model_spec_to_dict(spec: JointModelSpec) -> dict:
    terms = []
    for term in spec.association.terms:
        if term.constant:
            terms.append({"type": "constant"})
        else:
            terms.append({"type": "time-varying", **_spline_to_dict(term.spline)})
    hyper = spec.hyper
    return {
        "fixed": _design_to_dict(spec.fixed),
        "random": _design_to_dict(spec.random),
        "survival_covariates": list(spec.survival_covariates),
        "baseline": _spline_to_dict(spec.baseline),
        "association": {"form": spec.association.form, "terms": terms},
        "hyperparameters": {
            "c1": hyper.c1,
            "c2": hyper.c2,
            "f1": hyper.f1,
            "f2": hyper.f2,
            "beta_sd": hyper.beta_sd,
            "gamma_sd": hyper.gamma_sd,
            "wishart_df": hyper.wishart_df,
            "wishart_scale": hyper.wishart_scale,
            "sigma2_shape": hyper.sigma2_shape,
            "sigma2_rate": hyper.sigma2_rate,
        },
    }


def model_spec_from_dict(obj: Mapping) -> JointModelSpec:
    try:
        fixed = _design_from_dict(obj["fixed"], "fixed")
        random = _design_from_dict(obj["random"], "random")
        assoc_obj = obj["association"]
        terms = []
        for i, t in enumerate(assoc_obj.get("terms", [])):
            ttype = t.get("type")
            if ttype == "constant":
                terms.append(AssociationTerm())
            elif ttype == "time-varying":
                terms.append(AssociationTerm(_spline_from_dict(t, f"association term {i}")))
            else:
                raise DataFormatError(
                    f"association term {i}: type must be 'constant' or 'time-varying'"
                )
        association = AssociationSpec(form=assoc_obj["form"], terms=tuple(terms))
        hyper_obj = dict(obj.get("hyperparameters", {}))
        hyper = Hyperparameters(**hyper_obj)
        return JointModelSpec(
            fixed=fixed,
            random=random,
            survival_covariates=tuple(obj.get("survival_covariates", [])),
            baseline=_spline_from_dict(obj["baseline"], "baseline"),
            association=association,
            hyper=hyper,
        )
    except KeyError as exc:
        raise DataFormatError(f"model config: missing section {exc}") from None
    except (TypeError, ValidationError) as exc:
        raise DataFormatError(f"model config: {exc}") from None


def read_model_spec(path: str | Path) -> JointModelSpec:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    return model_spec_from_dict(obj)


def write_model_spec(path: str | Path, spec: JointModelSpec) -> None:
    with open(path, "w") as fh:
        json.dump(model_spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# fingerprints
# ---------------------------------------------------------------------------


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, no whitespace, shortest float reprs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj: Any) -> str:
    """sha256 hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def spec_fingerprint(spec: JointModelSpec) -> str:
    return fingerprint(model_spec_to_dict(spec))


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
