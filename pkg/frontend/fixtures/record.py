"""Record the bundled demo fixtures for the explorer UI.

Fits a small value+slope model on a synthetic dataset, saves the draws next
to this script, and captures the /model payload and one /predict
request/response pair through the same functions the service and
`vcjm predict` share. A constant-association model payload is recorded
alongside for the flat-line rendering test. Rerun from the repository root:

    PYTHONPATH=src python3 frontend/fixtures/record.py
"""

import json
import math
import tempfile
from pathlib import Path

import numpy as np

from vcjm.io import write_dataset, write_model_spec
from vcjm.model import (
    AssociationSpec,
    DataSet,
    JointModelSpec,
    LinearDesign,
    SplineSpec,
    Subject,
    TimeBasis,
    validate,
)
from vcjm.sampler import run, save_draws
from vcjm.service import load_bundle, model_payload, predict_rows

HERE = Path(__file__).resolve().parent
SEED = 5
SUBSAMPLE = 150
MH_STEPS = 25


def demo_dataset(n=50, seed=31) -> DataSet:
    rng = np.random.default_rng(seed)
    subs = []
    for i in range(n):
        female = float(i % 2)
        times = np.concatenate(
            [[0.0], np.sort(rng.uniform(0.3, 10.0, int(rng.integers(2, 6))))]
        )
        b = rng.multivariate_normal([0.0, 0.0], [[0.7, 0.03], [0.03, 0.03]])
        y = (
            3.0 + 0.2 * female + 0.09 * times - 0.002 * times**2
            + b[0] + b[1] * times + rng.normal(0, 0.5, times.size)
        )
        t_ev = 9.0 * (-math.log(rng.uniform())) ** (1 / 1.2) * math.exp(-0.1 * female)
        T = max(min(t_ev, float(rng.uniform(3.0, 13.0)), 13.0), 0.4)
        keep = times <= T
        subs.append(
            Subject(
                subject_id=f"d{i:03d}",
                times=times[keep],
                values=y[keep],
                covariates={"female": female},
                surv_time=T,
                event=int(t_ev <= T),
                surv_covariates={"female": female},
            )
        )
    return DataSet(subjects=tuple(subs))


def demo_spec(kind: str) -> JointModelSpec:
    tb = TimeBasis(kind="ns", interior_knots=(4.0,), boundary=(0.0, 13.0))
    smooth = SplineSpec(
        degree=2,
        interior_knots=tuple(np.linspace(0.0, 13.0, 8)[1:-1]),
        boundary=(0.0, 13.0),
        penalty_order=2,
    )
    assoc = (
        AssociationSpec.time_varying("value+slope", smooth)
        if kind == "vcjm"
        else AssociationSpec.constant("value+slope")
    )
    return JointModelSpec(
        fixed=LinearDesign(intercept=True, covariates=("female",), time=tb),
        random=LinearDesign(intercept=True, covariates=(), time=tb),
        survival_covariates=("female",),
        baseline=smooth,
        association=assoc,
    )


def main() -> None:
    data = demo_dataset()
    source = HERE / "source"
    source.mkdir(exist_ok=True)
    write_dataset(data, source / "longitudinal.csv", source / "survival.csv")

    payloads = {}
    for kind in ("vcjm", "ccjm"):
        spec = demo_spec(kind)
        write_model_spec(source / f"spec_{kind}.json", spec)
        ctx = validate(spec, data)
        draws = run(
            ctx, chains=2, n_iter=900, burn_in=300, thin=4, seed=9, store_b=False
        )
        # only the time-varying draws ship with the repo; the constant fit
        # exists to record its /model payload for the flat-line render test
        outdir = (
            HERE / "draws" if kind == "vcjm"
            else Path(tempfile.mkdtemp()) / "draws_constant"
        )
        save_draws(draws, outdir, ctx)
        bundle = load_bundle(outdir, subsample=SUBSAMPLE, mh_steps=MH_STEPS)
        payloads[kind] = model_payload(bundle)
        if kind == "vcjm":
            request = {
                "covariates": {"female": 1.0},
                "history": [
                    {"time": 0.0, "value": 3.4},
                    {"time": 1.5, "value": 3.1},
                    {"time": 3.0, "value": 2.8},
                    {"time": 4.5, "value": 2.9},
                ],
                "t": 5.0,
                "dt_grid": [0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
            }
            rows = predict_rows(
                bundle,
                request["covariates"],
                [(h["time"], h["value"]) for h in request["history"]],
                request["t"],
                request["dt_grid"],
                SEED,
            )
            predict = {"request": request, "response": {"pi": rows}}

    doc = {
        "seed": SEED,
        "subsample": SUBSAMPLE,
        "mh_steps": MH_STEPS,
        "model": payloads["vcjm"],
        "model_constant": payloads["ccjm"],
        "predict": predict,
    }
    with open(HERE / "demo.json", "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"recorded {HERE / 'demo.json'}")
    print(f"pi rows: {[round(r['mean'], 4) for r in predict['response']['pi']]}")


if __name__ == "__main__":
    main()
