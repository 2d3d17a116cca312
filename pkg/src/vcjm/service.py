"""JSON-over-HTTP prediction service. The CLI predict command calls the
same bundle/seed/predict functions, so service responses and file output
agree field for field."""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.encoders import jsonable_encoder
from fastapi.middleware.cors import CORSMiddleware
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .io import canonical_json, model_spec_from_dict
from .model import ValidationError, serving_context
from .prediction import PredictionRequest, conditional_survival, lambda_curve
from .sampler import PosteriorDraws, load_draws
from .splines import SplineDomainError


@dataclass
class ModelBundle:
    context: object
    draws: PosteriorDraws
    spec_dict: dict
    fingerprint: str
    subsample: int = 500
    mh_steps: int = 25


def load_bundle(draws_dir, subsample: int = 500, mh_steps: int = 25) -> ModelBundle:
    draws = load_draws(draws_dir)
    with open(Path(draws_dir) / "meta.json") as fh:
        meta = json.load(fh)
    spec = model_spec_from_dict(meta["model"])
    return ModelBundle(
        context=serving_context(spec),
        draws=draws,
        spec_dict=meta["model"],
        fingerprint=meta["fingerprint"],
        subsample=subsample,
        mh_steps=mh_steps,
    )


def request_seed(service_seed: int, covariates, history, t, dt_grid) -> int:
    """Deterministic per-request seed: a stable hash of the canonical request
    document folded with the service seed."""
    doc = {
        "covariates": {str(k): float(v) for k, v in covariates.items()},
        "history": [[float(a), float(b)] for a, b in history],
        "t": float(t),
        "dt_grid": [float(v) for v in dt_grid],
    }
    digest = hashlib.sha256(canonical_json(doc).encode()).digest()
    word = int.from_bytes(digest[:8], "big")
    return int(np.random.SeedSequence([int(service_seed), word]).generate_state(1)[0])


def predict_rows(
    bundle: ModelBundle, covariates, history, t, dt_grid, service_seed: int = 0
) -> list[dict]:
    """One {dt, mean, lo, hi} record per horizon; [] for an empty grid."""
    if len(dt_grid) == 0:
        return []
    times = np.array([h[0] for h in history], dtype=float)
    values = np.array([h[1] for h in history], dtype=float)
    request = PredictionRequest(
        times=times,
        values=values,
        covariates={str(k): float(v) for k, v in covariates.items()},
        t=float(t),
        dt_grid=np.asarray(dt_grid, dtype=float),
        subsample=bundle.subsample,
    )
    seed = request_seed(service_seed, covariates, history, t, dt_grid)
    result = conditional_survival(
        bundle.context, bundle.draws, request, mh_steps=bundle.mh_steps, seed=seed
    )
    return [
        {
            "dt": float(result.dt[i]),
            "mean": float(result.mean[i]),
            "lo": float(result.lo[i]),
            "hi": float(result.hi[i]),
        }
        for i in range(len(result.dt))
    ]


def lambda_payload(bundle: ModelBundle, grid_points: int = 101) -> list[dict]:
    spec = bundle.context.spec
    lo, hi = spec.baseline.boundary
    out = []
    for term_index, term in enumerate(spec.association.terms):
        if term.spline is not None:
            lo_t, hi_t = term.spline.boundary
        else:
            lo_t, hi_t = lo, hi
        grid = np.linspace(lo_t, hi_t, grid_points)
        curve = lambda_curve(bundle.context, bundle.draws, grid, term=term_index)
        out.append(
            {
                "term": term_index,
                "name": curve.name,
                "constant": term.spline is None,
                "t": [float(v) for v in curve.t],
                "mean": [float(v) for v in curve.mean],
                "lo": [float(v) for v in curve.lo],
                "hi": [float(v) for v in curve.hi],
            }
        )
    return out


def model_payload(bundle: ModelBundle, grid_points: int = 101) -> dict:
    spec = bundle.context.spec
    return {
        "fingerprint": bundle.fingerprint,
        "model": bundle.spec_dict,
        "association_form": spec.association.form,
        "covariates": {
            "longitudinal": list(spec.fixed.covariates),
            "survival": list(spec.survival_covariates),
        },
        "boundary": [float(v) for v in spec.baseline.boundary],
        "n_draws": int(
            sum(chain.shape[0] for chain in bundle.draws.chains)
        ),
        "lambda": lambda_payload(bundle, grid_points),
    }


class HistoryPoint(BaseModel):
    model_config = ConfigDict(extra="forbid")
    time: float
    value: float


class PredictBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    covariates: dict[str, float] = {}
    history: list[HistoryPoint] = []
    t: float
    dt_grid: list[float]


def create_app(bundle: ModelBundle, seed: int = 0) -> FastAPI:
    app = FastAPI(title="vcjm prediction service")
    # the explorer page is typically opened from another local origin (a
    # static file server or dev server), so answer cross-origin requests
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    model_doc = model_payload(bundle)

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request, exc):
        return JSONResponse(
            status_code=400,
            content={"detail": "schema violation", "errors": jsonable_encoder(exc.errors())},
        )

    @app.get("/model")
    def get_model():
        return model_doc

    @app.post("/predict")
    def post_predict(body: PredictBody):
        history = [(h.time, h.value) for h in body.history]
        if any(h.time > body.t for h in body.history):
            return JSONResponse(
                status_code=422,
                content={"detail": "history time exceeds base time t"},
            )
        try:
            rows = predict_rows(
                bundle, body.covariates, history, body.t, body.dt_grid, seed
            )
        except SplineDomainError as err:
            return JSONResponse(status_code=422, content={"detail": str(err)})
        except ValidationError as err:
            return JSONResponse(status_code=400, content={"detail": str(err)})
        return {"pi": rows}

    return app


def serve(draws_dir, port: int = 8000, seed: int = 0, subsample: int = 500,
          mh_steps: int = 25, host: str = "127.0.0.1") -> None:
    import uvicorn

    bundle = load_bundle(draws_dir, subsample=subsample, mh_steps=mh_steps)
    uvicorn.run(create_app(bundle, seed=seed), host=host, port=port)
