"""Client for the wearcast service.

The CLI goes through this layer for all computation. By default it talks to
an in-process app instance (no network); pass a base URL to use a remote
service instead.
"""
from __future__ import annotations

from typing import Optional

import httpx

from .service import schemas as s


class ServiceError(RuntimeError):
    """A request the service rejected, with its detail message."""


class PipelineClient:
    def __init__(self, http: httpx.Client):
        self._http = http

    @classmethod
    def local(cls) -> "PipelineClient":
        import warnings

        with warnings.catch_warnings():
            # the bundled starlette deprecates its httpx-based TestClient;
            # in-process dispatch is exactly what the local mode wants
            warnings.filterwarnings(
                "ignore", message="Using `httpx` with `starlette.testclient`"
            )
            from fastapi.testclient import TestClient

        from .service.app import app

        return cls(TestClient(app))

    @classmethod
    def remote(cls, base_url: str, timeout: float = 300.0) -> "PipelineClient":
        return cls(httpx.Client(base_url=base_url, timeout=timeout))

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "PipelineClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _post(self, path: str, payload) -> dict:
        resp = self._http.post(path, json=payload.model_dump())
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise ServiceError(f"{path}: {detail}")
        return resp.json()

    def health(self) -> s.HealthResponse:
        resp = self._http.get("/health")
        if resp.status_code != 200:
            raise ServiceError(f"/health: {resp.text}")
        return s.HealthResponse.model_validate(resp.json())

    def synth(self, req: s.SynthRequest) -> s.SynthResponse:
        return s.SynthResponse.model_validate(self._post("/synth/generate", req))

    def otsu(self, req: s.OtsuRequest) -> s.OtsuResponse:
        return s.OtsuResponse.model_validate(self._post("/threshold/otsu", req))

    def train(self, req: s.TrainRequest) -> s.TrainResponse:
        return s.TrainResponse.model_validate(self._post("/threshold/train", req))

    def predict(self, req: s.PredictRequest) -> s.PredictResponse:
        return s.PredictResponse.model_validate(self._post("/threshold/predict", req))

    def measure(self, req: s.MeasureRequest) -> s.MeasureResponse:
        return s.MeasureResponse.model_validate(self._post("/segment/measure", req))

    def propose(self, req: s.ProposeRequest) -> s.ProposeResponse:
        return s.ProposeResponse.model_validate(self._post("/detect/propose", req))

    def track(self, req: s.TrackRequest) -> s.TrackResponse:
        return s.TrackResponse.model_validate(self._post("/track/run", req))

    def correct(self, req: s.CorrectRequest) -> s.CorrectResponse:
        return s.CorrectResponse.model_validate(self._post("/expert/correct", req))

    def forecast(self, req: s.ForecastRequest) -> s.ForecastResponse:
        return s.ForecastResponse.model_validate(self._post("/forecast/report", req))

    def run_pipeline(self, req: s.PipelineRunRequest) -> s.PipelineRunResponse:
        return s.PipelineRunResponse.model_validate(self._post("/pipeline/run", req))

    def evaluate(self, req: s.EvaluateRequest) -> s.EvaluateResponse:
        return s.EvaluateResponse.model_validate(self._post("/evaluate", req))


def make_client(server: Optional[str] = None) -> PipelineClient:
    return PipelineClient.remote(server) if server else PipelineClient.local()
