import base64
import json

import numpy as np
import pytest

from wearcast.raster import GrayImage
from wearcast.service import schemas as s
from wearcast.service.app import create_app
from wearcast.synth import SynthConfig, generate_sequence
from wearcast.thresholding import THRESHOLD_VALUES


@pytest.fixture(scope="module")
def client():
    from fastapi.testclient import TestClient

    return TestClient(create_app())


def image_payload(img: GrayImage) -> dict:
    return {
        "width": img.width,
        "height": img.height,
        "pixels_b64": base64.b64encode(img.tobytes()).decode("ascii"),
    }


def dark_square_payload(size=30, square=10):
    arr = np.full((size, size), 200, dtype=np.uint8)
    off = (size - square) // 2
    arr[off : off + square, off : off + square] = 20
    return image_payload(GrayImage(arr))


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["version"]


class TestImagePayload:
    def test_round_trip(self, rng):
        img = GrayImage(rng.integers(0, 256, size=(9, 7), dtype=np.uint8))
        payload = s.ImagePayload.from_image(img)
        assert payload.to_image() == img


class TestSynthEndpoint:
    def test_generates_frames_and_truth(self, client):
        resp = client.post("/synth/generate", json={"n_frames": 3, "seed": 4})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["frames"]) == 3
        assert [row["t"] for row in body["truth"]] == [0, 1, 2]
        assert body["truth"][0]["area_px"] == 100

    def test_rejects_oversize_law(self, client):
        resp = client.post(
            "/synth/generate",
            json={"n_frames": 5, "width": 32, "height": 32, "area_rate": 5000},
        )
        assert resp.status_code == 422


class TestThresholdEndpoints:
    def test_otsu(self, client):
        arr = np.concatenate([np.full(50, 20), np.full(50, 200)]).astype(np.uint8)
        resp = client.post(
            "/threshold/otsu", json={"image": image_payload(GrayImage(arr.reshape(10, 10)))}
        )
        assert resp.status_code == 200
        decision = resp.json()["decision"]
        assert decision["method"] == "otsu"
        assert 20 <= decision["threshold"] <= 199

    def test_train_and_predict(self, client):
        samples = [
            {"image": image_payload(GrayImage.full(8, 8, v)), "class_value": v}
            for v in THRESHOLD_VALUES
        ]
        resp = client.post("/threshold/train", json={"samples": samples})
        assert resp.status_code == 200
        model = resp.json()["model"]
        assert model["format"] == "wearcast-threshold-classifier"
        resp = client.post(
            "/threshold/predict",
            json={"model": model, "image": image_payload(GrayImage.full(8, 8, 62))},
        )
        assert resp.status_code == 200
        assert resp.json()["decision"]["threshold"] == 62

    def test_train_missing_class_is_422(self, client):
        samples = [
            {"image": image_payload(GrayImage.full(8, 8, 35)), "class_value": 35}
        ]
        resp = client.post("/threshold/train", json={"samples": samples})
        assert resp.status_code == 422
        assert "40" in resp.json()["detail"]


class TestSegmentEndpoint:
    def test_measure_square(self, client):
        resp = client.post("/segment/measure", json={"image": dark_square_payload()})
        assert resp.status_code == 200
        body = resp.json()
        assert body["area_px"] == 100
        assert body["decision"]["method"] == "fixed"
        assert body["contour"] is not None

    def test_measure_blank(self, client):
        resp = client.post(
            "/segment/measure", json={"image": image_payload(GrayImage.full(10, 10, 200))}
        )
        assert resp.json()["area_px"] == 0
        assert resp.json()["contour"] is None


class TestDetectEndpoints:
    def test_propose(self, client):
        resp = client.post(
            "/detect/propose",
            json={"image": dark_square_payload(60, 20), "config": {"detection": "propose:100"}},
        )
        assert resp.status_code == 200
        assert len(resp.json()["boxes"]) == 1

    def test_track_run(self, client):
        seq = generate_sequence(SynthConfig(seed=13, area_start=150, area_rate=25), 6)
        resp = client.post(
            "/track/run",
            json={
                "frames": [image_payload(f) for f in seq.frames],
                "frame_indices": list(range(6)),
                "config": {"detection": "propose:100"},
            },
        )
        assert resp.status_code == 200
        tracks = resp.json()["tracks"]
        assert len(tracks) == 1
        assert [e["t"] for e in tracks[0]["entries"]] == list(range(6))


class TestExpertEndpoint:
    def test_correct(self, client):
        rows = [
            {"t": 0, "area_mm2": 0.1},
            {"t": 1, "area_mm2": 0.5},
            {"t": 2, "area_mm2": 0.12},
        ]
        resp = client.post("/expert/correct", json={"series": rows})
        assert resp.status_code == 200
        corrected = resp.json()["corrected"]
        assert [c["case"] for c in corrected] == ["first", "averaged", "clamped"]
        assert corrected[1]["area_mm2"] == pytest.approx(0.3)

    def test_empty_series_is_422(self, client):
        resp = client.post("/expert/correct", json={"series": []})
        assert resp.status_code == 422


class TestForecastEndpoint:
    def test_report(self, client):
        rows = [{"t": t, "area_mm2": 0.1 + 0.03 * t} for t in range(12)]
        resp = client.post("/forecast/report", json={"series": rows})
        assert resp.status_code == 200
        report = resp.json()["report"]
        assert report["selected"] == "linear"
        assert report["t_star"] == pytest.approx((0.9 - 0.1) / 0.03, abs=1e-3)

    def test_insufficient_is_422(self, client):
        rows = [{"t": t, "area_mm2": 0.1 + 0.03 * t} for t in range(4)]
        resp = client.post("/forecast/report", json={"series": rows})
        assert resp.status_code == 422
        assert "at least 5" in resp.json()["detail"]


class TestPipelineEndpoint:
    def test_areas_mode_matches_forecast_endpoint(self, client):
        rows = [{"t": t, "area_mm2": 0.1 + 0.03 * t} for t in range(12)]
        run = client.post("/pipeline/run", json={"mode": "areas", "series": rows}).json()
        assert len(run["reports"]) == 1
        assert run["reports"][0]["selected"] == "linear"
        assert set(run["artifacts"]) >= {"corrected_track0.csv", "report.json"}

    def test_frames_mode(self, client):
        seq = generate_sequence(SynthConfig(seed=13, area_start=150, area_rate=25), 8)
        resp = client.post(
            "/pipeline/run",
            json={
                "mode": "frames",
                "frames": [image_payload(f) for f in seq.frames],
                "frame_indices": list(range(8)),
                "config": {"detection": "propose:100"},
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["reports"][0]["selected"] == "linear"
        assert "tracks.json" in body["artifacts"]
        assert "areas_track0.csv" in body["artifacts"]

    def test_unknown_mode_is_422(self, client):
        resp = client.post("/pipeline/run", json={"mode": "video"})
        assert resp.status_code == 422

    def test_areas_mode_insufficient_points(self, client):
        rows = [{"t": t, "area_mm2": 0.1 + 0.03 * t} for t in range(4)]
        resp = client.post("/pipeline/run", json={"mode": "areas", "series": rows})
        assert resp.status_code == 422
        assert "at least 5" in resp.json()["detail"]


class TestEvaluateEndpoint:
    def test_metrics(self, client):
        records = [
            {
                "frame_index": 0,
                "timestep": 0,
                "area_px": 105,
                "area_mm2": 0.0105,
                "threshold": 52,
                "method": "fixed",
            }
        ]
        truth = [{"t": 0, "area_px": 100, "area_mm2": 0.01}]
        resp = client.post("/evaluate", json={"records": records, "truth": truth})
        assert resp.status_code == 200
        assert resp.json()["metrics"]["mean_rel_error"] == pytest.approx(0.05)


class TestDeterminism:
    def test_pipeline_artifacts_identical_across_requests(self, client):
        rows = [{"t": t, "area_mm2": 0.1 + 0.03 * t} for t in range(10)]
        a = client.post("/pipeline/run", json={"mode": "areas", "series": rows}).json()
        b = client.post("/pipeline/run", json={"mode": "areas", "series": rows}).json()
        assert a == b
