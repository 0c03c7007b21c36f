import pytest
from fastapi.testclient import TestClient

from app.main import app

PATH4 = {"n": 4, "edges": [[0, 1], [1, 2], [2, 3]]}
CYCLE4 = {"n": 4, "edges": [[0, 1], [1, 2], [2, 3], [3, 0]]}


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/api/v1/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_theory_group(client):
    response = client.get("/api/v1/theory/verify", params={"group": "counterexamples"})
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] is True
    assert body["checks"][0] == {"check": "case1_tv_star", "value": "29/16", "expected": "29/16", "passed": True}


def test_theory_unknown_group(client):
    response = client.get("/api/v1/theory/verify", params={"group": "nope"})
    assert response.status_code == 422
    assert response.json()["detail"]["category"] == "invalid_input"


def test_metrics(client):
    response = client.post("/api/v1/eval/metrics", json={"generated": [PATH4, CYCLE4], "reference": [PATH4, CYCLE4]})
    assert response.status_code == 200
    assert response.json() == pytest.approx({"degree_mmd": 0.0, "clustering_mmd": 0.0, "orbit_mmd": 0.0}, abs=1e-12)


def test_recall(client):
    moved = {"n": 4, "edges": [[2, 0], [0, 3], [3, 1]]}
    response = client.post("/api/v1/eval/recall", json={"generated": [moved, CYCLE4], "reference": [PATH4]})
    assert response.status_code == 200
    assert response.json() == {"recall": 0.5, "generated": 2, "reference": 1}


def test_recall_rejects_large_graphs(client):
    big = {"n": 25, "edges": [[0, 1]]}
    response = client.post("/api/v1/eval/recall", json={"generated": [big], "reference": [big]})
    assert response.status_code == 422
    assert response.json()["detail"]["category"] == "unsupported_size"


@pytest.mark.parametrize(
    "payload",
    [
        {"generated": [], "reference": [PATH4]},
        {"generated": [{"n": 3, "edges": [[0, 3]]}], "reference": [PATH4]},
        {"generated": [{"n": 3, "edges": [[1, 1]]}], "reference": [PATH4]},
        {"generated": [{"n": 2, "edges": [[0, 1]], "node_types": [0]}], "reference": [PATH4]},
    ],
)
def test_invalid_payloads(client, payload):
    assert client.post("/api/v1/eval/metrics", json=payload).status_code == 422
