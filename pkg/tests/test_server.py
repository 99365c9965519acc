import http.client
import json
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from localeq import checkpoint
from localeq.core import locale_registry, pt_registry
from localeq.encoder import EncoderConfig
from localeq.models import create_bundle
from localeq.server import Predictor, encode, load_calibration, load_predictor, make_server, parse_bind

CFG = EncoderConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16, max_len=16, n_buckets=64)


def _bundle(variant="cons-aware"):
    b = create_bundle(variant, locale_registry(["US", "DE"]), pt_registry(["MUG", "SHIRT", "LAMP"]), CFG, seed=2)
    b.heads[0].params["bias"].value[:] = [2.0, 0.0, -2.0]
    return b


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    d = tmp_path_factory.mktemp("srv")
    checkpoint.save(_bundle(), d / "m.lqpt")
    (d / "cal.json").write_text(json.dumps({"thresholds": {"US": 0.3}, "default": 0.6}))
    pred = load_predictor(d / "m.lqpt", d / "cal.json")
    server = make_server(pred, "127.0.0.1:0")
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield pred, server.server_address[1]
    server.shutdown()
    server.server_close()


def request(port, method, path, body=None, headers=None):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=30)
    hdrs = {"Content-Type": "application/json"} if body is not None else {}
    hdrs.update(headers or {})
    conn.request(method, path, body=body, headers=hdrs)
    resp = conn.getresponse()
    data = resp.read()
    conn.close()
    return resp.status, data


def test_health_and_version(served):
    pred, port = served
    assert request(port, "GET", "/healthz") == (200, b"ok\n")
    status, body = request(port, "GET", "/version")
    assert status == 200 and json.loads(body)["model_version"] == pred.model_version
    assert pred.model_version.startswith("cons-aware-")
    assert request(port, "GET", "/nope")[0] == 404


def test_predict_matches_in_process(served):
    pred, port = served
    body = json.dumps({"locale": "US", "query": "harry potter mug"}).encode()
    status, data = request(port, "POST", "/predict", body)
    assert status == 200
    assert data == encode(pred.handle({"locale": "US", "query": "harry potter mug"})[1])
    out = json.loads(data)
    assert out["threshold"] == 0.3 and out["locale_known"] is True


def test_calibration_fallbacks(served):
    pred, _ = served
    assert pred.threshold_for("US") == 0.3
    assert pred.threshold_for("DE") == 0.6
    assert Predictor(_bundle()).threshold_for("US") == 0.5


def test_unknown_locale_and_refrain(served):
    pred, port = served
    status, data = request(port, "POST", "/predict", json.dumps({"locale": "ZZ", "query": "mug",
                                                                 "threshold": 1.0}).encode())
    out = json.loads(data)
    assert status == 200 and out["locale_known"] is False and out["refused"] is True and out["product_types"] == []


def test_noncons_unknown_locale_is_422():
    status, body = Predictor(_bundle("noncons")).handle({"locale": "ZZ", "query": "mug"})
    assert status == 422 and body["locale_known"] is False


@pytest.mark.parametrize("body,headers,status", [
    (b"{", None, 400),
    (b"[1]", None, 400),
    (json.dumps({"locale": "US", "query": "q", "extra": 1}).encode(), None, 400),
    (json.dumps({"locale": "US", "query": 3}).encode(), None, 400),
    (json.dumps({"locale": "US", "query": "q", "threshold": 2}).encode(), None, 400),
    (json.dumps({"locale": "US", "query": "q", "threshold": True}).encode(), None, 400),
    (json.dumps({"locale": "US", "query": "   "}).encode(), None, 422),
    (b"{}", {"Content-Type": "text/plain"}, 415),
    (b"x" * (1 << 16 + 1), None, 413),
])
def test_error_statuses(served, body, headers, status):
    _, port = served
    got, data = request(port, "POST", "/predict", body, headers)
    assert got == status
    assert "error" in json.loads(data)


def test_missing_content_length(served):
    _, port = served
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=30)
    conn.putrequest("POST", "/predict")
    conn.putheader("Content-Type", "application/json")
    conn.endheaders()
    resp = conn.getresponse()
    assert resp.status == 411
    conn.close()


def test_keep_alive_connection_serves_several_requests(served):
    _, port = served
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=30)
    for q in ("mug", "shirt", "lamp"):
        conn.request("POST", "/predict", body=json.dumps({"locale": "DE", "query": q}),
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        assert resp.status == 200
        resp.read()
    conn.close()


def test_concurrent_identical_requests(served):
    _, port = served
    body = json.dumps({"locale": "DE", "query": "lamp shade"}).encode()
    with ThreadPoolExecutor(32) as ex:
        results = list(ex.map(lambda _: request(port, "POST", "/predict", body), range(32)))
    assert {r for r in results} == {results[0]} and results[0][0] == 200


def test_connect_burst_before_accept(served):
    # 32 clients connect before the accept loop runs; all must queue, none reset
    pred, _ = served
    server = make_server(pred, "127.0.0.1:0")
    port = server.server_address[1]
    body = json.dumps({"locale": "DE", "query": "mug"}).encode()
    try:
        conns = [http.client.HTTPConnection("127.0.0.1", port, timeout=5) for _ in range(32)]
        for c in conns:
            c.connect()
        threading.Thread(target=server.serve_forever, daemon=True).start()
        statuses = []
        for c in conns:
            c.request("POST", "/predict", body=body, headers={"Content-Type": "application/json"})
            r = c.getresponse()
            r.read()
            statuses.append(r.status)
            c.close()
        assert statuses == [200] * 32
    finally:
        server.shutdown()
        server.server_close()


def test_parse_bind_and_calibration(tmp_path):
    assert parse_bind("0.0.0.0:80") == ("0.0.0.0", 80)
    assert parse_bind(":9000") == ("127.0.0.1", 9000)
    for bad in ("localhost", "h:x", "h:70000"):
        with pytest.raises(ValueError):
            parse_bind(bad)
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"thresholds": {"US": 1.5}}))
    with pytest.raises(ValueError):
        load_calibration(p)
