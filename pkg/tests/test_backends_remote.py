from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from conceptseg.backends import (
    FixtureWriter,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
    ToySuiteBackend,
    ToyWorldConfig,
)
from conceptseg.backends.wire import (
    decode_image_payload,
    decode_prompt_payload,
    encode_image_payload,
    encode_prompt_payload,
    request_digest,
)
from conceptseg.core import BinaryMask, BoxPrompt, encode_rle, rle_to_json
from conceptseg.errors import (
    BackendError,
    MalformedResponseError,
    ReplayMissError,
    TransportError,
)
from conceptseg.prompts import PromptBundle

from conftest import make_image
from test_backends_toy import two_object_scene


def stub_mask(width: int, height: int, prompt_payload: dict) -> BinaryMask:
    """Deterministic server-side mask: the box if given, else seeded noise."""
    if "box" in prompt_payload:
        box = prompt_payload["box"]
        bits = np.zeros((height, width), dtype=bool)
        bits[box["y_min"] : box["y_max"] + 1, box["x_min"] : box["x_max"] + 1] = True
        return BinaryMask(bits)
    seed = int(hashlib.sha256(prompt_payload.get("phrase", "").encode()).hexdigest()[:8], 16)
    rng = np.random.default_rng(seed)
    return BinaryMask(rng.random((height, width)) < 0.3)


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        server = self.server
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        server.requests.append(body["request_id"])
        if self.path != "/v1/segment":
            self._reply(404, {"error": "not found"})
            return
        prompt = body["prompt"]
        phrase = prompt.get("phrase", "")
        if phrase == "boom":
            self._reply(400, {"error": "phrase rejected by stub"})
            return
        if phrase == "crash":
            self._reply(500, {"error": "stub exploded"})
            return
        if phrase == "flaky":
            attempts = server.attempts.setdefault(body["request_id"], 0)
            server.attempts[body["request_id"]] += 1
            if attempts == 0:
                self._reply(503, {"error": "warming up"})
                return
        w, h = body["image"]["w"], body["image"]["h"]
        if phrase == "malformed":
            self._reply(200, {
                "mask": {"w": w, "h": h, "runs": [w * h + 1]},
                "confidence": 0.5,
                "model_id": "stub-server",
            })
            return
        mask = stub_mask(w, h, prompt)
        self._reply(200, {
            "mask": rle_to_json(encode_rle(mask)),
            "confidence": 0.5,
            "model_id": "stub-server",
            "instances": [],  # reserved key; clients must tolerate it
        })

    def _reply(self, status: int, payload: dict):
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.requests = []
    server.attempts = {}
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=5)


def endpoint(server) -> str:
    return f"http://127.0.0.1:{server.server_address[1]}"


class TestWireCodecs:
    def test_image_payload_round_trip(self):
        image = make_image(7, 5, value=130)
        assert decode_image_payload(encode_image_payload(image)) == image

    def test_prompt_payload_round_trip(self):
        prompt = PromptBundle.text_box("liver tumor", BoxPrompt(1, 2, 3, 4))
        payload = encode_prompt_payload(prompt)
        assert payload["box"]["coords"] == "inclusive-pixel"
        decoded = decode_prompt_payload(payload)
        assert decoded.mode == prompt.mode
        assert decoded.phrase == prompt.phrase
        assert decoded.box == prompt.box

    def test_request_digest_ignores_request_id(self):
        image = encode_image_payload(make_image(4, 4))
        prompt = encode_prompt_payload(PromptBundle.text("polyp"))
        assert request_digest(image, prompt) == request_digest(image, prompt)

    def test_request_digest_sensitive_to_content(self):
        image = encode_image_payload(make_image(4, 4))
        a = request_digest(image, encode_prompt_payload(PromptBundle.text("polyp")))
        b = request_digest(image, encode_prompt_payload(PromptBundle.text("liver")))
        assert a != b


class TestRemoteBackend:
    def test_text_round_trip(self, stub_server):
        backend = RemoteBackend(endpoint(stub_server))
        image = make_image(12, 9)
        result = backend.segment(image, PromptBundle.text("polyp"))
        assert (result.mask.width, result.mask.height) == (12, 9)
        assert result.confidence == 0.5
        assert result.backend_id == "stub-server"
        again = backend.segment(image, PromptBundle.text("polyp"))
        assert again.mask == result.mask

    def test_box_prompt_served(self, stub_server):
        backend = RemoteBackend(endpoint(stub_server))
        image = make_image(10, 10)
        box = BoxPrompt(2, 3, 5, 6)
        result = backend.segment(image, PromptBundle.box_only(box))
        assert result.mask == box.as_mask(10, 10)

    def test_malformed_run_sum_rejected(self, stub_server):
        backend = RemoteBackend(endpoint(stub_server))
        with pytest.raises(MalformedResponseError, match="mask"):
            backend.segment(make_image(6, 6), PromptBundle.text("malformed"))

    def test_http_error_mapped_to_backend_failure(self, stub_server):
        backend = RemoteBackend(endpoint(stub_server))
        with pytest.raises(BackendError, match="rejected"):
            backend.segment(make_image(6, 6), PromptBundle.text("boom"))

    def test_persistent_5xx_exhausts_retries(self, stub_server):
        backend = RemoteBackend(endpoint(stub_server), max_retries=2, backoff_base=0.01)
        with pytest.raises(TransportError):
            backend.segment(make_image(6, 6), PromptBundle.text("crash"))
        assert len(stub_server.requests) == 3

    def test_retry_reuses_request_id(self, stub_server):
        backend = RemoteBackend(endpoint(stub_server), max_retries=2, backoff_base=0.01)
        result = backend.segment(make_image(8, 8), PromptBundle.text("flaky"))
        flaky_ids = list(stub_server.attempts)
        assert len(flaky_ids) == 1  # both attempts shared one request_id
        assert stub_server.attempts[flaky_ids[0]] == 2
        assert (result.mask.width, result.mask.height) == (8, 8)

    def test_unreachable_endpoint(self):
        backend = RemoteBackend("http://127.0.0.1:9", max_retries=0, timeout=0.2)
        with pytest.raises(TransportError):
            backend.segment(make_image(4, 4), PromptBundle.text("polyp"))


class TestRecordReplay:
    def test_remote_record_then_replay_identical(self, stub_server, tmp_path):
        fixture = tmp_path / "traffic.jsonl"
        backend = RemoteBackend(endpoint(stub_server), recorder=FixtureWriter(fixture))
        image = make_image(11, 7)
        prompts = [
            PromptBundle.text("polyp"),
            PromptBundle.text("liver"),
            PromptBundle.box_only(BoxPrompt(1, 1, 4, 4)),
        ]
        live = [backend.segment(image, p) for p in prompts]
        replay = ReplayBackend(fixture)
        for prompt, live_result in zip(prompts, live):
            replayed = replay.segment(image, prompt)
            assert replayed.mask == live_result.mask
            assert replayed.confidence == live_result.confidence
            assert replayed.backend_id == live_result.backend_id

    def test_replay_miss(self, stub_server, tmp_path):
        fixture = tmp_path / "traffic.jsonl"
        RemoteBackend(endpoint(stub_server), recorder=FixtureWriter(fixture)).segment(
            make_image(5, 5), PromptBundle.text("polyp")
        )
        replay = ReplayBackend(fixture)
        with pytest.raises(ReplayMissError):
            replay.segment(make_image(5, 5), PromptBundle.text("unseen"))

    def test_run_eval_identical_under_replay_substitution(self, stub_server, tmp_path):
        # The substitutability contract: metrics output must not
        # change when the remote backend is swapped for a replay of its
        # recorded traffic.
        from conceptseg.datasets import load_manifest
        from conceptseg.prompts import PromptMode
        from conceptseg.runner import RunSpec, run_eval
        from conftest import write_dataset

        manifest = load_manifest(write_dataset(tmp_path, n_cases=3))
        fixture = tmp_path / "traffic.jsonl"
        remote = RemoteBackend(endpoint(stub_server), recorder=FixtureWriter(fixture))
        live = run_eval(RunSpec("m", PromptMode.TEXT_BOX, remote, manifest))
        replayed = run_eval(
            RunSpec("m", PromptMode.TEXT_BOX, ReplayBackend(fixture), manifest)
        )
        assert live.rows == replayed.rows
        assert live.skipped == replayed.skipped
        assert not live.failed and not replayed.failed

    def test_recording_wrapper_makes_any_backend_replayable(self, tmp_path):
        scene = two_object_scene(4)
        world = ToyWorldConfig(vocabulary=frozenset({"liver", "lung"}))
        toy = ToySuiteBackend.from_scenes(world, [scene])
        fixture = tmp_path / "toy.jsonl"
        recording = RecordingBackend(toy, FixtureWriter(fixture))
        prompt = PromptBundle.text("liver")
        original = recording.segment(scene.image, prompt)
        replayed = ReplayBackend(fixture).segment(scene.image, prompt)
        assert replayed.mask == original.mask
        assert replayed.confidence == original.confidence
        assert replayed.backend_id == original.backend_id
