import hashlib

import numpy as np
import pytest

from paintflow.image import (
    BinaryMask,
    RasterImage,
    image_from_png_bytes,
    image_to_png_bytes,
    mask_to_png_bytes,
)
from paintflow.sbr import SbrConfig
from paintflow.service import (
    EditRequest,
    EditService,
    NothingPending,
    SessionNotFound,
    StubInference,
    ValidationFailure,
    create_app,
)

FAST_STUB = StubInference(SbrConfig(pyramid_levels=1, strokes_per_level=10, width_schedule=(3.0,)))


def grid_image(seed, n=16):
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, (n, n, 3)) / 255.0)


def simple_request(n=16, seed=0, with_ref=False, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    m = np.zeros((n, n), dtype=np.uint8)
    y0, x0 = rng.integers(0, n // 2, 2)
    m[y0 : y0 + n // 2, x0 : x0 + n // 2] = 1
    sk = (m & (rng.random((n, n)) > 0.7)).astype(np.uint8)
    ref = grid_image(rng_seed + 100, 8) if with_ref else None
    return EditRequest(
        mask=BinaryMask(m), sketch=BinaryMask(sk), reference=ref,
        prompt="a red disk", seed=seed,
    )


class CountingBackend:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def __call__(self, canvas, req):
        self.calls += 1
        return self.inner(canvas, req)


class TestSessionLifecycle:
    def test_blank_canvas_is_white(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(shape=(8, 10))
        c = svc.canvas(sid)
        assert c.shape == (8, 10)
        assert np.array_equal(c.data, np.ones((8, 10, 3)))

    def test_source_kept_bit_exact(self):
        svc = EditService(FAST_STUB)
        img = grid_image(0)
        sid = svc.create_session(source=img)
        assert np.array_equal(svc.canvas(sid).data, img.data)

    def test_distinct_ids(self):
        svc = EditService(FAST_STUB)
        assert svc.create_session(shape=(8, 8)) != svc.create_session(shape=(8, 8))

    def test_create_requires_exactly_one_input(self):
        svc = EditService(FAST_STUB)
        with pytest.raises(ValidationFailure):
            svc.create_session()
        with pytest.raises(ValidationFailure):
            svc.create_session(source=grid_image(1), shape=(4, 4))

    def test_unknown_session_raises(self):
        svc = EditService(FAST_STUB)
        with pytest.raises(SessionNotFound):
            svc.canvas("nope")


class TestSubmit:
    def test_empty_mask_rejected_before_inference(self):
        backend = CountingBackend(FAST_STUB)
        svc = EditService(backend)
        sid = svc.create_session(shape=(16, 16))
        req = simple_request()
        req.mask = BinaryMask(np.zeros((16, 16), dtype=np.uint8))
        with pytest.raises(ValidationFailure):
            svc.submit_edit(sid, req)
        assert backend.calls == 0

    def test_submit_leaves_current_canvas_untouched(self):
        svc = EditService(FAST_STUB)
        img = grid_image(2)
        sid = svc.create_session(source=img)
        svc.submit_edit(sid, simple_request(seed=1))
        assert np.array_equal(svc.canvas(sid).data, img.data)
        assert svc.state(sid)["has_pending"] is True

    def test_resubmit_same_request_same_preview(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(source=grid_image(3))
        a = svc.submit_edit(sid, simple_request(seed=7))
        b = svc.submit_edit(sid, simple_request(seed=7))
        assert np.array_equal(a.data, b.data)

    def test_shape_mismatch_rejected(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(shape=(16, 16))
        with pytest.raises(ValidationFailure):
            svc.submit_edit(sid, simple_request(n=8))

    def test_new_submit_replaces_pending(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(source=grid_image(4))
        first = svc.submit_edit(sid, simple_request(seed=1, rng_seed=1))
        second = svc.submit_edit(sid, simple_request(seed=2, rng_seed=2))
        confirmed = svc.confirm(sid)
        assert np.array_equal(confirmed.data, second.data)
        assert not np.array_equal(first.data, second.data)


class TestConfirmReject:
    def test_confirm_rotates_canvases(self):
        svc = EditService(FAST_STUB)
        img = grid_image(5)
        sid = svc.create_session(source=img)
        temp = svc.submit_edit(sid, simple_request(seed=3))
        out = svc.confirm(sid)
        assert np.array_equal(out.data, temp.data)
        assert np.array_equal(svc.previous_canvas(sid).data, img.data)
        assert svc.state(sid) == {"has_pending": False, "shape": [16, 16], "edit_count": 1}

    def test_confirm_twice_conflicts(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(source=grid_image(6))
        svc.submit_edit(sid, simple_request(seed=1))
        svc.confirm(sid)
        with pytest.raises(NothingPending):
            svc.confirm(sid)

    def test_outside_mask_pixels_survive_confirm(self):
        svc = EditService(FAST_STUB)
        img = grid_image(7)
        sid = svc.create_session(source=img)
        req = simple_request(seed=2)
        svc.submit_edit(sid, req)
        out = svc.confirm(sid)
        outside = req.mask.data == 0
        assert np.array_equal(out.data[outside], img.data[outside])

    def test_reject_restores_nothing_changes(self):
        svc = EditService(FAST_STUB)
        img = grid_image(8)
        sid = svc.create_session(source=img)
        svc.submit_edit(sid, simple_request(seed=4))
        out = svc.reject(sid)
        assert np.array_equal(out.data, img.data)
        assert svc.state(sid)["has_pending"] is False

    def test_reject_then_resubmit_reproduces_temp(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(source=grid_image(9))
        a = svc.submit_edit(sid, simple_request(seed=5))
        svc.reject(sid)
        b = svc.submit_edit(sid, simple_request(seed=5))
        assert np.array_equal(a.data, b.data)

    def test_reject_without_pending_conflicts(self):
        svc = EditService(FAST_STUB)
        sid = svc.create_session(shape=(8, 8))
        with pytest.raises(NothingPending):
            svc.reject(sid)


class TestIsolationAndPersistence:
    def test_sessions_do_not_interact(self):
        svc = EditService(FAST_STUB)
        a = svc.create_session(source=grid_image(10))
        b = svc.create_session(source=grid_image(11))
        before_b = svc.canvas(b).data.copy()
        svc.submit_edit(a, simple_request(seed=1))
        svc.confirm(a)
        assert np.array_equal(svc.canvas(b).data, before_b)
        assert svc.state(b)["edit_count"] == 0

    def test_restart_recovers_sessions(self, tmp_path):
        svc = EditService(FAST_STUB, root=tmp_path)
        sid = svc.create_session(source=grid_image(12))
        svc.submit_edit(sid, simple_request(seed=1, rng_seed=3))
        svc.confirm(sid)
        svc.submit_edit(sid, simple_request(seed=2, rng_seed=4))  # left pending
        reborn = EditService(FAST_STUB, root=tmp_path)
        assert np.array_equal(reborn.canvas(sid).data, svc.canvas(sid).data)
        st = reborn.state(sid)
        assert st["edit_count"] == 1 and st["has_pending"] is True
        # the pending proposal also survives
        assert np.array_equal(
            reborn._sessions[sid].c_temp.data, svc._sessions[sid].c_temp.data
        )

    def test_replay_reproduces_final_canvas(self, tmp_path):
        svc = EditService(FAST_STUB, root=tmp_path)
        sid = svc.create_session(source=grid_image(13))
        for k in range(3):
            svc.submit_edit(sid, simple_request(seed=k, rng_seed=k, with_ref=(k == 1)))
            svc.confirm(sid)
        replayed = svc.replay(sid)
        assert np.array_equal(replayed.data, svc.canvas(sid).data)

    def test_replay_exact_with_off_grid_reference(self, tmp_path):
        # a reference whose floats are not 8-bit representable must be
        # quantized before inference, or the persisted log diverges
        svc = EditService(FAST_STUB, root=tmp_path)
        sid = svc.create_session(source=grid_image(14))
        req = simple_request(seed=0, rng_seed=5)
        rng = np.random.default_rng(6)
        req.reference = RasterImage(rng.random((8, 8, 3)) * 0.4)
        svc.submit_edit(sid, req)
        svc.confirm(sid)
        assert np.array_equal(svc.replay(sid).data, svc.canvas(sid).data)


class ReferenceAutomaton:
    """Independent model of the propose/confirm/reject automaton; shares only
    the pure backend function with the real service."""

    def __init__(self, backend, canvas):
        self.backend = backend
        self.prev = canvas
        self.curr = canvas
        self.temp = None
        self.count = 0

    def submit(self, req):
        if req.mask.is_empty() or req.mask.shape != self.curr.shape:
            return "validation"
        self.temp = self.backend(self.curr, req)
        return "ok"

    def confirm(self):
        if self.temp is None:
            return "conflict"
        self.prev, self.curr, self.temp = self.curr, self.temp, None
        self.count += 1
        return "ok"

    def reject(self):
        if self.temp is None:
            return "conflict"
        self.temp = None
        return "ok"

    def observable(self):
        return (
            hashlib.sha256(self.curr.data.tobytes()).hexdigest(),
            hashlib.sha256(self.prev.data.tobytes()).hexdigest(),
            self.temp is not None,
            self.count,
        )


def service_observable(svc, sid):
    s = svc._sessions[sid]
    return (
        hashlib.sha256(s.c_curr.data.tobytes()).hexdigest(),
        hashlib.sha256(s.c_prev.data.tobytes()).hexdigest(),
        s.has_pending(),
        s.edit_count,
    )


def run_random_sequences(n_sequences, canvas_size=12, seed=0, max_len=8):
    backend = StubInference(SbrConfig(pyramid_levels=1, strokes_per_level=8, width_schedule=(3.0,)))
    rng = np.random.default_rng(seed)
    divergences = 0
    for _ in range(n_sequences):
        svc = EditService(backend)
        img = RasterImage(rng.integers(0, 256, (canvas_size, canvas_size, 3)) / 255.0)
        sid = svc.create_session(source=img)
        model = ReferenceAutomaton(backend, svc.canvas(sid))
        for _step in range(int(rng.integers(1, max_len))):
            op = rng.choice(["submit", "confirm", "reject"], p=[0.5, 0.3, 0.2])
            if op == "submit":
                empty = rng.random() < 0.1
                m = np.zeros((canvas_size, canvas_size), dtype=np.uint8)
                if not empty:
                    y0, x0 = rng.integers(0, canvas_size // 2, 2)
                    m[y0 : y0 + canvas_size // 2, x0 : x0 + canvas_size // 2] = 1
                req = EditRequest(
                    mask=BinaryMask(m),
                    sketch=BinaryMask(np.zeros((canvas_size, canvas_size), dtype=np.uint8)),
                    prompt=f"p{int(rng.integers(0, 5))}",
                    seed=int(rng.integers(0, 3)),
                )
                expected = model.submit(req)
                try:
                    svc.submit_edit(sid, req)
                    got = "ok"
                except ValidationFailure:
                    got = "validation"
            elif op == "confirm":
                expected = model.confirm()
                try:
                    svc.confirm(sid)
                    got = "ok"
                except NothingPending:
                    got = "conflict"
            else:
                expected = model.reject()
                try:
                    svc.reject(sid)
                    got = "ok"
                except NothingPending:
                    got = "conflict"
            if got != expected or service_observable(svc, sid) != model.observable():
                divergences += 1
    return divergences


class TestAutomaton:
    def test_randomized_sequences_match_reference_model(self):
        assert run_random_sequences(300, seed=1) == 0


@pytest.fixture()
def client(tmp_path):
    from fastapi.testclient import TestClient

    svc = EditService(FAST_STUB, root=tmp_path)
    return TestClient(create_app(svc))


def mask_bytes(n=16, empty=False, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    m = np.zeros((n, n), dtype=np.uint8)
    if not empty:
        m[4:12, 4:12] = 1
    return mask_to_png_bytes(BinaryMask(m))


class TestHttpApi:
    def test_create_from_shape_and_edit_cycle(self, client):
        r = client.post("/session", json={"height": 16, "width": 16})
        assert r.status_code == 200
        sid = r.json()["id"]

        r = client.post(
            f"/session/{sid}/edit",
            files={
                "mask": ("mask.png", mask_bytes(), "image/png"),
                "sketch": ("sketch.png", mask_bytes(empty=True), "image/png"),
            },
            data={"prompt": "a blue square", "seed": "3"},
        )
        assert r.status_code == 200
        preview = r.content

        state = client.get(f"/session/{sid}/state").json()
        assert state == {"has_pending": True, "shape": [16, 16], "edit_count": 0}

        r = client.post(f"/session/{sid}/confirm")
        assert r.status_code == 200
        assert r.content == preview  # confirmed canvas is the previewed temp

        canvas = client.get(f"/session/{sid}/canvas")
        assert canvas.status_code == 200
        assert canvas.content == preview

    def test_create_from_source_png(self, client):
        img = grid_image(20)
        r = client.post(
            "/session", files={"source": ("source.png", image_to_png_bytes(img), "image/png")}
        )
        assert r.status_code == 200
        sid = r.json()["id"]
        got = client.get(f"/session/{sid}/canvas").content
        assert np.array_equal(image_from_png_bytes(got).data, img.data)

    def test_status_codes(self, client):
        # 404 unknown session
        assert client.get("/session/zzz/canvas").status_code == 404
        assert client.post("/session/zzz/confirm").status_code == 404
        # 400 validation: empty mask
        sid = client.post("/session", json={"height": 16, "width": 16}).json()["id"]
        r = client.post(
            f"/session/{sid}/edit",
            files={
                "mask": ("mask.png", mask_bytes(empty=True), "image/png"),
                "sketch": ("sketch.png", mask_bytes(empty=True), "image/png"),
            },
        )
        assert r.status_code == 400
        # 409 conflict: nothing pending
        assert client.post(f"/session/{sid}/confirm").status_code == 409
        assert client.post(f"/session/{sid}/reject").status_code == 409
        # 400 bad create payload
        assert client.post("/session", json={"height": 16}).status_code == 400

    def test_reject_returns_unchanged_canvas(self, client):
        img = grid_image(21)
        sid = client.post(
            "/session", files={"source": ("s.png", image_to_png_bytes(img), "image/png")}
        ).json()["id"]
        before = client.get(f"/session/{sid}/canvas").content
        client.post(
            f"/session/{sid}/edit",
            files={
                "mask": ("m.png", mask_bytes(), "image/png"),
                "sketch": ("k.png", mask_bytes(empty=True), "image/png"),
            },
        )
        r = client.post(f"/session/{sid}/reject")
        assert r.status_code == 200
        assert r.content == before

    def test_pending_parts_roundtrip(self, client):
        sid = client.post("/session", json={"height": 16, "width": 16}).json()["id"]
        mb = mask_bytes(rng_seed=5)
        sb = mask_bytes(empty=True)
        client.post(
            f"/session/{sid}/edit",
            files={"mask": ("m.png", mb, "image/png"), "sketch": ("k.png", sb, "image/png")},
        )
        got_mask = client.get(f"/session/{sid}/pending/mask")
        assert got_mask.status_code == 200
        assert got_mask.content == mb  # stored and re-encoded identically
        assert client.get(f"/session/{sid}/pending/reference").status_code == 400

    def test_edit_with_reference_upload(self, client):
        sid = client.post("/session", json={"height": 16, "width": 16}).json()["id"]
        ref = grid_image(22, 8)
        r = client.post(
            f"/session/{sid}/edit",
            files={
                "mask": ("m.png", mask_bytes(), "image/png"),
                "sketch": ("k.png", mask_bytes(empty=True), "image/png"),
                "reference": ("r.png", image_to_png_bytes(ref), "image/png"),
            },
            data={"seed": "1"},
        )
        assert r.status_code == 200
        got_ref = client.get(f"/session/{sid}/pending/reference")
        assert got_ref.status_code == 200
        assert np.array_equal(image_from_png_bytes(got_ref.content).data, ref.data)
