"""Interactive editing sessions: propose-confirm-reject over a canvas.

Each session holds the previous, current, and (while an edit is pending) a
temporary canvas. Submitting an edit runs inference into the temporary
canvas only; the current canvas changes exclusively through confirm. All
canvases are kept on the 8-bit grid so PNG persistence and replay are
bit-exact. Sessions optionally persist to a directory and survive restarts.
"""

from __future__ import annotations

import dataclasses
import json
import threading
import time
import uuid
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response

from .image import (
    BinaryMask,
    RasterImage,
    composite,
    image_from_png_bytes,
    image_to_png_bytes,
    mask_from_png_bytes,
    mask_to_png_bytes,
    resize,
)
from .sbr import SbrConfig, stylize


class ValidationFailure(ValueError):
    """Maps to HTTP 400."""


class SessionNotFound(KeyError):
    """Maps to HTTP 404."""


class NothingPending(RuntimeError):
    """Maps to HTTP 409."""


@dataclass
class EditRequest:
    mask: BinaryMask
    sketch: BinaryMask
    reference: RasterImage | None = None
    prompt: str = ""
    seed: int = 0
    steps: int | None = None
    guidance: float | None = None


def canonical(img: RasterImage) -> RasterImage:
    """Snap pixel values onto the 8-bit grid (PNG round trip)."""
    return image_from_png_bytes(image_to_png_bytes(img))


# ---------------------------------------------------------------------------
# inference backends


def _prompt_color(prompt: str) -> np.ndarray:
    h = zlib.crc32(prompt.encode("utf-8"))
    return np.array(
        [((h >> 0) & 0xFF) / 255.0, ((h >> 8) & 0xFF) / 255.0, ((h >> 16) & 0xFF) / 255.0]
    )


class StubInference:
    """Checkpoint-free backend: paste the reference (or a prompt-derived
    color) into the mask, overlay the sketch, repaint the region with
    brushstrokes, and composite so everything outside the mask is untouched.
    Deterministic in (canvas, request)."""

    def __init__(self, sbr_cfg: SbrConfig | None = None):
        self.sbr_cfg = sbr_cfg or SbrConfig(
            pyramid_levels=2, strokes_per_level=24, width_schedule=(5.0, 2.0)
        )

    def __call__(self, canvas: RasterImage, req: EditRequest) -> RasterImage:
        m = req.mask.data.astype(bool)
        ys, xs = np.nonzero(m)
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1

        region = canvas.data[y0:y1, x0:x1].copy()
        if req.reference is not None:
            ref = resize(req.reference, y1 - y0, x1 - x0, "bilinear")
            fill = ref.data
        else:
            fill = np.broadcast_to(_prompt_color(req.prompt), region.shape)
        sub_mask = m[y0:y1, x0:x1]
        region[sub_mask] = fill[sub_mask]
        sketch_sub = req.sketch.data[y0:y1, x0:x1].astype(bool) & sub_mask
        region[sketch_sub] *= 0.25

        cfg = dataclasses.replace(self.sbr_cfg, seed=req.seed)
        painted, _ = stylize(RasterImage(np.clip(region, 0.0, 1.0)), cfg)
        out = canvas.data.copy()
        out[y0:y1, x0:x1][sub_mask] = painted.data[sub_mask]
        return canonical(RasterImage(out))


class DiffusionBackend:
    """Runs the trained sampler; request fields override the sampler config."""

    def __init__(self, model, sampler_cfg=None):
        from .diffusion import SamplerConfig

        self.model = model
        self.base_cfg = sampler_cfg or SamplerConfig()

    def __call__(self, canvas: RasterImage, req: EditRequest) -> RasterImage:
        from .diffusion import sample_edit

        overrides = {"seed": req.seed}
        if req.steps is not None:
            overrides["steps"] = req.steps
        if req.guidance is not None:
            overrides["guidance_weight"] = req.guidance
        cfg = dataclasses.replace(self.base_cfg, **overrides)
        out = sample_edit(
            self.model, canvas, req.mask, req.sketch,
            reference=req.reference, prompt=req.prompt, cfg=cfg,
        )
        return canonical(out)


# ---------------------------------------------------------------------------
# sessions


@dataclass
class EditSession:
    id: str
    c_prev: RasterImage
    c_curr: RasterImage
    c_temp: RasterImage | None = None
    pending: EditRequest | None = None
    edit_count: int = 0
    created: float = 0.0
    updated: float = 0.0

    def has_pending(self) -> bool:
        return self.pending is not None


class EditService:
    """Session store wired to an inference backend. Pass root=None for a
    purely in-memory store (no persistence)."""

    def __init__(self, backend, root: Path | str | None = None):
        self.backend = backend
        self.root = Path(root) if root is not None else None
        self._sessions: dict[str, EditSession] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._restore_all()

    # -- helpers

    def _lock(self, sid: str) -> threading.RLock:
        with self._registry_lock:
            if sid not in self._locks:
                self._locks[sid] = threading.RLock()
            return self._locks[sid]

    def _get(self, sid: str) -> EditSession:
        try:
            return self._sessions[sid]
        except KeyError:
            raise SessionNotFound(sid) from None

    def session_ids(self) -> list[str]:
        return sorted(self._sessions)

    # -- persistence

    def _dir(self, sid: str) -> Path:
        return self.root / sid

    def _persist_request(self, req: EditRequest, into: Path) -> None:
        into.mkdir(parents=True, exist_ok=True)
        (into / "mask.png").write_bytes(mask_to_png_bytes(req.mask))
        (into / "sketch.png").write_bytes(mask_to_png_bytes(req.sketch))
        if req.reference is not None:
            (into / "reference.png").write_bytes(image_to_png_bytes(req.reference))
        meta = {
            "prompt": req.prompt,
            "seed": req.seed,
            "steps": req.steps,
            "guidance": req.guidance,
        }
        (into / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")

    @staticmethod
    def _load_request(from_dir: Path) -> EditRequest:
        meta = json.loads((from_dir / "meta.json").read_text(encoding="utf-8"))
        ref_path = from_dir / "reference.png"
        return EditRequest(
            mask=mask_from_png_bytes((from_dir / "mask.png").read_bytes()),
            sketch=mask_from_png_bytes((from_dir / "sketch.png").read_bytes()),
            reference=image_from_png_bytes(ref_path.read_bytes()) if ref_path.exists() else None,
            prompt=meta["prompt"],
            seed=meta["seed"],
            steps=meta.get("steps"),
            guidance=meta.get("guidance"),
        )

    def _persist(self, s: EditSession) -> None:
        if self.root is None:
            return
        d = self._dir(s.id)
        d.mkdir(parents=True, exist_ok=True)
        initial = d / "initial.png"
        if not initial.exists():
            initial.write_bytes(image_to_png_bytes(s.c_curr))
        (d / "c_prev.png").write_bytes(image_to_png_bytes(s.c_prev))
        (d / "c_curr.png").write_bytes(image_to_png_bytes(s.c_curr))
        temp = d / "c_temp.png"
        if s.c_temp is not None:
            temp.write_bytes(image_to_png_bytes(s.c_temp))
            self._persist_request(s.pending, d / "pending")
        else:
            temp.unlink(missing_ok=True)
        state = {
            "id": s.id,
            "edit_count": s.edit_count,
            "has_pending": s.has_pending(),
            "created": s.created,
            "updated": s.updated,
        }
        (d / "state.json").write_text(json.dumps(state, sort_keys=True), encoding="utf-8")

    def _restore_all(self) -> None:
        for state_file in sorted(self.root.glob("*/state.json")):
            d = state_file.parent
            state = json.loads(state_file.read_text(encoding="utf-8"))
            sid = state["id"]
            s = EditSession(
                id=sid,
                c_prev=image_from_png_bytes((d / "c_prev.png").read_bytes()),
                c_curr=image_from_png_bytes((d / "c_curr.png").read_bytes()),
                edit_count=state["edit_count"],
                created=state["created"],
                updated=state["updated"],
            )
            if state["has_pending"] and (d / "c_temp.png").exists():
                s.c_temp = image_from_png_bytes((d / "c_temp.png").read_bytes())
                s.pending = self._load_request(d / "pending")
            self._sessions[sid] = s

    # -- operations

    def create_session(
        self, source: RasterImage | None = None, shape: tuple[int, int] | None = None
    ) -> str:
        if (source is None) == (shape is None):
            raise ValidationFailure("supply exactly one of source image or canvas shape")
        if source is None:
            h, w = shape
            if h < 1 or w < 1:
                raise ValidationFailure(f"degenerate canvas shape {shape}")
            canvas = RasterImage(np.ones((h, w, 3)))  # blank canvas is white
        else:
            canvas = canonical(source)
        sid = uuid.uuid4().hex
        now = time.time()
        s = EditSession(id=sid, c_prev=canvas, c_curr=canvas, created=now, updated=now)
        with self._registry_lock:
            self._sessions[sid] = s
            self._locks[sid] = threading.RLock()
        self._persist(s)
        return sid

    def submit_edit(self, sid: str, req: EditRequest) -> RasterImage:
        s = self._get(sid)
        with self._lock(sid):
            if req.mask.is_empty():
                raise ValidationFailure("edit mask is empty")
            if req.mask.shape != s.c_curr.shape:
                raise ValidationFailure(
                    f"mask {req.mask.shape} does not match canvas {s.c_curr.shape}"
                )
            if req.sketch.shape != s.c_curr.shape:
                raise ValidationFailure(
                    f"sketch {req.sketch.shape} does not match canvas {s.c_curr.shape}"
                )
            # private copy with the reference snapped to the 8-bit grid, so the
            # inference input is exactly what the persisted log will reload
            req = dataclasses.replace(
                req,
                reference=canonical(req.reference) if req.reference is not None else None,
            )
            # a new submit replaces any pending proposal
            s.c_temp = self.backend(s.c_curr, req)
            s.pending = req
            s.updated = time.time()
            self._persist(s)
            return s.c_temp

    def confirm(self, sid: str) -> RasterImage:
        s = self._get(sid)
        with self._lock(sid):
            if not s.has_pending():
                raise NothingPending(sid)
            if self.root is not None:
                self._persist_request(
                    s.pending, self._dir(sid) / "edits" / f"{s.edit_count:04d}"
                )
            s.c_prev = s.c_curr
            s.c_curr = s.c_temp
            s.c_temp = None
            s.pending = None
            s.edit_count += 1
            s.updated = time.time()
            self._persist(s)
            return s.c_curr

    def reject(self, sid: str) -> RasterImage:
        s = self._get(sid)
        with self._lock(sid):
            if not s.has_pending():
                raise NothingPending(sid)
            s.c_temp = None
            s.pending = None
            s.updated = time.time()
            self._persist(s)
            return s.c_curr

    def canvas(self, sid: str) -> RasterImage:
        return self._get(sid).c_curr

    def previous_canvas(self, sid: str) -> RasterImage:
        return self._get(sid).c_prev

    def pending_part(self, sid: str, part: str):
        s = self._get(sid)
        if not s.has_pending():
            raise NothingPending(sid)
        if part == "mask":
            return s.pending.mask
        if part == "sketch":
            return s.pending.sketch
        if part == "reference":
            if s.pending.reference is None:
                raise ValidationFailure("pending edit has no reference")
            return s.pending.reference
        raise ValidationFailure(f"unknown pending part {part!r}")

    def state(self, sid: str) -> dict:
        s = self._get(sid)
        return {
            "has_pending": s.has_pending(),
            "shape": list(s.c_curr.shape),
            "edit_count": s.edit_count,
        }

    def replay(self, sid: str) -> RasterImage:
        """Fold the confirmed edit log over the initial canvas; bit-exact
        against the live current canvas for a deterministic backend."""
        if self.root is None:
            raise ValidationFailure("replay requires a persistent service root")
        d = self._dir(sid)
        if not (d / "initial.png").exists():
            raise SessionNotFound(sid)
        canvas = image_from_png_bytes((d / "initial.png").read_bytes())
        for edit_dir in sorted((d / "edits").glob("[0-9]*")) if (d / "edits").exists() else []:
            canvas = self.backend(canvas, self._load_request(edit_dir))
        return canvas


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(service: EditService) -> FastAPI:
    app = FastAPI(title="paintflow edit service")

    def png(img: RasterImage) -> Response:
        return Response(content=image_to_png_bytes(img), media_type="image/png")

    @app.exception_handler(ValidationFailure)
    async def _validation(request: Request, exc: ValidationFailure):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(SessionNotFound)
    async def _not_found(request: Request, exc: SessionNotFound):
        return JSONResponse(status_code=404, content={"detail": f"unknown session {exc}"})

    @app.exception_handler(NothingPending)
    async def _conflict(request: Request, exc: NothingPending):
        return JSONResponse(status_code=409, content={"detail": "no pending edit"})

    @app.post("/session")
    async def create_session(request: Request):
        ctype = request.headers.get("content-type", "")
        if ctype.startswith("multipart/"):
            form = await request.form()
            upload = form.get("source")
            if upload is None:
                raise ValidationFailure("multipart create requires a 'source' file")
            data = await upload.read()
            try:
                source = image_from_png_bytes(data)
            except Exception as exc:
                raise ValidationFailure(f"source is not a decodable PNG: {exc}")
            sid = service.create_session(source=source)
        else:
            try:
                body = await request.json()
            except Exception:
                raise ValidationFailure("expected multipart source or JSON shape")
            if not isinstance(body, dict) or "height" not in body or "width" not in body:
                raise ValidationFailure("JSON create requires height and width")
            sid = service.create_session(shape=(int(body["height"]), int(body["width"])))
        return {"id": sid}

    @app.post("/session/{sid}/edit")
    async def submit_edit(
        sid: str,
        mask: UploadFile,
        sketch: UploadFile,
        reference: UploadFile | None = None,
        prompt: str = Form(""),
        seed: int = Form(0),
        steps: int | None = Form(None),
        guidance: float | None = Form(None),
    ):
        try:
            req = EditRequest(
                mask=mask_from_png_bytes(await mask.read()),
                sketch=mask_from_png_bytes(await sketch.read()),
                reference=(
                    image_from_png_bytes(await reference.read()) if reference is not None else None
                ),
                prompt=prompt,
                seed=seed,
                steps=steps,
                guidance=guidance,
            )
        except ValueError as exc:
            raise ValidationFailure(f"bad edit payload: {exc}")
        return png(service.submit_edit(sid, req))

    @app.post("/session/{sid}/confirm")
    async def confirm(sid: str):
        return png(service.confirm(sid))

    @app.post("/session/{sid}/reject")
    async def reject(sid: str):
        return png(service.reject(sid))

    @app.get("/session/{sid}/canvas")
    async def canvas(sid: str):
        return png(service.canvas(sid))

    @app.get("/session/{sid}/state")
    async def state(sid: str):
        return service.state(sid)

    @app.get("/session/{sid}/pending/{part}")
    async def pending_part(sid: str, part: str):
        obj = service.pending_part(sid, part)
        if isinstance(obj, BinaryMask):
            return Response(content=mask_to_png_bytes(obj), media_type="image/png")
        return png(obj)

    return app
