"""HTTP synthesis service: JSON-over-HTTP with per-instance style control.

Maps travel as lossless PNG payloads (base64) or as row-major run-length
JSON; every error path returns {code, message, field}. The model and catalog
are immutable once loaded, so requests are handled concurrently with a
bounded admission counter for backpressure.
"""
from __future__ import annotations

import base64
import io
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .arch import parse_arch
from .data import InstanceMap, LabelMap, image_from_unit_range
from .encoder import StyleSelectionError
from .synthesis import SynthesisEngine


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.field = field

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=self.status,
            content={"code": self.code, "message": str(self), "field": self.field},
        )


# ---------------------------------------------------------------------------
# Payload codecs
# ---------------------------------------------------------------------------

def encode_png_b64(array: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(payload: str, field: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
        img = Image.open(io.BytesIO(raw))
        return np.array(img)
    except Exception as exc:
        raise ServiceError(400, "bad_payload", f"undecodable PNG: {exc}", field)


def encode_rle(grid: np.ndarray) -> dict:
    """Row-major run-length encoding: {height, width, runs: [[value, count]...]}."""
    flat = grid.reshape(-1)
    runs: list[list[int]] = []
    if flat.size:
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [flat.size]])
        runs = [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]
    return {"height": int(grid.shape[0]), "width": int(grid.shape[1]), "runs": runs}


def decode_rle(payload: dict, field: str) -> np.ndarray:
    try:
        h, w = int(payload["height"]), int(payload["width"])
        runs = payload["runs"]
    except Exception as exc:
        raise ServiceError(400, "bad_payload", f"malformed RLE: {exc}", field)
    total = 0
    pieces = []
    try:
        for value, count in runs:
            count = int(count)
            if count <= 0:
                raise ValueError("run count must be positive")
            pieces.append(np.full(count, int(value), dtype=np.int64))
            total += count
    except Exception as exc:
        raise ServiceError(400, "bad_payload", f"malformed RLE runs: {exc}", field)
    if total != h * w:
        raise ServiceError(
            400, "bad_payload",
            f"RLE covers {total} pixels, expected {h * w}", field)
    flat = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    return flat.reshape(h, w)


def decode_map(payload, field: str) -> np.ndarray:
    if isinstance(payload, dict) and "png_b64" in payload:
        return decode_png_b64(payload["png_b64"], field)
    if isinstance(payload, dict) and "rle" in payload:
        return decode_rle(payload["rle"], field)
    raise ServiceError(400, "bad_payload",
                       "expected {png_b64: ...} or {rle: ...}", field)


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------

class WorkLimiter:
    """Non-blocking admission counter; full queue means immediate 429."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._active = 0
        self._lock = threading.Lock()

    def acquire(self) -> bool:
        with self._lock:
            if self._active >= self.capacity:
                return False
            self._active += 1
            return True

    def release(self):
        with self._lock:
            self._active -= 1


def create_app(bundle_path=None, catalog_path=None,
               max_size: tuple[int, int] = (256, 512),
               queue_capacity: int = 4,
               assets_dir: str | Path | None = None) -> FastAPI:
    """Build the service; with bundle_path=None it starts in 'loading' state."""
    app = FastAPI(title="semsynth")
    app.state.engine = None
    app.state.max_size = max_size
    app.state.limiter = WorkLimiter(queue_capacity)
    if bundle_path is not None:
        app.state.engine = SynthesisEngine.from_bundle(bundle_path, catalog_path)

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return exc.response()

    def engine_or_503() -> SynthesisEngine:
        engine = app.state.engine
        if engine is None:
            raise ServiceError(503, "model_not_loaded", "model is still loading")
        return engine

    @app.get("/health")
    def health():
        status = "ok" if app.state.engine is not None else "loading"
        return {"status": status}

    @app.get("/meta")
    def meta():
        engine = engine_or_503()
        arch = dict(engine.models.arch)
        for text in arch.values():
            if text:
                parse_arch(text)  # sanity: stored strings stay parseable
        return {
            "num_classes": engine.num_classes,
            "arch": arch,
            "generator_mode": engine.config.generator_mode,
            "uses_styles": engine.uses_styles,
            "max_size": list(app.state.max_size),
            "full_resolution": list(engine.config.full_resolution),
            "class_names": ["sky", "ground", "disc", "rect"][: engine.num_classes],
        }

    @app.get("/styles")
    def styles(request: Request):
        engine = engine_or_503()
        raw = request.query_params.get("class")
        if raw is None:
            raise ServiceError(400, "missing_parameter", "class query parameter required",
                               "class")
        try:
            class_id = int(raw)
        except ValueError:
            raise ServiceError(400, "bad_parameter", f"class must be an integer: {raw!r}",
                               "class")
        if engine.catalog is None or class_id not in engine.catalog.centers:
            raise ServiceError(404, "unknown_class",
                               f"no style catalog entry for class {class_id}", "class")
        centers = engine.catalog.centers[class_id]
        return {
            "class": class_id,
            "centers": [[float(v) for v in row] for row in centers],
            "counts": engine.catalog.counts.get(class_id, []),
        }

    @app.post("/synthesize")
    def synthesize(body: dict):
        engine = engine_or_503()
        if not app.state.limiter.acquire():
            raise ServiceError(429, "queue_full", "synthesis queue is full")
        try:
            return _synthesize(engine, body)
        finally:
            app.state.limiter.release()

    def _synthesize(engine: SynthesisEngine, body: dict):
        t0 = time.monotonic()
        if "label" not in body or "instance" not in body:
            raise ServiceError(400, "missing_field",
                               "label and instance maps are required",
                               "label" if "label" not in body else "instance")
        label_grid = decode_map(body["label"], "label")
        inst_grid = decode_map(body["instance"], "instance")
        if label_grid.ndim != 2 or inst_grid.ndim != 2:
            raise ServiceError(400, "bad_payload", "maps must decode to 2-D grids",
                               "label" if label_grid.ndim != 2 else "instance")
        label_grid = label_grid.astype(np.int32)
        inst_grid = inst_grid.astype(np.int32)
        if label_grid.shape != inst_grid.shape:
            raise ServiceError(400, "dim_mismatch",
                               f"label {label_grid.shape} vs instance {inst_grid.shape}",
                               "instance")
        h, w = label_grid.shape
        max_h, max_w = app.state.max_size
        if h < 32 or w < 32 or h % 32 or w % 32:
            raise ServiceError(400, "bad_dims",
                               f"dims {h}x{w} must be positive and divisible by 32",
                               "label")
        if h > max_h or w > max_w:
            raise ServiceError(400, "too_large",
                               f"dims {h}x{w} exceed the configured maximum "
                               f"{max_h}x{max_w}", "label")
        if label_grid.min() < 0 or label_grid.max() >= engine.num_classes:
            raise ServiceError(422, "unknown_class",
                               f"label IDs must lie in [0, {engine.num_classes})",
                               "label")
        if inst_grid.min() < 0:
            raise ServiceError(400, "bad_payload", "instance IDs must be >= 0",
                               "instance")

        label = LabelMap(grid=label_grid, num_classes=engine.num_classes)
        instance = InstanceMap(grid=inst_grid)
        seed = int(body.get("seed", 0))
        selection = {}
        for key, choice in (body.get("styles") or {}).items():
            try:
                selection[int(key)] = choice
            except ValueError:
                raise ServiceError(422, "bad_selection",
                                   f"instance key {key!r} is not an integer", "styles")
        try:
            styles = engine.resolve_styles(label, instance, selection, seed=seed) \
                if engine.uses_styles else None
        except StyleSelectionError as exc:
            raise ServiceError(422, "bad_selection", str(exc), "styles")
        image = engine.synthesize(label, instance, styles)
        elapsed_ms = (time.monotonic() - t0) * 1000.0
        return {
            "image": {"png_b64": encode_png_b64(image_from_unit_range(image))},
            "timing_ms": elapsed_ms,
            "styles_used": {
                str(k): [float(v) for v in vec] for k, vec in (styles or {}).items()
            },
            "seed": seed,
        }

    if assets_dir is not None and Path(assets_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(assets_dir), html=True), name="editor")

    return app
