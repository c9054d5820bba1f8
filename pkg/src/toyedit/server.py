"""HTTP service exposing generate/edit endpoints over one model snapshot.

The service is stateless: every request carries its own seed, so identical
request bodies produce identical responses. The snapshot is read-only;
restart to change checkpoints.
"""

from __future__ import annotations

import base64
import binascii
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from toyedit import diffusion as D
from toyedit import storage, world
from toyedit.align import edit_sample


def _error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


class ApiError(Exception):
    def __init__(self, status: int, error: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.error = error
        self.detail = detail


def _require(body: dict, key: str, kind, default=None):
    if key not in body:
        if default is not None:
            return default
        raise ApiError(400, "missing_field", f"request body needs {key!r}")
    try:
        return kind(body[key])
    except (TypeError, ValueError):
        raise ApiError(400, "bad_field", f"field {key!r} must be {kind.__name__}")


def _decode_png_b64(s: str):
    try:
        raw = base64.b64decode(s, validate=True)
    except (binascii.Error, ValueError):
        raise ApiError(400, "bad_base64", "image is not valid base64")
    try:
        img = storage.decode_image(raw)
    except storage.ImageDecodeError as exc:
        raise ApiError(400, "bad_image", str(exc))
    return img


def _parse_factors(body: dict) -> world.FactorVector:
    if "caption" in body:
        try:
            return world.factors_of([int(t) for t in body["caption"]])
        except (world.CaptionParseError, TypeError, ValueError) as exc:
            raise ApiError(400, "bad_caption", str(exc))
    if "factors" in body:
        spec = body["factors"]
        if not isinstance(spec, dict):
            raise ApiError(400, "bad_factors", "factors must be an object of field: value")
        try:
            return world.FactorVector(**{f: spec.get(f) for f in world.FIELDS})
        except (TypeError, ValueError) as exc:
            raise ApiError(400, "bad_factors", str(exc))
    raise ApiError(400, "missing_field", "request needs 'factors' or 'caption'")


def create_app(checkpoint_path=None, static_dir=None, n_steps: int = 50) -> FastAPI:
    app = FastAPI(title="toyedit service")
    state = {"params": None, "config": None, "meta": {}}
    schedule = None

    if checkpoint_path is not None:
        try:
            params, config, meta = storage.load_checkpoint(checkpoint_path)
            state.update(params=params, config=config, meta=meta)
            schedule = D.make_schedule(T=config.T)
        except (OSError, storage.CheckpointError):
            pass  # endpoints answer 503

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _error(exc.status, exc.error, exc.detail)

    def _model():
        if state["params"] is None:
            raise ApiError(503, "model_not_loaded", "no checkpoint is loaded")
        return state["params"], state["config"]

    @app.get("/health")
    def health():
        if state["params"] is None:
            return {"status": "no_model", "model_round": None, "config": None}
        cfg = state["config"]
        return {
            "status": "ok",
            "model_round": state["meta"].get("round"),
            "config": {"image_size": cfg.image_size, "d_model": cfg.d_model,
                       "n_layers": cfg.n_layers, "n_heads": cfg.n_heads, "T": cfg.T},
        }

    @app.get("/vocab")
    def vocab():
        return {
            "fields": {f: list(world.FIELD_VALUES[f]) for f in world.FIELDS},
            "grammar": "set <field> <value>",
        }

    @app.post("/generate")
    async def generate(request: Request):
        params, config = _model()
        body = await request.json()
        f = _parse_factors(body)
        seed = _require(body, "seed", int, default=0)
        cfg_text = _require(body, "cfg_text", float, default=3.0)
        img = D.ddim_sample(params, config, schedule, D.GuidanceConfig(w_text=cfg_text),
                            world.caption_of(f), n_steps=n_steps, seed=seed)
        return {
            "image": base64.b64encode(storage.encode_image(img)).decode("ascii"),
            "factors": {field: getattr(f, field) for field in world.FIELDS},
        }

    @app.post("/edit")
    async def edit(request: Request):
        params, config = _model()
        body = await request.json()
        if "image" not in body:
            raise ApiError(400, "missing_field", "request body needs 'image'")
        img = _decode_png_b64(body["image"])
        if img.shape != (config.image_size, config.image_size, 3):
            raise ApiError(400, "bad_size",
                           f"image must be {config.image_size}x{config.image_size} RGB, "
                           f"got {img.shape[1]}x{img.shape[0]}")
        instr_spec = body.get("instruction")
        if not isinstance(instr_spec, dict) or "field" not in instr_spec or "value" not in instr_spec:
            raise ApiError(400, "bad_instruction", "instruction must be {field, value}")
        try:
            instr = world.EditInstruction(str(instr_spec["field"]), str(instr_spec["value"]))
        except world.InstructionError as exc:
            raise ApiError(400, "bad_instruction", str(exc))
        seed = _require(body, "seed", int, default=0)
        cfg_text = _require(body, "cfg_text", float, default=3.0)
        cfg_img = _require(body, "cfg_img", float, default=1.0)
        guidance = D.GuidanceConfig(w_text=cfg_text, w_img=cfg_img)
        out = edit_sample(params, config, schedule, img, instr, guidance, seed, n_steps)
        return {
            "image": base64.b64encode(storage.encode_image(out)).decode("ascii"),
            "metrics": {
                "dir": world.direction_score(img, out, instr),
                "sim": world.image_similarity(img, out),
                "edit_success": world.edit_success(img, out, instr),
            },
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(checkpoint_path, host: str = "127.0.0.1", port: int = 8321,
          static_dir=None) -> None:
    import uvicorn

    app = create_app(checkpoint_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
