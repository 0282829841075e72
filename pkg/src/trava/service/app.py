"""HTTP and WebSocket front of the render engine.

Stream protocol: the client sends JSON state messages; the server answers
with binary frames of a 16-byte little-endian header (frame id, width,
height, format code) followed by the encoded image. Per connection at most
one frame renders at a time; stale state updates coalesce (latest wins).
"""

from __future__ import annotations

import asyncio
import json
import struct

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import Response

from .engine import RenderEngine
from .state import apply_message

FRAME_FORMAT_PNG = 1
_HEADER = struct.Struct("<IIII")


def build_app(engine: RenderEngine) -> FastAPI:
    app = FastAPI(title="trava render service")

    @app.get("/meta")
    def meta() -> dict:
        return engine.meta()

    @app.get("/envmaps/{env_id}/thumb")
    def thumb(env_id: str) -> Response:
        try:
            png = engine.thumb_png(env_id)
        except KeyError:
            return Response(status_code=404,
                            content=f"unknown environment map {env_id!r}")
        return Response(content=png, media_type="image/png")

    @app.websocket("/stream")
    async def stream(ws: WebSocket) -> None:
        await ws.accept()
        state = engine.initial_state()
        # depth 1: a queued state not yet picked up is stale the moment a
        # newer message lands, so it is simply replaced
        queue: asyncio.Queue = asyncio.Queue(maxsize=1)

        async def receive() -> None:
            nonlocal state
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError as e:
                    await ws.send_json({"type": "error",
                                        "message": f"bad json: {e.msg}"})
                    continue
                try:
                    state = apply_message(state, msg, engine)
                except ValueError as e:
                    await ws.send_json({"type": "error", "message": str(e)})
                    continue
                if queue.full():
                    queue.get_nowait()
                queue.put_nowait(state)

        async def render() -> None:
            loop = asyncio.get_running_loop()
            frame_id = 0
            while True:
                snapshot = await queue.get()
                png = await loop.run_in_executor(engine.pool, engine.render_png,
                                                 snapshot)
                header = _HEADER.pack(frame_id, engine.frame_size,
                                      engine.frame_size, FRAME_FORMAT_PNG)
                await ws.send_bytes(header + png)
                frame_id += 1

        tasks = (asyncio.ensure_future(receive()), asyncio.ensure_future(render()))
        try:
            await asyncio.gather(*tasks)
        except WebSocketDisconnect:
            pass
        finally:
            for task in tasks:
                task.cancel()

    return app
