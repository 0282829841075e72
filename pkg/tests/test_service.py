"""CLI commands and the render service, driven through their public surfaces."""

import dataclasses
import io
import json
import os
import struct
import time

import jsonschema
import numpy as np
import pytest
from PIL import Image
from fastapi.testclient import TestClient

from trava.checkpoint import save_checkpoint
from trava.lightkit import read_pfm, write_pfm, write_rgbe
from trava.service import (FRAME_FORMAT_PNG, RenderEngine, apply_message,
                           build_app, main)
from trava.service.state import _parse_light

_SCHEMA = json.load(open(os.path.join(os.path.dirname(__file__), "..",
                                      "docs", "stream_schema.json")))


def _check(kind: str, payload) -> None:
    jsonschema.validate(payload, {**_SCHEMA["definitions"][kind],
                                  "definitions": _SCHEMA["definitions"]})


def _send(ws, msg) -> None:
    _check("state", msg)
    ws.send_text(json.dumps(msg))


def _frame(ws):
    blob = ws.receive_bytes()
    fid, w, h, fmt = struct.unpack("<IIII", blob[:16])
    img = np.asarray(Image.open(io.BytesIO(blob[16:])))
    return fid, w, h, fmt, img


# ---------------------------------------------------------------------------
# fixtures: one tiny capture and a briefly trained checkpoint


@pytest.fixture(scope="module")
def capture_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("svc") / "data")
    rc = main(["synth", "--out", out, "--frames", "1", "--eval", "1",
               "--resolution", "16", "--lights", "24", "--seed", "0"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(capture_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("svc") / "run")
    rc = main(["train", "--config", "configs/smoke.cfg",
               "--dataset-dir", capture_dir, "--out-dir", out, "--steps", "2"])
    assert rc == 0
    return os.path.join(out, "ckpt_000002.trvc")


@pytest.fixture(scope="module")
def envdir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("envs"))
    warm = np.full((8, 16, 3), 0.3, dtype=np.float32)
    warm[:, :8, 0] = 0.9
    write_pfm(os.path.join(d, "warm.pfm"), warm)
    cool = np.full((4, 8, 3), 0.2, dtype=np.float32)
    cool[:, :, 2] = 1.4
    write_rgbe(os.path.join(d, "cool.hdr"), cool)
    return d


@pytest.fixture(scope="module")
def engine(checkpoint, envdir):
    return RenderEngine(checkpoint, envdir=envdir)


@pytest.fixture(scope="module")
def client(engine):
    return TestClient(build_app(engine))


# ---------------------------------------------------------------------------
# CLI


class TestCli:
    def test_synth_layout(self, capture_dir):
        names = set(os.listdir(capture_dir))
        assert {"manifest.csv", "calib.txt", "rig.txt"} <= names

    def test_unknown_flag_exits_with_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["render", "--peanuts"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_runtime_errors_have_stable_prefix(self, tmp_path, capsys):
        rc = main(["export", "--checkpoint", str(tmp_path / "absent.trvc")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")

    def test_train_twice_identical_bytes(self, capture_dir, tmp_path):
        out = str(tmp_path / "run")
        argv = ["train", "--config", "configs/smoke.cfg", "--dataset-dir",
                capture_dir, "--out-dir", out, "--steps", "4"]
        assert main(argv) == 0
        first = open(os.path.join(out, "ckpt_000004.trvc"), "rb").read()
        assert main(argv) == 0
        second = open(os.path.join(out, "ckpt_000004.trvc"), "rb").read()
        assert first == second

    def test_render_olat_alias_matches_vector_file(self, checkpoint, tmp_path):
        a = str(tmp_path / "olat.png")
        assert main(["render", "--checkpoint", checkpoint, "--out", a,
                     "--light", "olat:5"]) == 0
        one_hot = np.zeros(24)
        one_hot[5] = 0.22
        vec_file = str(tmp_path / "onehot.txt")
        np.savetxt(vec_file, one_hot)
        b = str(tmp_path / "vec.png")
        assert main(["render", "--checkpoint", checkpoint, "--out", b,
                     "--light", vec_file]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_render_pfm_is_linear_preclip(self, checkpoint, tmp_path):
        png = str(tmp_path / "f.png")
        pfm = str(tmp_path / "f.pfm")
        assert main(["render", "--checkpoint", checkpoint, "--out", png,
                     "--pfm", pfm, "--exposure", "2.0"]) == 0
        linear = read_pfm(pfm)
        assert np.isfinite(linear).all() and linear.max() > 0
        shown = np.asarray(Image.open(png), dtype=np.float64)
        expect = np.round(255.0 * np.clip(linear * 2.0, 0.0, 1.0))
        np.testing.assert_array_equal(shown, expect)

    def test_render_bad_light_spec(self, checkpoint, tmp_path, capsys):
        rc = main(["render", "--checkpoint", checkpoint,
                   "--out", str(tmp_path / "x.png"), "--light", "bogus:7"])
        assert rc == 1
        assert "light spec" in capsys.readouterr().err

    def test_relight_sequence_and_homogeneity(self, checkpoint, envdir, tmp_path):
        env_path = os.path.join(envdir, "warm.pfm")
        out1 = str(tmp_path / "seq1")
        assert main(["relight", "--checkpoint", checkpoint, "--env", env_path,
                     "--out", out1, "--frames", "2"]) == 0
        assert sorted(os.listdir(out1)) == ["frame_000.pfm", "frame_000.png",
                                            "frame_001.pfm", "frame_001.png"]
        doubled = str(tmp_path / "double.pfm")
        write_pfm(doubled, read_pfm(env_path) * 2.0)
        out2 = str(tmp_path / "seq2")
        assert main(["relight", "--checkpoint", checkpoint, "--env", doubled,
                     "--out", out2, "--frames", "2"]) == 0
        for k in range(2):
            one = read_pfm(os.path.join(out1, f"frame_{k:03d}.pfm"))
            two = read_pfm(os.path.join(out2, f"frame_{k:03d}.pfm"))
            assert one.max() > 0
            np.testing.assert_array_equal(two, 2.0 * one)

    def test_relight_is_deterministic(self, checkpoint, envdir, tmp_path):
        env_path = os.path.join(envdir, "warm.pfm")
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            assert main(["relight", "--checkpoint", checkpoint, "--env",
                         env_path, "--out", out, "--frames", "1"]) == 0
            outs.append(open(os.path.join(out, "frame_000.png"), "rb").read())
        assert outs[0] == outs[1]

    def test_export_report(self, checkpoint, capsys):
        assert main(["export", "--checkpoint", checkpoint]) == 0
        out = capsys.readouterr().out
        assert "step 2" in out
        assert "arch/latent 8" in out
        assert "cfg/n_prim 2" in out
        assert "param=" in out

    def test_render_blend_weights(self, checkpoint, tmp_path):
        png = str(tmp_path / "blend.png")
        weights = ",".join(["0.3"] * 51)
        assert main(["render", "--checkpoint", checkpoint, "--out", png,
                     "--blend", weights]) == 0
        assert os.path.getsize(png) > 0


# ---------------------------------------------------------------------------
# engine


class TestEngine:
    def test_requires_trainer_extras(self, tmp_path):
        from test_training import tiny_net
        bare = str(tmp_path / "bare.trvc")
        save_checkpoint(bare, tiny_net())
        with pytest.raises(ValueError, match="rig"):
            RenderEngine(bare)

    def test_meta_matches_checkpoint(self, engine):
        meta = engine.meta()
        _check("meta", meta)
        assert meta["latent_dim"] == int(engine.metadata["arch/latent"])
        assert meta["n_lights"] == 24
        assert meta["envmaps"] == ["cool", "warm"]

    def test_initial_state_is_full_on(self, engine):
        state = engine.initial_state()
        assert state.light.shape == (3, 24)
        assert np.allclose(state.light, 0.22)
        assert state.blend is None and state.dist > 0

    def test_render_deterministic(self, engine):
        state = engine.initial_state()
        a = engine.render_state(state)
        b = engine.render_state(state)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (16, 16, 3) and a.max() > 0

    def test_zero_light_is_black(self, engine):
        state = dataclasses.replace(engine.initial_state(),
                                    light=np.zeros((3, 24), dtype=np.float32))
        assert engine.render_state(state).max() == 0.0

    def test_env_vector_cached_and_positive(self, engine):
        v = engine.env_vector("warm")
        assert v.shape == (3, 24) and (v >= 0).all() and v.max() > 0
        assert engine.env_vector("warm") is v
        with pytest.raises(ValueError, match="unknown environment map"):
            engine.env_vector("nope")

    def test_duplicate_env_ids_rejected(self, checkpoint, tmp_path):
        d = str(tmp_path / "dup")
        os.makedirs(d)
        px = np.full((4, 8, 3), 0.1, dtype=np.float32)
        write_pfm(os.path.join(d, "sky.pfm"), px)
        write_rgbe(os.path.join(d, "sky.hdr"), px)
        with pytest.raises(ValueError, match="duplicate"):
            RenderEngine(checkpoint, envdir=d)

    def test_thread_cap_from_environment(self, checkpoint, monkeypatch):
        monkeypatch.setenv("TRAVA_THREADS", "2")
        eng = RenderEngine(checkpoint)
        assert eng.pool._max_workers == 2
        monkeypatch.setenv("TRAVA_THREADS", "0")
        with pytest.raises(ValueError, match="TRAVA_THREADS"):
            RenderEngine(checkpoint)

    def test_blend_overrides_geometry(self, engine):
        base = engine.initial_state()
        decoded = engine.render_state(base)
        blended = engine.render_state(dataclasses.replace(
            base, blend=np.full(51, 0.5, dtype=np.float32)))
        assert not np.array_equal(decoded, blended)


# ---------------------------------------------------------------------------
# state messages


class TestSessionState:
    @pytest.mark.parametrize("msg,text", [
        ({"type": "nope"}, "unknown message type"),
        ({"type": "state", "zz": []}, "unknown state field"),
        ({"type": "state", "z": [0.0] * 3}, "must have 8 entries"),
        ({"type": "state", "z": [0.0] * 8, "blend": [0.0] * 51},
         "mutually exclusive"),
        ({"type": "state", "light": {"vector": [0.0] * 5}}, "24 entries"),
        ({"type": "state", "light": {"vector": [-1.0] + [0.0] * 23}},
         "non-negative"),
        ({"type": "state", "light": {"vector": [0.0] * 24, "gain": 2}},
         "env mode only"),
        ({"type": "state", "light": {"vector": [0.0] * 24, "env": "warm"}},
         "not both"),
        ({"type": "state", "light": {"sun": 1}}, "unknown light field"),
        ({"type": "state", "light": {}}, "vector or an env"),
        ({"type": "state", "camera": {"dist": 0}}, "must be positive"),
        ({"type": "state", "camera": {"roll": 1}}, "unknown camera field"),
        ({"type": "state", "exposure": -0.5}, "non-negative"),
        ({"type": "state", "exposure": "bright"}, "must be a number"),
    ])
    def test_rejections(self, engine, msg, text):
        with pytest.raises(ValueError, match=text):
            apply_message(engine.initial_state(), msg, engine)

    def test_partial_update_preserves_rest(self, engine):
        state = engine.initial_state()
        state = apply_message(state, {"type": "state", "z": [0.5] * 8}, engine)
        state = apply_message(state, {"type": "state", "exposure": 3.0}, engine)
        assert state.exposure == 3.0
        assert np.allclose(state.z, 0.5)
        assert np.allclose(state.light, 0.22)

    def test_blend_then_z_switches_source(self, engine):
        state = apply_message(engine.initial_state(),
                              {"type": "state", "blend": [0.1] * 51}, engine)
        assert state.blend is not None
        state = apply_message(state, {"type": "state", "z": [0.0] * 8}, engine)
        assert state.blend is None

    def test_env_gain_scales_vector(self, engine):
        base = _parse_light({"env": "warm", "gain": 1.0}, engine)
        twice = _parse_light({"env": "warm", "gain": 2.0}, engine)
        np.testing.assert_allclose(twice, 2.0 * base, rtol=1e-6)


# ---------------------------------------------------------------------------
# HTTP + WebSocket service


class TestService:
    def test_meta_endpoint(self, client, engine):
        payload = client.get("/meta").json()
        _check("meta", payload)
        assert payload == engine.meta()

    def test_thumbs(self, client):
        res = client.get("/envmaps/warm/thumb")
        assert res.status_code == 200
        assert res.headers["content-type"] == "image/png"
        assert res.content[:8] == b"\x89PNG\r\n\x1a\n"
        assert client.get("/envmaps/absent/thumb").status_code == 404

    def test_stream_renders_frames(self, client):
        with client.websocket_connect("/stream") as ws:
            _send(ws, {"type": "state", "z": [0.0] * 8})
            fid, w, h, fmt, img = _frame(ws)
            assert (fid, w, h, fmt) == (0, 16, 16, FRAME_FORMAT_PNG)
            assert img.shape == (16, 16, 3) and img.max() > 0
            _send(ws, {"type": "state", "camera": {"az": 25.0}})
            fid2, _, _, _, img2 = _frame(ws)
            assert fid2 == 1
            assert not np.array_equal(img, img2)

    def test_malformed_json_keeps_socket_open(self, client):
        with client.websocket_connect("/stream") as ws:
            ws.send_text("{not json")
            err = ws.receive_json()
            _check("error", err)
            assert "bad json" in err["message"]
            _send(ws, {"type": "state", "exposure": 1.0})
            fid, *_ = _frame(ws)
            assert fid == 0

    def test_negative_light_rejected(self, client):
        with client.websocket_connect("/stream") as ws:
            bad = [0.0] * 24
            bad[3] = -0.2
            ws.send_text(json.dumps({"type": "state",
                                     "light": {"vector": bad}}))
            err = ws.receive_json()
            _check("error", err)
            assert "non-negative" in err["message"]
            _send(ws, {"type": "state", "light": {"vector": [0.1] * 24}})
            _frame(ws)

    def test_zero_light_equals_background_plate(self, client):
        # the service composites over a black plate, so no light = no image
        with client.websocket_connect("/stream") as ws:
            _send(ws, {"type": "state", "light": {"vector": [0.0] * 24}})
            *_, img = _frame(ws)
            assert img.max() == 0

    def test_env_mode_and_unknown_env(self, client):
        with client.websocket_connect("/stream") as ws:
            _send(ws, {"type": "state", "light": {"env": "warm", "gain": 1.0}})
            *_, img = _frame(ws)
            assert img.max() > 0
            _send(ws, {"type": "state", "light": {"env": "nothere"}})
            err = ws.receive_json()
            assert "unknown environment map" in err["message"]

    def test_exposure_scales_displayed_frame(self, client):
        with client.websocket_connect("/stream") as ws:
            _send(ws, {"type": "state", "exposure": 0.25})
            *_, dim = _frame(ws)
            _send(ws, {"type": "state", "exposure": 0.5})
            *_, bright = _frame(ws)
            # quantized display pixels double with exposure while unclipped
            assert np.all(np.abs(bright.astype(int) - 2 * dim.astype(int)) <= 1)
            assert bright.mean() > dim.mean() > 0

    def test_backtoback_states_coalesce(self, checkpoint, envdir):
        rendered = []

        class SlowEngine(RenderEngine):
            def render_png(self, state):
                time.sleep(0.3)
                rendered.append(round(state.exposure, 3))
                return super().render_png(state)

        slow = SlowEngine(checkpoint, envdir=envdir)
        final = dataclasses.replace(slow.initial_state(), exposure=0.5)
        expected = RenderEngine.render_png(slow, final)
        with TestClient(build_app(slow)) as client:
            with client.websocket_connect("/stream") as ws:
                for k in range(1, 6):
                    _send(ws, {"type": "state", "exposure": k / 10})
                frames = 0
                while True:
                    blob = ws.receive_bytes()
                    frames += 1
                    if blob[16:] == expected:
                        break
        # five updates, at most two renders: the one already in flight when
        # the burst arrived plus the newest state; the rest were coalesced
        assert frames <= 2
        assert len(rendered) == frames
        assert rendered[-1] == 0.5
