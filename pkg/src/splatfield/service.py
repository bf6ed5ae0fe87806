"""HTTP service over a fitted field: rendering, point prompts, and
open-vocabulary queries for the browser viewer.

Endpoints (JSON envelopes unless noted; all stateless and deterministic):

  GET  /scene/meta
      -> {width, height, near, far, d_seg, d_lang, label_names,
          prompt_thresholds, views: [{pose: [12 floats], held_out}],
          orbit: {radius, elevation_deg, target}}
  GET  /render?pose=r00,r01,r02,t0,r10,...   (12 floats, row-major [R|T])
      -> {width, height, image_png, alpha_png}   (base64 PNGs)
  POST /prompt {pose: [12], pixel: [x, y], thresholds: [t0 > t1 > t2]}
      -> {empty, masks: [{rle, confidence}], size: [h, w]}
  POST /query {label_set: "default"} | {labels: {names, embeddings}}
      plus pose -> {labels_png, legend: [{index, name, color}]}
  GET  /pca?head=seg|lang&pose=...
      -> {image_png}

Masks travel run-length encoded over the flattened row-major mask,
alternating run lengths and starting with the count of leading zeros:
[z0, o1, z2, o3, ...]. Mask confidence is the mean prompt similarity over
the mask's pixels.

Errors: 400 malformed request, 404 unknown path, 422 invalid pose / pixel /
thresholds, 500 with a diagnostic id (the id is also printed to stderr).
"""

from __future__ import annotations

import base64
import json
import sys
import threading
import traceback
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import metrics, rasterizer, segment, tensorio
from .cameras import CameraView, InvalidCameraError, axes_convergence_point
from .field import GaussianField
from .scene import Scene

MAX_BODY = 8 << 20


class RequestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def rle_encode(mask: np.ndarray) -> list[int]:
    """Run lengths over the flat row-major mask, starting with zeros."""
    flat = np.asarray(mask, np.uint8).reshape(-1)
    if flat.size == 0:
        return []
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], h: int, w: int) -> np.ndarray:
    out = np.zeros(h * w, dtype=np.uint8)
    pos, val = 0, 0
    for r in runs:
        if val:
            out[pos:pos + r] = 1
        pos += r
        val ^= 1
    return out.reshape(h, w)


class SplatService:
    """Read-only service over one immutable (field, scene) snapshot."""

    def __init__(self, field: GaussianField, scene: Scene, *,
                 resolution_cap: int = 256, frontend_dir: str | None = None):
        if resolution_cap < 16:
            raise ValueError("resolution cap must be >= 16")
        self.field = field
        self.scene = scene
        ref = scene.cams[0]
        scale = min(1.0, resolution_cap / max(ref.width, ref.height))
        self.width = max(16, int(round(ref.width * scale)))
        self.height = max(16, int(round(ref.height * scale)))
        self.ref_cam = ref if (self.width, self.height) == (ref.width, ref.height) \
            else ref.scaled(self.width, self.height)
        self.frontend_dir = frontend_dir
        self._server = None

    # --- camera / pose plumbing ---

    def camera_for_pose(self, pose) -> CameraView:
        arr = np.asarray(pose, dtype=np.float64)
        if arr.shape != (12,) or not np.all(np.isfinite(arr)):
            raise RequestError(422, "pose must be 12 finite floats (row-major [R|T])")
        m = arr.reshape(3, 4)
        try:
            return CameraView(self.ref_cam.K, m[:, :3], m[:, 3],
                              self.scene.near, self.scene.far,
                              self.width, self.height)
        except InvalidCameraError as exc:
            raise RequestError(422, f"invalid pose: {exc}") from exc

    @staticmethod
    def pose_floats(cam: CameraView) -> list[float]:
        return np.hstack([cam.R, cam.T[:, None]]).reshape(-1).tolist()

    # --- endpoint bodies ---

    def meta(self) -> dict:
        scene = self.scene
        centers = np.stack([c.center for c in scene.cams])
        target = axes_convergence_point(scene.cams)
        radii = np.linalg.norm(centers - target, axis=1)
        elev = float(np.rad2deg(np.mean(np.arcsin(
            np.clip((centers[:, 1] - target[1]) / radii, -1, 1)))))
        return {
            "width": self.width, "height": self.height,
            "near": scene.near, "far": scene.far,
            "d_seg": scene.d_seg, "d_lang": scene.d_lang,
            "label_names": scene.label_names,
            "prompt_thresholds": list(segment.DEFAULT_PROMPT_THRESHOLDS),
            "views": [{"pose": self.pose_floats(c), "held_out": bool(h)}
                      for c, h in zip(scene.cams, scene.held_out)],
            "orbit": {"radius": float(radii.mean()), "elevation_deg": elev,
                      "target": target.tolist()},
        }

    def render_endpoint(self, pose) -> dict:
        cam = self.camera_for_pose(pose)
        out = rasterizer.render(self.field, cam)
        # depth for display: alpha-normalized metric depth mapped over
        # [near, far], background left black
        covered = out.alpha > 1e-4
        metric = np.zeros_like(out.depth)
        metric[covered] = out.depth[covered] / out.alpha[covered]
        norm = np.clip((metric - self.scene.near)
                       / max(self.scene.far - self.scene.near, 1e-9), 0.0, 1.0)
        norm[~covered] = 0.0
        return {
            "width": cam.width, "height": cam.height,
            "image_png": base64.b64encode(
                tensorio.png_bytes(np.clip(out.color, 0.0, 1.0))).decode(),
            "alpha_png": base64.b64encode(
                tensorio.png_bytes(np.clip(out.alpha, 0.0, 1.0))).decode(),
            "depth_png": base64.b64encode(tensorio.png_bytes(norm)).decode(),
        }

    def prompt_endpoint(self, body: dict) -> dict:
        cam = self.camera_for_pose(_require(body, "pose"))
        pixel = _require(body, "pixel")
        if (not isinstance(pixel, (list, tuple)) or len(pixel) != 2
                or not all(isinstance(v, (int, float)) for v in pixel)):
            raise RequestError(422, "pixel must be [x, y]")
        x, y = int(pixel[0]), int(pixel[1])
        if not (0 <= x < cam.width and 0 <= y < cam.height):
            raise RequestError(422, f"pixel ({x},{y}) outside {cam.width}x{cam.height}")
        th = body.get("thresholds", list(segment.DEFAULT_PROMPT_THRESHOLDS))
        out = rasterizer.render(self.field, cam)
        if out.alpha[y, x] <= 0.0:
            return {"empty": True, "size": [cam.height, cam.width],
                    "masks": [{"rle": [], "confidence": 0.0}] * 3}
        try:
            masks = segment.prompt_segment(out.feat_seg, (x, y), th)
        except ValueError as exc:
            raise RequestError(422, str(exc)) from exc
        q = out.feat_seg[y, x].astype(np.float64)
        f = out.feat_seg.astype(np.float64)
        cos = (f @ q) / (np.maximum(np.linalg.norm(f, axis=-1), 1e-12)
                         * np.linalg.norm(q))
        payload = []
        for m in masks:
            conf = float(cos[m.astype(bool)].mean()) if m.any() else 0.0
            payload.append({"rle": rle_encode(m), "confidence": conf})
        return {"empty": False, "size": [cam.height, cam.width], "masks": payload}

    def query_endpoint(self, body: dict) -> dict:
        cam = self.camera_for_pose(_require(body, "pose"))
        if "labels" in body:
            spec = body["labels"]
            try:
                ls = segment.LabelSet(list(spec["names"]),
                                      np.asarray(spec["embeddings"], np.float64))
            except (KeyError, TypeError, ValueError) as exc:
                raise RequestError(422, f"bad label set: {exc}") from exc
        else:
            if self.scene.label_embeddings is None:
                raise RequestError(404, "scene has no default label set")
            ls = segment.LabelSet(self.scene.label_names, self.scene.label_embeddings)
        if ls.embeddings.shape[1] != self.scene.d_lang:
            raise RequestError(422, f"embeddings must have dim {self.scene.d_lang}")
        out = rasterizer.render(self.field, cam)
        res = segment.open_vocab_segment(out.feat_lang, ls)
        from .cli import label_color

        img = np.zeros((cam.height, cam.width, 3), dtype=np.float64)
        legend = []
        for i, name in enumerate(ls.names):
            col = label_color(i)
            img[res.labels == i] = col / 255.0
            legend.append({"index": i, "name": name, "color": col.tolist()})
        return {
            "labels_png": base64.b64encode(tensorio.png_bytes(img)).decode(),
            "legend": legend,
        }

    def pca_endpoint(self, head: str, pose) -> dict:
        cam = self.camera_for_pose(pose)
        if head not in ("seg", "lang"):
            raise RequestError(422, "head must be seg or lang")
        out = rasterizer.render(self.field, cam)
        feat = out.feat_seg if head == "seg" else out.feat_lang
        img = metrics.pca_project(feat)
        return {"image_png": base64.b64encode(tensorio.png_bytes(img)).decode()}

    # --- plumbing ---

    def make_handler(self):
        svc = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def _send(self, status: int, payload: bytes,
                      ctype: str = "application/json") -> None:
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(payload)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.end_headers()
                self.wfile.write(payload)

            def _send_json(self, status: int, obj) -> None:
                self._send(status, json.dumps(obj).encode())

            def _fail(self, status: int, message: str) -> None:
                self._send_json(status, {"error": message})

            def _guard(self, fn) -> None:
                try:
                    self._send_json(200, fn())
                except RequestError as exc:
                    self._fail(exc.status, str(exc))
                except Exception as exc:  # noqa: BLE001 - service boundary
                    diag = uuid.uuid4().hex[:12]
                    print(f"[{diag}] {type(exc).__name__}: {exc}", file=sys.stderr)
                    traceback.print_exc()
                    self._send_json(500, {"error": "internal error",
                                          "diagnostic_id": diag})

            def _query_pose(self, qs) -> list[float]:
                raw = qs.get("pose", [""])[0]
                parts = [p for p in raw.split(",") if p != ""]
                if len(parts) != 12:
                    raise RequestError(422, "pose must be 12 comma-separated floats")
                try:
                    return [float(p) for p in parts]
                except ValueError as exc:
                    raise RequestError(422, f"bad pose float: {exc}") from exc

            def do_OPTIONS(self):  # CORS preflight
                self._send(204, b"", "text/plain")

            def do_GET(self):
                url = urlparse(self.path)
                qs = parse_qs(url.query)
                if url.path == "/scene/meta":
                    self._guard(svc.meta)
                elif url.path == "/render":
                    self._guard(lambda: svc.render_endpoint(self._safe_pose(qs)))
                elif url.path == "/pca":
                    head = qs.get("head", ["seg"])[0]
                    self._guard(lambda: svc.pca_endpoint(head, self._safe_pose(qs)))
                elif svc.frontend_dir and not url.path.startswith(("/prompt", "/query")):
                    self._static(url.path)
                else:
                    self._fail(404, f"unknown resource {url.path}")

            def _safe_pose(self, qs):
                # raise inside _guard, not during routing
                return self._query_pose(qs)

            def _static(self, path: str) -> None:
                import os

                rel = "index.html" if path == "/" else path.lstrip("/")
                full = os.path.realpath(os.path.join(svc.frontend_dir, rel))
                root = os.path.realpath(svc.frontend_dir)
                if not full.startswith(root + os.sep) and full != root:
                    self._fail(404, "unknown resource")
                    return
                if not os.path.isfile(full):
                    self._fail(404, f"unknown resource {path}")
                    return
                ctype = {"html": "text/html", "js": "text/javascript",
                         "css": "text/css", "map": "application/json",
                         "png": "image/png"}.get(full.rsplit(".", 1)[-1],
                                                 "application/octet-stream")
                with open(full, "rb") as fh:
                    self._send(200, fh.read(), ctype)

            def do_POST(self):
                url = urlparse(self.path)
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    if length > MAX_BODY:
                        self._fail(400, "request body too large")
                        return
                    body = json.loads(self.rfile.read(length) or b"{}")
                    if not isinstance(body, dict):
                        raise ValueError("body must be a JSON object")
                except (ValueError, json.JSONDecodeError) as exc:
                    self._fail(400, f"malformed request: {exc}")
                    return
                if url.path == "/prompt":
                    self._guard(lambda: svc.prompt_endpoint(body))
                elif url.path == "/query":
                    self._guard(lambda: svc.query_endpoint(body))
                else:
                    self._fail(404, f"unknown resource {url.path}")

        return Handler

    def start(self, host: str = "127.0.0.1", port: int = 0):
        """Start on a background thread; returns (server, actual_port)."""
        self._server = ThreadingHTTPServer((host, port), self.make_handler())
        t = threading.Thread(target=self._server.serve_forever, daemon=True)
        t.start()
        return self._server, self._server.server_address[1]

    def serve_forever(self, host: str, port: int) -> None:
        self._server = ThreadingHTTPServer((host, port), self.make_handler())
        try:
            self._server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self._server.server_close()


def _require(body: dict, key: str):
    if key not in body:
        raise RequestError(422, f"missing field {key!r}")
    return body[key]
