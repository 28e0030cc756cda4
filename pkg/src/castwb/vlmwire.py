"""HTTP/JSON protocol between the solver and an external cast-judging service.

Two endpoints:

``POST /v1/priors``
    body ``{"image": <base64 PNG>}``, reply ``{"items": [{object, location,
    expected_color, reason}, ...]}`` with 2 to 6 items.
``POST /v1/cast``
    body ``{"image", "priors", "prompt_template_id", "iteration"}``, reply
    ``{"cast": "red" | "green" | "blue"}``.

Requests may carry ``X-Scene-Id`` and ``X-Current-Estimate`` headers. They
exist for the mock server only; real services must ignore unknown headers.
"""
from __future__ import annotations

import base64
import binascii
import json
import logging
import string
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import cv2
import httpx
import numpy as np

from .chroma import CASTS, Cast, DomainError, normalize
from .imaging import SrgbImage
from .oracle import (
    PLACEHOLDER_PRIOR,
    AssessContext,
    CastOracle,
    ColorPrior,
    OracleError,
    PriorItem,
    gt_residual_label,
)
from .scene import META_NAME, SceneError, SceneMeta, list_scene_dirs

log = logging.getLogger(__name__)

CAST_PATH = "/v1/cast"
PRIORS_PATH = "/v1/priors"
SCENE_HEADER = "X-Scene-Id"
ESTIMATE_HEADER = "X-Current-Estimate"
MAX_REQUEST_BYTES = 4 * 1024 * 1024
PRIOR_MIN, PRIOR_MAX = 2, 6
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

DEFAULT_TEMPLATE_ID = "cast-v1"
PROMPT_TEMPLATES = {
    DEFAULT_TEMPLATE_ID: (
        "The image was white-balanced with an imperfect illuminant estimate.\n"
        "Objects with known colors in this scene:\n"
        "{priors_block}\n"
        "Which light color still dominates the image? Answer with one word: red, green or blue."
    ),
    "prior-v1": (
        "List 2 to 6 objects whose true color you are confident about. For each give "
        "object, location, expected color and reason."
    ),
}
_PLACEHOLDERS = {"priors_block"}


class TemplateError(ValueError):
    pass


class WireError(OracleError):
    """Base class for everything that can go wrong talking to a remote oracle."""


class RequestTooLargeError(WireError):
    pass


class TransportError(WireError):
    """The request did not complete: connection refused, timeout, reset."""


class StatusError(TransportError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"server answered HTTP {status}: {body[:200]}")
        self.status = status


class ProtocolError(WireError):
    """The server answered, but not with a valid protocol message."""


class MalformedResponseError(ProtocolError):
    pass


class VocabularyError(ProtocolError):
    pass


class PriorBoundsError(ProtocolError):
    pass


class RequestFormatError(ValueError):
    """A request body that does not follow the schema (server side: HTTP 400)."""


# ---------------------------------------------------------------- schemas


def encode_image(image: SrgbImage) -> str:
    """8-bit PNG, base64. Quantization happens after the transfer curve."""
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(image.to_uint8()[..., ::-1]))
    if not ok:
        raise WireError("PNG encoding failed")
    return base64.b64encode(buf.tobytes()).decode("ascii")


def decode_image(b64: str) -> np.ndarray:
    """Inverse of :func:`encode_image`; returns an RGB ``uint8`` array."""
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError, TypeError) as exc:
        raise RequestFormatError(f"image is not valid base64: {exc}") from exc
    if not raw.startswith(PNG_SIGNATURE):
        raise RequestFormatError("image is not a PNG")
    arr = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_COLOR)
    if arr is None:
        raise RequestFormatError("image PNG does not decode")
    return arr[..., ::-1]


def _prior_items_from_json(items, error=RequestFormatError) -> ColorPrior:
    if not isinstance(items, list):
        raise error("priors must be a list")
    out = []
    for item in items:
        if not isinstance(item, dict):
            raise error("each prior item must be an object")
        fields = {}
        for key in ("object", "location", "expected_color", "reason"):
            value = item.get(key)
            if not isinstance(value, str) or not value.strip():
                raise error(f"prior item field {key!r} must be a non-empty string")
            fields[key] = value
        out.append(PriorItem(**fields))
    return tuple(out)


@dataclass(frozen=True)
class CastRequest:
    image: str
    priors: ColorPrior = ()
    prompt_template_id: str = DEFAULT_TEMPLATE_ID
    iteration: int = 1

    def to_json(self) -> dict:
        return {
            "image": self.image,
            "priors": [p.as_dict() for p in self.priors],
            "prompt_template_id": self.prompt_template_id,
            "iteration": self.iteration,
        }

    @classmethod
    def from_json(cls, doc) -> "CastRequest":
        if not isinstance(doc, dict):
            raise RequestFormatError("request body must be a JSON object")
        image = doc.get("image")
        if not isinstance(image, str):
            raise RequestFormatError("image must be a base64 string")
        decode_image(image)
        template = doc.get("prompt_template_id")
        if not isinstance(template, str):
            raise RequestFormatError("prompt_template_id must be a string")
        iteration = doc.get("iteration")
        if not isinstance(iteration, int) or isinstance(iteration, bool) or iteration < 1:
            raise RequestFormatError("iteration must be an integer >= 1")
        return cls(image, _prior_items_from_json(doc.get("priors", [])), template, iteration)


@dataclass(frozen=True)
class CastResponse:
    cast: str

    @classmethod
    def parse(cls, doc) -> Cast:
        if not isinstance(doc, dict) or "cast" not in doc:
            raise MalformedResponseError(f"cast response must be an object with 'cast': {doc!r}")
        value = doc["cast"]
        if not isinstance(value, str) or value not in {c.value for c in CASTS}:
            raise VocabularyError(f"cast {value!r} is not one of red, green, blue")
        return Cast(value)


@dataclass(frozen=True)
class PriorRequest:
    image: str

    def to_json(self) -> dict:
        return {"image": self.image}

    @classmethod
    def from_json(cls, doc) -> "PriorRequest":
        if not isinstance(doc, dict) or not isinstance(doc.get("image"), str):
            raise RequestFormatError("prior request must be an object with an 'image' string")
        decode_image(doc["image"])
        return cls(doc["image"])


@dataclass(frozen=True)
class PriorResponse:
    items: ColorPrior

    def to_json(self) -> dict:
        return {"items": [p.as_dict() for p in self.items]}

    @classmethod
    def parse(cls, doc) -> ColorPrior:
        if not isinstance(doc, dict) or "items" not in doc:
            raise MalformedResponseError("prior response must be an object with 'items'")
        items = _prior_items_from_json(doc["items"], error=PriorBoundsError)
        if not PRIOR_MIN <= len(items) <= PRIOR_MAX:
            raise PriorBoundsError(f"expected {PRIOR_MIN} to {PRIOR_MAX} prior items, got {len(items)}")
        return items


def render_prompt(template: str, priors: ColorPrior) -> str:
    """Fill ``{priors_block}`` with one line per prior item.

    Templates without placeholders are returned verbatim.
    """
    try:
        fields = [name for _, name, _, _ in string.Formatter().parse(template) if name is not None]
    except ValueError as exc:
        raise TemplateError(str(exc)) from exc
    unknown = set(fields) - _PLACEHOLDERS
    if unknown:
        raise TemplateError(f"unknown placeholders: {', '.join(sorted(unknown))}")
    if not fields:
        return template
    block = "\n".join(
        f"{p.object} @ {p.location}: expected {p.expected_color} ({p.reason})" for p in priors
    )
    return template.format(priors_block=block)


# ---------------------------------------------------------------- client


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: float = 0.05


class CastClient:
    """Thread-safe client; at most ``max_in_flight`` concurrent requests."""

    def __init__(
        self,
        endpoint: str,
        retry: RetryPolicy | None = None,
        max_in_flight: int = 8,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.retry = retry or RetryPolicy()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._http = httpx.Client(timeout=timeout)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post_once(self, path: str, body: bytes, headers: dict):
        try:
            with self._slots:
                resp = self._http.post(self.endpoint + path, content=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise StatusError(resp.status_code, resp.text)
        try:
            return resp.json()
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedResponseError(f"response is not JSON: {exc}") from exc

    def _call(self, path: str, payload: dict, parse, headers=None):
        body = json.dumps(payload).encode("utf-8")
        if len(body) >= MAX_REQUEST_BYTES:
            raise RequestTooLargeError(f"request is {len(body)} bytes, limit {MAX_REQUEST_BYTES}")
        headers = {"Content-Type": "application/json", **(headers or {})}
        last = None
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                return parse(self._post_once(path, body, headers))
            except StatusError as exc:
                if exc.status < 500:
                    raise
                last = exc
            except (TransportError, ProtocolError) as exc:
                last = exc
            log.debug("attempt %d on %s failed: %s", attempt, path, last)
            if attempt < self.retry.max_attempts and self.retry.backoff_s:
                time.sleep(self.retry.backoff_s * attempt)
        raise last

    def predict_cast(self, request: CastRequest, scene_id=None, estimate=None) -> Cast:
        headers = {}
        if scene_id is not None:
            headers[SCENE_HEADER] = scene_id
        if estimate is not None:
            headers[ESTIMATE_HEADER] = ",".join(repr(float(v)) for v in estimate)
        return self._call(CAST_PATH, request.to_json(), CastResponse.parse, headers)

    def extract_priors(self, request: PriorRequest) -> ColorPrior:
        return self._call(PRIORS_PATH, request.to_json(), PriorResponse.parse)


def remote_predict_cast(endpoint: str, request: CastRequest, retry: RetryPolicy | None = None, **headers) -> Cast:
    with CastClient(endpoint, retry) as client:
        return client.predict_cast(request, **headers)


def remote_extract_priors(endpoint: str, request: PriorRequest, retry: RetryPolicy | None = None) -> ColorPrior:
    with CastClient(endpoint, retry) as client:
        return client.extract_priors(request)


class RemoteOracle(CastOracle):
    """Cast oracle backed by an HTTP service."""

    supports_priors = True

    def __init__(self, client: CastClient | str, template_id: str = DEFAULT_TEMPLATE_ID):
        self.client = CastClient(client) if isinstance(client, str) else client
        self.template_id = template_id

    def assess(self, image, priors, context: AssessContext):
        req = CastRequest(encode_image(image), tuple(priors), self.template_id, context.iteration)
        return self.client.predict_cast(req, scene_id=context.scene_id, estimate=context.estimate)

    def extract_priors(self, image, context=None):
        return self.client.extract_priors(PriorRequest(encode_image(image)))


# ---------------------------------------------------------------- mock server


class _SceneIndex:
    def __init__(self, root: Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._names = {p.name for p in list_scene_dirs(self.root)}
        self._gt: dict[str, np.ndarray] = {}

    def gt(self, scene_id: str) -> np.ndarray | None:
        with self._lock:
            if scene_id in self._gt:
                return self._gt[scene_id]
            if scene_id not in self._names:
                return None
            doc = json.loads((self.root / scene_id / META_NAME).read_text())
            gt = normalize(SceneMeta.from_json(doc).illuminant_gt)
            self._gt[scene_id] = gt
            return gt


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # Headers and body go out in separate writes; without this, keep-alive
    # clients stall on delayed ACKs.
    disable_nagle_algorithm = True
    server: "MockServer"

    def log_message(self, fmt, *args):
        log.debug("mock %s - " + fmt, self.address_string(), *args)

    def _reply(self, status: int, doc: dict):
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_REQUEST_BYTES:
            raise RequestFormatError("request body too large")
        raw = self.rfile.read(length)
        try:
            return json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise RequestFormatError(f"body is not JSON: {exc}") from exc

    def do_POST(self):
        try:
            if self.path == CAST_PATH:
                self._reply(*self.server.answer_cast(self._body(), self.headers))
            elif self.path == PRIORS_PATH:
                PriorRequest.from_json(self._body())
                self._reply(HTTPStatus.OK, PriorResponse(PLACEHOLDER_PRIOR).to_json())
            else:
                self._reply(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
        except RequestFormatError as exc:
            self._reply(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        except Exception as exc:  # noqa: BLE001 - report any fault as 500
            log.exception("mock server fault")
            self._reply(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": str(exc)})


class MockServer(ThreadingHTTPServer):
    """Ground-truth-backed stand-in for a cast-judging service.

    ``/v1/cast`` looks up the scene named by ``X-Scene-Id`` under
    ``dataset_root`` and answers with the ground-truth residual label for the
    estimate in ``X-Current-Estimate``.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, dataset_root, bind_address=("127.0.0.1", 0)):
        self.scenes = _SceneIndex(dataset_root)
        super().__init__(bind_address, _Handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def answer_cast(self, doc, headers):
        req = CastRequest.from_json(doc)
        if req.prompt_template_id not in PROMPT_TEMPLATES:
            raise RequestFormatError(f"unknown prompt template {req.prompt_template_id!r}")
        render_prompt(PROMPT_TEMPLATES[req.prompt_template_id], req.priors)
        scene_id = headers.get(SCENE_HEADER)
        if not scene_id:
            raise RequestFormatError(f"missing {SCENE_HEADER} header")
        raw_est = headers.get(ESTIMATE_HEADER)
        try:
            est = normalize([float(v) for v in raw_est.split(",")])
        except (AttributeError, ValueError, DomainError) as exc:
            raise RequestFormatError(f"bad or missing {ESTIMATE_HEADER} header") from exc
        try:
            gt = self.scenes.gt(scene_id)
        except (SceneError, OSError, json.JSONDecodeError) as exc:
            return HTTPStatus.INTERNAL_SERVER_ERROR, {"error": f"scene {scene_id}: {exc}"}
        if gt is None:
            return HTTPStatus.NOT_FOUND, {"error": f"unknown scene {scene_id!r}"}
        return HTTPStatus.OK, {"cast": gt_residual_label(gt, est).value}

    def start(self) -> "MockServer":
        self._thread = threading.Thread(
            target=self.serve_forever, kwargs={"poll_interval": 0.05}, name="mock-vlm", daemon=True
        )
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def mock_server(dataset_root, bind_address=("127.0.0.1", 0)) -> MockServer:
    return MockServer(dataset_root, bind_address)
