"""Grounding sources: a live HTTP model endpoint and a replay directory of recorded answers.

Both return :class:`GroundingResponse`, so downstream parsing is identical.
"""

from __future__ import annotations

import base64
import os
import time
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

import httpx

from .errors import ConnectionFailed, HttpStatus, MissingRecording, Timeout

FORMAT_TAG = "qwen-vl-tokens"
DEFAULT_INSTRUCTION = "Locate the {name} acupoint and apply moderate pressure"


@dataclass(frozen=True)
class GroundingRequest:
    instruction: str
    image: bytes
    media_type: str = "image/png"
    image_ref: str = ""
    format: str = FORMAT_TAG

    def __post_init__(self):
        if not self.instruction:
            raise ValueError("instruction must be non-empty")
        if not self.image:
            raise ValueError("image must be non-empty")

    def payload(self) -> dict:
        return {
            "instruction": self.instruction,
            "image_b64": base64.b64encode(self.image).decode("ascii"),
            "media_type": self.media_type,
            "format": self.format,
        }


@dataclass(frozen=True)
class GroundingResponse:
    raw_text: str
    latency_ms: float
    source: str  # "live" | "replay"
    attempts: int = 1


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    timeout_ms: float = 10_000.0
    retries: int = 3  # total attempts
    backoff_s: float = 0.2  # first retry delay; doubles each time

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        url = os.environ.get("HMR_GROUND_ENDPOINT")
        if not url:
            raise ValueError("HMR_GROUND_ENDPOINT is not set")
        timeout = float(os.environ.get("HMR_GROUND_TIMEOUT_MS", cls.timeout_ms))
        return cls(url=url, timeout_ms=timeout, **overrides)


def _ground_url(base: str) -> str:
    return base if base.rstrip("/").endswith("/ground") else base.rstrip("/") + "/ground"


def ground_live(request: GroundingRequest, config: EndpointConfig,
                client: httpx.Client | None = None) -> GroundingResponse:
    """POST the request and return the answer text verbatim.

    Timeouts, connection failures and 5xx statuses are retried with exponential
    backoff; the last failure is raised once attempts run out. 4xx is not retried.
    """
    url = _ground_url(config.url)
    timeout = config.timeout_ms / 1000.0
    own = client is None
    client = client or httpx.Client(timeout=timeout)
    start = time.perf_counter()
    last: Exception | None = None
    try:
        for attempt in range(1, max(config.retries, 1) + 1):
            if attempt > 1:
                time.sleep(config.backoff_s * 2 ** (attempt - 2))
            try:
                resp = client.post(url, json=request.payload(), timeout=timeout)
            except httpx.TimeoutException as exc:
                last = Timeout(f"{url}: no answer within {config.timeout_ms:g} ms")
                last.__cause__ = exc
                continue
            except httpx.TransportError as exc:
                last = ConnectionFailed(f"{url}: {exc}")
                last.__cause__ = exc
                continue
            if resp.status_code >= 500:
                last = HttpStatus(resp.status_code)
                continue
            if resp.status_code >= 400:
                raise HttpStatus(resp.status_code)
            try:
                raw = resp.json()["raw_text"]
            except (ValueError, KeyError, TypeError):
                raise ConnectionFailed(f"{url}: response is not {{'raw_text': str}}") from None
            return GroundingResponse(str(raw), (time.perf_counter() - start) * 1000.0, "live", attempt)
    finally:
        if own:
            client.close()
    assert last is not None
    raise last


def replay_name(image_ref: str) -> str:
    return PurePosixPath(image_ref.replace("\\", "/")).stem + ".txt"


def ground_replay(request: GroundingRequest, replay_dir: str | Path) -> GroundingResponse:
    name = replay_name(request.image_ref)
    path = Path(replay_dir) / name
    try:
        raw = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise MissingRecording(name) from None
    return GroundingResponse(raw, 0.0, "replay")


class ReplaySource:
    def __init__(self, replay_dir: str | Path):
        self.replay_dir = Path(replay_dir)

    def ground(self, request: GroundingRequest) -> GroundingResponse:
        return ground_replay(request, self.replay_dir)


class LiveSource:
    def __init__(self, config: EndpointConfig):
        self.config = config

    def ground(self, request: GroundingRequest) -> GroundingResponse:
        return ground_live(request, self.config)
