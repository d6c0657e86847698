"""HTTP clients for the remote services the pipelines talk to.

Every client is a small object with one method, so tests substitute plain
callables or stubs. Keys are read from the environment variable named in the
config, never passed on the command line.
"""

from __future__ import annotations

import base64
import mimetypes
import os
from pathlib import Path
from typing import Protocol

import httpx


class ChatClient(Protocol):
    def complete(self, prompt: str, image_ref: str | bytes) -> str: ...


class ImageGenerator(Protocol):
    def generate(self, prompt: str) -> bytes: ...


def image_ref_to_url(ref: str | bytes) -> str:
    """URLs pass through; local files and raw bytes become base64 data URIs."""
    if isinstance(ref, (bytes, bytearray)):
        return "data:image/png;base64," + base64.b64encode(bytes(ref)).decode("ascii")
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    path = Path(ref)
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return f"data:{mime};base64," + base64.b64encode(path.read_bytes()).decode("ascii")


def _auth_headers(key_env: str | None) -> dict[str, str]:
    if not key_env:
        return {}
    key = os.environ.get(key_env)
    if not key:
        raise RuntimeError(f"environment variable {key_env} is not set")
    return {"Authorization": f"Bearer {key}"}


class HttpChatClient:
    """Chat-completions endpoint taking a text part and an image part."""

    def __init__(self, endpoint: str, model: str, key_env: str | None = None,
                 temperature: float = 0.0, timeout: float = 120.0, http: httpx.Client | None = None):
        self.endpoint = endpoint
        self.model = model
        self.key_env = key_env
        self.temperature = temperature
        self._http = http or httpx.Client(timeout=timeout)

    def payload(self, prompt: str, image_ref: str | bytes) -> dict:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": image_ref_to_url(image_ref)}},
                ],
            }],
        }

    def complete(self, prompt: str, image_ref: str | bytes) -> str:
        resp = self._http.post(self.endpoint, json=self.payload(prompt, image_ref),
                               headers=_auth_headers(self.key_env))
        resp.raise_for_status()
        body = resp.json()
        return body["choices"][0]["message"]["content"]


class HttpImageGenerator:
    """POST ``{"prompt": ...}``; the reply is image bytes or ``{"image": <base64>}``."""

    def __init__(self, endpoint: str, key_env: str | None = None, timeout: float = 300.0,
                 http: httpx.Client | None = None):
        self.endpoint = endpoint
        self.key_env = key_env
        self._http = http or httpx.Client(timeout=timeout)

    def generate(self, prompt: str) -> bytes:
        resp = self._http.post(self.endpoint, json={"prompt": prompt}, headers=_auth_headers(self.key_env))
        resp.raise_for_status()
        if resp.headers.get("content-type", "").startswith("application/json"):
            return base64.b64decode(resp.json()["image"])
        return resp.content
