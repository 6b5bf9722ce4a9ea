"""Expert-VLM provider handles: a remote OpenAI-style endpoint and
deterministic scripted/mock implementations for offline runs and tests.
"""

import base64
import hashlib
import json
import os
from abc import ABC, abstractmethod
from typing import Callable, Optional, Sequence, Union


class TransportError(Exception):
    """Network/API-level failure; retried by the generation loop."""


class Provider(ABC):
    """A handle that turns (prompt, image bytes) into raw response text."""

    id: str = "provider"
    model_version: str = "unknown"

    @abstractmethod
    def generate(self, prompt: str, image_bytes: Optional[bytes] = None,
                 temperature: float = 0.0) -> str:
        """Return the raw response text; raises TransportError on failure."""


class RemoteVLMProvider(Provider):
    """OpenAI-compatible chat-completions endpoint.

    Credentials come from the environment (api_key_env); the image travels
    as a base64 data URL attachment. Never used by the test suite.
    """

    id = "remote"

    def __init__(self, endpoint: str, model: str, api_key_env: str = "MEMEKIT_API_KEY",
                 timeout: float = 120.0):
        self.endpoint = endpoint
        self.model_version = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate(self, prompt, image_bytes=None, temperature=0.0):
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise TransportError(f"missing credentials: set {self.api_key_env}")
        content = [{"type": "text", "text": prompt}]
        if image_bytes is not None:
            encoded = base64.b64encode(image_bytes).decode("ascii")
            content.append(
                {"type": "image_url",
                 "image_url": {"url": f"data:image/png;base64,{encoded}"}}
            )
        payload = {
            "model": self.model_version,
            "temperature": temperature,
            "messages": [{"role": "user", "content": content}],
        }
        try:
            response = requests.post(
                self.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"unexpected response shape: {exc}") from exc


class ScriptedProvider(Provider):
    """Mock provider driven by a fixed transcript or a prompt function.

    The script may be a list whose entries are raw response strings or
    exceptions to raise (consumed one per call), or a callable
    prompt -> response. Call count is recorded for resume assertions.
    """

    id = "scripted"
    model_version = "scripted-1"

    def __init__(self, script: Union[Sequence, Callable[[str], str]]):
        self.script = script
        self.calls = 0

    def generate(self, prompt, image_bytes=None, temperature=0.0):
        index = self.calls
        self.calls += 1
        if callable(self.script):
            return self.script(prompt)
        if index >= len(self.script):
            raise TransportError("scripted transcript exhausted")
        entry = self.script[index]
        if isinstance(entry, Exception):
            raise entry
        return entry


_LOREM = (
    "image text symbol color crowd banner slogan humor appeal emotion context "
    "culture contrast figure scene gesture flag caption reference tone"
).split()


class DeterministicProvider(Provider):
    """Offline stand-in for the expert VLM: a stable pseudo-explanation per
    prompt, always valid JSON and within the word limit."""

    id = "mock"
    model_version = "mock-1"

    def __init__(self, words: int = 24):
        self.words = words
        self.calls = 0

    def generate(self, prompt, image_bytes=None, temperature=0.0):
        self.calls += 1
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        picks = [_LOREM[b % len(_LOREM)] for b in digest[: self.words]]
        explanation = "The classified content combines " + " ".join(picks) + "."
        return json.dumps({"explanation": explanation})


def make_provider(settings: dict) -> Provider:
    """Build a provider from config: {"kind": "mock"|"scripted"|"remote", ...}."""
    kind = settings.get("kind", "mock")
    if kind == "mock":
        return DeterministicProvider(words=settings.get("words", 24))
    if kind == "remote":
        return RemoteVLMProvider(
            endpoint=settings["endpoint"],
            model=settings["model"],
            api_key_env=settings.get("api_key_env", "MEMEKIT_API_KEY"),
            timeout=settings.get("timeout", 120.0),
        )
    raise ValueError(f"unknown provider kind: {kind!r}")
