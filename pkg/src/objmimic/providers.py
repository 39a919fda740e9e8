"""Semantic-relation providers for reference-object attribution.

The rule-based default resolves non-contact relations offline (a pour's
recipient bowl, say) from container-name keywords and end-of-step geometry.
The HTTP provider posts a step summary to a remote endpoint and expects the
JSON response shapes ``{"manipulate_object_name": ...}`` and
``{"reference_object_name": ... or "None"}``, optionally wrapped in a
markdown code fence.
"""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import ProviderError
from .plan import ProviderContext

PROVIDER_URL_ENV = "OBJMIMIC_PROVIDER_URL"

DEFAULT_CONTAINER_WORDS = (
    "bowl", "basket", "plate", "bin", "cup", "box", "container", "bag", "pot", "tray",
)


class NullProvider:
    """Never proposes a reference object."""

    def query_reference(self, context: ProviderContext) -> str | None:
        return None


@dataclass(frozen=True)
class RuleBasedProvider:
    """Offline heuristic: a moved target relates to the nearest container-like
    object it ends up over."""

    container_words: tuple[str, ...] = DEFAULT_CONTAINER_WORDS
    horizontal_radius: float = 0.12
    min_displacement: float = 0.05

    def query_reference(self, context: ProviderContext) -> str | None:
        if context.target_displacement < self.min_displacement:
            return None
        end_xy = np.asarray(context.target_end_position)[:2]
        best = None
        for name in context.candidates:
            lowered = name.lower()
            if not any(w in lowered for w in self.container_words):
                continue
            cand_xy = np.asarray(context.candidate_end_positions[name])[:2]
            dist = float(np.linalg.norm(end_xy - cand_xy))
            if dist <= self.horizontal_radius and (best is None or dist < best[0]):
                best = (dist, name)
        return best[1] if best else None


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)\s*```", re.DOTALL)


def extract_json(text: str) -> dict:
    """Parse a JSON object from a raw or markdown-fenced response body."""
    candidate = text.strip()
    fence = _FENCE_RE.search(candidate)
    if fence:
        candidate = fence.group(1)
    try:
        doc = json.loads(candidate)
    except json.JSONDecodeError as e:
        raise ProviderError(f"unparseable provider response: {e}") from None
    if not isinstance(doc, dict):
        raise ProviderError("provider response is not a JSON object")
    return doc


@dataclass(frozen=True)
class HttpProvider:
    """Posts step context to a remote endpoint and parses its typed replies."""

    url: str
    timeout: float = 30.0

    @staticmethod
    def from_env(timeout: float = 30.0) -> "HttpProvider":
        url = os.environ.get(PROVIDER_URL_ENV)
        if not url:
            raise ProviderError(f"environment variable {PROVIDER_URL_ENV} is not set")
        return HttpProvider(url=url, timeout=timeout)

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        request = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                return extract_json(response.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError) as e:
            raise ProviderError(f"provider request failed: {e}") from None

    def query_reference(self, context: ProviderContext) -> str | None:
        doc = self._post(
            {
                "query": "reference_object",
                "objects": list(context.candidates),
                "target": context.target,
                "context": context.summary(),
            }
        )
        if "reference_object_name" not in doc:
            raise ProviderError("response missing 'reference_object_name'")
        name = doc["reference_object_name"]
        if not isinstance(name, str):
            raise ProviderError(f"'reference_object_name' must be a string, got {name!r}")
        return None if name == "None" else name

    def query_target(self, objects: list[str], context: str = "") -> str:
        doc = self._post(
            {"query": "manipulate_object", "objects": list(objects), "context": context}
        )
        if "manipulate_object_name" not in doc:
            raise ProviderError("response missing 'manipulate_object_name'")
        name = doc["manipulate_object_name"]
        if not isinstance(name, str):
            raise ProviderError(f"'manipulate_object_name' must be a string, got {name!r}")
        return name


def make_provider(kind: str, timeout: float = 30.0):
    """Factory for the CLI's --provider flag: rules | http | none."""
    if kind == "rules":
        return RuleBasedProvider()
    if kind == "http":
        return HttpProvider.from_env(timeout=timeout)
    if kind == "none":
        return NullProvider()
    raise ProviderError(f"unknown provider kind {kind!r}")
