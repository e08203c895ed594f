"""Chat-completion client contract, deterministic mock, and token ledger.

Every prompt this system sends embeds its machine-readable state as the
last fenced JSON block in the final user message. The mock client parses
that block and answers from a fixed, documented policy, so the whole
system runs deterministically offline; the HTTP client speaks a plain
JSON chat-completion wire format for real deployments.

Mock token counts use a whitespace approximation (``len(text.split())``);
real clients record the provider-reported usage verbatim.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ClientError

FENCED_JSON = re.compile(r"```json\s*(.*?)```", re.DOTALL)


@dataclass
class ChatReply:
    text: str
    prompt_tokens: int
    completion_tokens: int


@dataclass
class LedgerEntry:
    node: str
    call_index: int
    prompt_tokens: int
    completion_tokens: int

    def as_dict(self) -> dict:
        return {
            "node": self.node,
            "call_index": self.call_index,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


class TokenLedger:
    """Exact per-call token accounting, grouped by workflow node."""

    def __init__(self) -> None:
        self.entries: list[LedgerEntry] = []

    def record(self, node: str, prompt_tokens: int, completion_tokens: int) -> LedgerEntry:
        entry = LedgerEntry(node, len(self.entries), int(prompt_tokens), int(completion_tokens))
        self.entries.append(entry)
        return entry

    def totals(self) -> dict:
        per_node: dict[str, dict] = {}
        for e in self.entries:
            slot = per_node.setdefault(e.node, {"prompt_tokens": 0, "completion_tokens": 0, "calls": 0})
            slot["prompt_tokens"] += e.prompt_tokens
            slot["completion_tokens"] += e.completion_tokens
            slot["calls"] += 1
        overall_p = sum(e.prompt_tokens for e in self.entries)
        overall_c = sum(e.completion_tokens for e in self.entries)
        return {
            "per_node": per_node,
            "overall": {
                "prompt_tokens": overall_p,
                "completion_tokens": overall_c,
                "total_tokens": overall_p + overall_c,
            },
        }

    def as_dict(self) -> dict:
        return {"entries": [e.as_dict() for e in self.entries], "totals": self.totals()}


def approx_tokens(text: str) -> int:
    """Documented whitespace-token approximation used by the mock client."""
    return len(text.split())


def last_fenced_json(text: str) -> dict | None:
    """Last parseable fenced JSON block, scanning backwards."""
    for block in reversed(FENCED_JSON.findall(text)):
        try:
            return json.loads(block)
        except json.JSONDecodeError:
            continue
    return None


def fenced(obj: dict) -> str:
    return "```json\n" + json.dumps(obj, sort_keys=True) + "\n```"


class MockChatClient:
    """Pure-function chat client driven by the prompt's embedded state.

    Dispatch happens on the ``task`` field of the last fenced JSON block:

    * ``propose``: rank-weighted centroid of the top reward quartile of the
      latest generation becomes the proposed mean; sigma follows the fixed
      schedule ``0.3 * 0.85**generation`` floored at 0.02.
    * ``parse``: echoes the rule-extracted draft back as structured JSON.
    * ``report`` / ``chat``: deterministic template narratives.

    A ``script`` list, when given, is consumed verbatim (one reply per
    call) before the policy takes over; tests use it to force replies.
    """

    identity = "mock"

    def __init__(self, script: list[str] | None = None):
        self.script = list(script or [])
        self.calls = 0

    def complete(self, messages: list[dict], params: dict | None = None) -> ChatReply:
        prompt_text = "\n".join(m.get("content", "") for m in messages)
        self.calls += 1
        if self.script:
            text = self.script.pop(0)
            return ChatReply(text, approx_tokens(prompt_text), approx_tokens(text))
        state = last_fenced_json(prompt_text) or {}
        task = state.get("task")
        if task == "propose":
            text = self._propose(state)
        elif task == "parse":
            text = fenced(state.get("draft", {}))
        elif task == "report":
            text = self._report(state)
        elif task == "chat":
            text = self._chat(state)
        else:
            text = "Acknowledged."
        return ChatReply(text, approx_tokens(prompt_text), approx_tokens(text))

    # -- policies -----------------------------------------------------------

    @staticmethod
    def _propose(state: dict) -> str:
        candidates = state.get("candidates", [])
        generation = int(state.get("generation", 0))
        dim = int(state.get("dim", 21))
        sigma = max(0.3 * 0.85 ** generation, 0.02)
        if candidates:
            ranked = sorted(candidates, key=lambda c: c["reward"], reverse=True)
            k = max(1, int(np.ceil(len(ranked) / 4)))
            top = ranked[:k]
            weights = np.arange(k, 0, -1, dtype=np.float64)
            weights /= weights.sum()
            mean = np.zeros(dim)
            for w, cand in zip(weights, top):
                mean += w * np.asarray(cand["z"], dtype=np.float64)
        elif state.get("best") is not None:
            mean = np.asarray(state["best"]["z"], dtype=np.float64)
        else:
            mean = np.full(dim, 0.5)
        reply = {
            "mean": [float(v) for v in mean],
            "sigma": float(sigma),
            "rationale": f"centroid of top quartile at generation {generation}",
        }
        return "Proposed update below.\n" + fenced(reply)

    @staticmethod
    def _report(state: dict) -> str:
        lines = ["Design run summary."]
        for key in sorted(state.get("sections", {})):
            lines.append(f"{key}: {state['sections'][key]}")
        return "\n".join(lines)

    @staticmethod
    def _chat(state: dict) -> str:
        question = state.get("question", "")
        return f"Considering the recorded artifacts: {question.strip()} — see the tables provided."


class HttpChatClient:
    """JSON chat-completion client over HTTP.

    Wire format: POST ``{endpoint}`` with body
    ``{"model": ..., "messages": [...], "temperature": ...}`` and bearer
    auth; expects ``choices[0].message.content`` plus a ``usage`` object.
    Endpoint, model and key come from explicit arguments or the
    ``BLADEDESK_LLM_ENDPOINT`` / ``BLADEDESK_LLM_MODEL`` /
    ``BLADEDESK_LLM_KEY`` environment variables.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        retries: int = 2,
        transport=None,
    ):
        import httpx

        self.endpoint = endpoint or os.environ.get("BLADEDESK_LLM_ENDPOINT", "")
        self.model = model or os.environ.get("BLADEDESK_LLM_MODEL", "")
        self.api_key = api_key or os.environ.get("BLADEDESK_LLM_KEY", "")
        if not self.endpoint:
            raise ClientError("no chat endpoint configured")
        self.retries = int(retries)
        self.identity = f"http:{self.model}"
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def complete(self, messages: list[dict], params: dict | None = None) -> ChatReply:
        body = {"model": self.model, "messages": messages}
        body.update(params or {})
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(self.endpoint, json=body, headers=headers)
                if resp.status_code >= 500:
                    last_error = ClientError(f"server error {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise ClientError(f"chat endpoint returned {resp.status_code}: {resp.text[:200]}")
                doc = resp.json()
                text = doc["choices"][0]["message"]["content"]
                usage = doc.get("usage", {})
                return ChatReply(
                    text,
                    int(usage.get("prompt_tokens", 0)),
                    int(usage.get("completion_tokens", 0)),
                )
            except ClientError:
                raise
            except Exception as e:  # network / decode errors are retryable
                last_error = e
        raise ClientError(f"chat completion failed after {self.retries + 1} attempts: {last_error}")
