"""Remote HTTP backends: chat-completion generator, tool+judger verifier,
served-PRM scorer.

Wire format is the widespread chat-completion schema: POST a JSON body with
``model``, ``messages`` (system + user), ``temperature`` and ``n``; read
``choices[0].message.content`` from the response. The math tool is a GET
endpoint taking the query as a ``query`` parameter. Exact shapes are pinned
in the README.

Every request goes through the shared rate limiter, retries transient
failures (connection errors, 429, 5xx) with exponential backoff, and is
served from the content-addressed cache when warm.
"""

from __future__ import annotations

import json
import math
import re
import time
from typing import Callable

import requests

from ..domain import Problem, ReasoningStep, StepSequence, VerificationResult, parse_verdict_marker
from .base import BackendConfig, BackendError
from .templates import PromptTemplate
from .transport import FileResponseCache, RateLimiter, cache_key

_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})
_BACKOFF_BASE_S = 0.5

_OBJECTIVE_RE = re.compile(r"^objective\s*:\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_ACTION_RE = re.compile(r"^action\s*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_FINAL_MARKER_RE = re.compile(r"final answer\s*[:=]", re.IGNORECASE)


def render_prior_steps(state: StepSequence) -> str:
    if not state:
        return "(none yet)"
    return "\n".join(f"Step {s.index}: {s.objective} -- {s.action}" for s in state)


def render_candidate(step: ReasoningStep) -> str:
    return f"Step {step.index}: {step.objective} -- {step.action}"


def parse_step_completion(text: str, index: int) -> ReasoningStep | None:
    """Parse an Objective:/Action: completion into a step; None on failure."""
    objective_match = _OBJECTIVE_RE.search(text)
    action_match = _ACTION_RE.search(text)
    if not objective_match or not action_match:
        return None
    action = text[action_match.start(1):].strip()
    objective = objective_match.group(1).strip()
    if not objective or not action:
        return None
    return ReasoningStep(
        index=index,
        objective=objective,
        action=action,
        is_final=bool(_FINAL_MARKER_RE.search(action)),
    )


class _Endpoint:
    """One remote endpoint with its limiter, retry policy, and cache."""

    def __init__(
        self,
        cfg: BackendConfig,
        cache: FileResponseCache | None = None,
        session: requests.Session | None = None,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self.cache = cache
        if cache is None and cfg.cache_dir:
            self.cache = FileResponseCache(cfg.cache_dir)
        self._session = session or requests.Session()
        self._limiter = RateLimiter(cfg.rate_limit_rps, time_fn=time_fn, sleep_fn=sleep_fn)
        self._sleep = sleep_fn

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = self.cfg.auth_token()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _fetch(self, method: str, payload: dict | None, params: dict | None) -> bytes:
        last_error: str = "no attempt made"
        last_status: int | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(_BACKOFF_BASE_S * (2 ** (attempt - 1)))
            self._limiter.acquire()
            try:
                response = self._session.request(
                    method,
                    self.cfg.endpoint_url,
                    json=payload,
                    params=params,
                    headers=self._headers(),
                    timeout=self.cfg.timeout_s,
                )
            except requests.RequestException as err:
                last_error = f"request failed: {err}"
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = f"transient HTTP {response.status_code}"
                last_status = response.status_code
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"HTTP {response.status_code} from {self.cfg.endpoint_url}",
                    status=response.status_code,
                )
            return response.content
        raise BackendError(
            f"{self.cfg.endpoint_url}: exhausted {self.cfg.max_retries + 1} attempts; "
            f"last error: {last_error}",
            status=last_status,
        )

    def request(self, key_payload: dict, method: str = "POST",
                payload: dict | None = None, params: dict | None = None) -> bytes:
        key = cache_key(key_payload)
        if self.cache is not None:
            return self.cache.get_or_fetch(key, lambda: self._fetch(method, payload, params))
        return self._fetch(method, payload, params)


def _chat_content(raw: bytes, endpoint: str) -> str:
    try:
        body = json.loads(raw.decode("utf-8"))
        return body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as err:
        raise BackendError(f"malformed chat response from {endpoint}: {err}") from err


class ChatCompletionGenerator:
    """Samples candidate steps from a chat-completion endpoint.

    Each of the `count` samples is an independent request so the cache can
    key on (template, problem, state, sample index, temperature, model).
    Completions that do not parse into a step are dropped, never padded.
    """

    def __init__(
        self,
        cfg: BackendConfig,
        template: PromptTemplate,
        cache: FileResponseCache | None = None,
        session: requests.Session | None = None,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self._endpoint = _Endpoint(cfg, cache, session, time_fn, sleep_fn)
        self._template = template

    def generate(self, problem: Problem, state: StepSequence, count: int) -> list[ReasoningStep]:
        cfg = self._endpoint.cfg
        body = self._template.render(
            problem=problem.statement, prior_steps=render_prior_steps(state)
        )
        messages = [
            {"role": "system", "content": self._template.role_preamble},
            {"role": "user", "content": body},
        ]
        steps = []
        for sample_index in range(count):
            key_payload = {
                "kind": "chat-step",
                "template": self._template.body_template,
                "problem": problem.id,
                "state": [s.action for s in state],
                "sample_index": sample_index,
                "temperature": cfg.temperature,
                "model": cfg.model_name,
            }
            raw = self._endpoint.request(
                key_payload,
                payload={
                    "model": cfg.model_name,
                    "messages": messages,
                    "temperature": cfg.temperature,
                    "n": 1,
                },
            )
            step = parse_step_completion(
                _chat_content(raw, cfg.endpoint_url), len(state) + 1
            )
            if step is not None:
                steps.append(step)
        return steps


class ToolVerifier:
    """Two-stage verifier: query the external math tool, then have the judger
    model fuse the step text with the tool response into a boxed verdict.

    A judger response without a parseable boxed marker is not an error; the
    step comes back verifiable=False and the trace is filtered downstream.
    """

    def __init__(
        self,
        tool_cfg: BackendConfig,
        judger_cfg: BackendConfig,
        template: PromptTemplate,
        cache: FileResponseCache | None = None,
        session: requests.Session | None = None,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self._tool = _Endpoint(tool_cfg, cache, session, time_fn, sleep_fn)
        self._judger = _Endpoint(judger_cfg, cache, session, time_fn, sleep_fn)
        self._template = template

    @staticmethod
    def build_tool_query(step: ReasoningStep) -> str:
        return step.action

    def verify(
        self, problem: Problem, step: ReasoningStep, context: StepSequence
    ) -> VerificationResult:
        query = self.build_tool_query(step)
        tool_raw = self._tool.request(
            {"kind": "tool", "endpoint": self._tool.cfg.endpoint_url, "query": query},
            method="GET",
            params={"query": query},
        )
        tool_text = tool_raw.decode("utf-8", errors="replace")
        try:
            tool_text = json.loads(tool_text).get("result", tool_text)
        except ValueError:
            pass

        body = self._template.render(
            problem=problem.statement,
            prior_steps=render_prior_steps(context),
            candidate_step=render_candidate(step),
            tool_response=tool_text,
        )
        judger_cfg = self._judger.cfg
        raw = self._judger.request(
            {
                "kind": "judge-step",
                "template": self._template.body_template,
                "problem": problem.id,
                "state": [s.action for s in context],
                "candidate": step.action,
                "tool_response": tool_text,
                "temperature": judger_cfg.temperature,
                "model": judger_cfg.model_name,
            },
            payload={
                "model": judger_cfg.model_name,
                "messages": [
                    {"role": "system", "content": self._template.role_preamble},
                    {"role": "user", "content": body},
                ],
                "temperature": judger_cfg.temperature,
                "n": 1,
            },
        )
        content = _chat_content(raw, judger_cfg.endpoint_url)
        verdict = parse_verdict_marker(content)
        if verdict is None:
            return VerificationResult(
                label=-1,
                rationale=content,
                tool_query=query,
                raw_response=raw.decode("utf-8", errors="replace"),
                verifiable=False,
            )
        return VerificationResult(
            label=verdict,
            rationale=content,
            tool_query=query,
            raw_response=raw.decode("utf-8", errors="replace"),
        )


class ServedPrmScorer:
    """Scores a candidate step with a served generative PRM.

    In "label" mode the scalar is the parsed boxed verdict (+1/-1); an output
    with no marker is an error naming the sample, because greedy search must
    not guess. In "likelihood" mode the endpoint's token logprobs for the
    verdict position map to a scalar in [-1, 1].
    """

    def __init__(
        self,
        cfg: BackendConfig,
        template: PromptTemplate,
        cache: FileResponseCache | None = None,
        mode: str = "label",
        session: requests.Session | None = None,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        if mode not in ("label", "likelihood"):
            raise ValueError(f"unknown scorer mode: {mode!r}")
        self._endpoint = _Endpoint(cfg, cache, session, time_fn, sleep_fn)
        self._template = template
        self._mode = mode

    def score(self, problem: Problem, state: StepSequence, candidate: ReasoningStep) -> float:
        cfg = self._endpoint.cfg
        body = self._template.render(
            problem=problem.statement,
            prior_steps=render_prior_steps(state),
            candidate_step=render_candidate(candidate),
        )
        sample_name = f"{problem.id}@{candidate.index}"
        raw = self._endpoint.request(
            {
                "kind": "score-step",
                "template": self._template.body_template,
                "problem": problem.id,
                "state": [s.action for s in state],
                "candidate": candidate.action,
                "mode": self._mode,
                "temperature": cfg.temperature,
                "model": cfg.model_name,
            },
            payload={
                "model": cfg.model_name,
                "messages": [
                    {"role": "system", "content": self._template.role_preamble},
                    {"role": "user", "content": body},
                ],
                "temperature": cfg.temperature,
                "n": 1,
                "logprobs": self._mode == "likelihood",
            },
        )
        if self._mode == "likelihood":
            return self._likelihood_score(raw, sample_name)
        content = _chat_content(raw, cfg.endpoint_url)
        verdict = parse_verdict_marker(content)
        if verdict is None:
            raise BackendError(f"unparseable PRM output for sample {sample_name}")
        return float(verdict)

    @staticmethod
    def _likelihood_score(raw: bytes, sample_name: str) -> float:
        try:
            body = json.loads(raw.decode("utf-8"))
            entries = body["choices"][0]["logprobs"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise BackendError(
                f"PRM response for sample {sample_name} lacks logprobs: {err}"
            ) from err
        def canonical(token: str) -> str:
            return token.strip().replace("−", "-")

        verdict_entry = None
        for entry in entries:
            if canonical(entry.get("token", "")) in ("+", "-"):
                verdict_entry = entry
        if verdict_entry is None:
            raise BackendError(f"no verdict token logprobs for sample {sample_name}")
        probs = {"+": 0.0, "-": 0.0}
        for alt in verdict_entry.get("top_logprobs", []):
            token = canonical(alt.get("token", ""))
            if token in probs:
                probs[token] = math.exp(alt["logprob"])
        total = probs["+"] + probs["-"]
        if total <= 0:
            raise BackendError(f"degenerate verdict likelihoods for sample {sample_name}")
        return (probs["+"] - probs["-"]) / total
