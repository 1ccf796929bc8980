"""Reasoning backends: a deterministic scripted engine and an HTTP client.

Both backends answer :class:`~beliefworld.prompts.ReasonerRequest` calls.
The scripted backend computes each answer mechanically from the request
variables alone (a pure function of template id and vars), rendering a
formatted reply and parsing it back through the same section parser the
HTTP path uses.  The HTTP backend speaks the OpenAI-compatible chat
completions protocol: one user message per call, temperature 0.7, top_p 1,
max_tokens 512, bearer auth from the ``COBEL_API_KEY`` environment
variable.  Transport errors are retried once with exponential backoff and
format violations once with a repair instruction; when both retries are
exhausted the call degrades to the scripted backend and the response is
marked ``fallback_used``.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field

import requests

from . import collab_engine, prompts, rule_consensus
from .actions import Plan, parse_plan
from .collab_engine import PlannerView
from .prompts import ParseFailure, ReasonerRequest, ReasonerResponse
from .scenario import EntityRegistry
from .sbl import AtomicBelief, ParseError, parse, parse_atomic

log = logging.getLogger(__name__)

TEMPERATURE = 0.7
TOP_P = 1
MAX_TOKENS = 512

API_KEY_ENV = "COBEL_API_KEY"

REPAIR_INSTRUCTION = (
    "\n\nYour previous reply did not follow the required format. "
    "Answer again and include every labeled section, in order: {labels}."
)

SCRIPTED = "scripted"
LLM = "llm"


def _belief_bodies(lines: str, order: int) -> list[AtomicBelief]:
    """Extract fact bodies from full-form belief lines of one order."""
    out = []
    for line in lines.splitlines():
        line = line.strip().lstrip("-*").strip()
        if not line or line.lower() == "none":
            continue
        try:
            expr = parse(line)
        except ParseError:
            continue
        if expr.order == order and expr.is_ground:
            out.append(expr.body)
    return out


def _parse_plan_var(text: str) -> Plan | None:
    try:
        return parse_plan(text)
    except (ParseError, ValueError):
        return None


@dataclass
class ScriptedReasoner:
    """Deterministic reasoning over the request variables.

    Needs the scenario registry for room-graph distances and object
    kinds; everything else is read out of the rendered variables, the
    same information a remote model would see.
    """

    registry: EntityRegistry
    backend = SCRIPTED
    fallback_count: int = 0

    def complete(self, request: ReasonerRequest) -> ReasonerResponse:
        tmpl = prompts.template(request.template_id)
        missing = [v for v in tmpl.required_vars if v not in request.vars]
        if missing:
            raise prompts.TemplateError(f"unbound {missing[0]}")
        text = self._answer(request.template_id, request.vars)
        sections = prompts.parse_sections(tmpl, text)
        return ReasonerResponse(sections=sections, raw=text, backend=SCRIPTED)

    # -- per-template answers -------------------------------------------

    def _answer(self, template_id: str, vars: dict[str, str]) -> str:
        handler = getattr(self, f"_answer_{template_id}")
        return handler(vars)

    def _view(self, owner: str, lines: str, order: int = 0) -> PlannerView:
        return PlannerView.from_facts(
            owner, self.registry, _belief_bodies(lines, order)
        )

    def _answer_rules_propose(self, vars: dict[str, str]) -> str:
        zero, first = rule_consensus.canonical_rule_lines()
        return (
            "Entity and predicate reasoning: agents, rooms, target objects,"
            " containers, the bed, holdings, containment, positions, and"
            " per-room exploration levels.\n"
            "Zero order belief rules:\n" + "\n".join(zero) + "\n"
            "First order belief rules:\n" + "\n".join(first) + "\n"
        )

    def _answer_rules_refine(self, vars: dict[str, str]) -> str:
        zero, first = rule_consensus.canonical_rule_lines()
        return (
            "Reasoning: restored the full canonical rule set per the"
            " suggestions.\n"
            "Zero order belief rules:\n" + "\n".join(zero) + "\n"
            "First order belief rules:\n" + "\n".join(first) + "\n"
        )

    def _answer_rules_review(self, vars: dict[str, str]) -> str:
        verdict = rule_consensus.checklist_review(vars.get("ALICE_CONTENT", ""))
        suggestions = "; ".join(verdict.problems) if verdict.problems else "None"
        answer = "no" if verdict.problems else "yes"
        return (
            "Reasoning: checked parseability, duplicates, and coverage of"
            " position, holdings, exploration, object locations, and"
            " container contents.\n"
            f"Suggestions: {suggestions}\n"
            f"Satisfied: {answer}\n"
        )

    def _split_dialogue(self, message: str) -> tuple[str, str]:
        sender, sep, text = message.partition(":")
        if not sep:
            return "", message
        return sender.strip(), text.strip()

    def _answer_update_zero(self, vars: dict[str, str]) -> str:
        agent = vars["AGENT_NAME"]
        _, body = self._split_dialogue(vars["MESSAGE"])
        try:
            facts, _ = collab_engine.parse_message(body)
        except ParseError:
            log.warning("scripted update ignoring unparseable message: %r", body)
            facts = []
        lines = [f"{agent} BELIEVE {f}" for f in sorted(facts, key=str)]
        return (
            "Extracted Information: statements taken from the dialogue"
            " verbatim.\n"
            "Zero order beliefs:\n" + ("\n".join(lines) if lines else "None") + "\n"
        )

    def _answer_update_first(self, vars: dict[str, str]) -> str:
        agent = vars["AGENT_NAME"]
        oppo = vars["OPPO_NAME"]
        _, body = self._split_dialogue(vars["MESSAGE"])
        plan_text = "None"
        try:
            facts, plan = collab_engine.parse_message(body)
            if plan is not None:
                plan_text = str(plan)
        except ParseError:
            log.warning("scripted update ignoring unparseable message: %r", body)
            facts = []
        lines = [f"{agent} BELIEVE {oppo} BELIEVE {f}" for f in sorted(facts, key=str)]
        return (
            "Extracted Information: statements the sender made, which the"
            " sender therefore knows.\n"
            "First order beliefs:\n" + ("\n".join(lines) if lines else "None") + "\n"
            f"{oppo}'s plan: {plan_text}\n"
        )

    def _answer_predict_zero(self, vars: dict[str, str]) -> str:
        view = self._view(vars["AGENT_NAME"], vars["ZERO_ORDER_BELIEF"])
        plan = collab_engine.best_plan(view)
        return (
            "reasoning: ranked container filling, transporting, fetching"
            " known targets, and exploring unexplored rooms.\n"
            f"plan: {plan if plan is not None else 'None'}\n"
        )

    def _answer_predict_first(self, vars: dict[str, str]) -> str:
        view = self._view(vars["OPPO_NAME"], vars["FIRST_ORDER_BELIEF"], order=1)
        plans = collab_engine.candidate_plans(view)
        lines = [
            f"plan{i + 1}: {plans[i] if i < len(plans) else 'None'}" for i in range(3)
        ]
        return (
            "reasoning: projected the teammate's ranked options from the"
            " first-order beliefs alone.\n"
            "plans:\n" + "\n".join(lines) + "\n"
        )

    def _answer_adaptive(self, vars: dict[str, str]) -> str:
        my_plan = _parse_plan_var(vars["MY_PLAN"])
        their_plans = []
        for line in vars["OPPO_PLANS"].splitlines():
            _, _, rest = line.partition(":")
            plan = _parse_plan_var(rest)
            if plan is not None:
                their_plans.append(plan)
        zero = _belief_bodies(vars["ZERO_ORDER_BELIEF"], 0)
        first = _belief_bodies(vars["MY_FIRST_ORDER_BELIEF"], 1)
        first_set = set(first)
        misaligned = sorted((f for f in zero if f not in first_set), key=str)

        conflicts = []
        heavy_conflict = False
        if my_plan is not None:
            my_head = collab_engine.head_indexes(my_plan)
            for theirs in their_plans:
                their_head = collab_engine.head_indexes(theirs)
                for i, a in enumerate(my_plan.steps):
                    for j, b in enumerate(theirs.steps):
                        kind = collab_engine.step_conflict(a, b, self.registry)
                        if kind:
                            conflicts.append(f"{kind} on '{a}' vs '{b}'")
                            if i in my_head and j in their_head:
                                heavy_conflict = True
        heavy_misalign = any(
            collab_engine.fact_is_goal_relevant(f, self.registry) for f in misaligned
        )
        heavy = heavy_conflict or heavy_misalign
        reasons = "; ".join(conflicts) if conflicts else "no step conflicts detected"
        mis_lines = "\n".join(str(f) for f in misaligned) if heavy and misaligned else ""
        return (
            f"reasons: {reasons}\n"
            f"answer: {'Yes' if heavy else 'No'}\n"
            "misaligned information:" + ("\n" + mis_lines if mis_lines else " None") + "\n"
        )

    def _answer_communicate(self, vars: dict[str, str]) -> str:
        facts = []
        for line in vars["MISALIGNED_INFORMATION"].splitlines():
            line = line.strip()
            if not line or line.lower() == "none":
                continue
            try:
                facts.append(parse_atomic(line))
            except ParseError:
                continue
        plan = _parse_plan_var(vars["MY_PLAN"])
        text = collab_engine.compose_message(facts, plan, self.registry)
        return f"Message: {text}\n"

    def _answer_plan_next(self, vars: dict[str, str]) -> str:
        view = self._view(vars["AGENT_NAME"], vars["ZERO_ORDER_BELIEF"])
        plan = _parse_plan_var(vars["MY_PLAN"])
        if plan is None:
            return "reasons: no active plan remains.\nanswer: SUBPLAN DONE\n"
        history = []
        prev = vars.get("PREVIOUS_ACTIONS", "")
        if prev.strip().lower() not in ("", "none"):
            parsed = _parse_plan_var(prev)
            if parsed is not None:
                history = list(parsed.steps)
        try:
            step = collab_engine.next_step(view, plan, history)
        except collab_engine.StalePlan as exc:
            return f"reasons: {exc}.\nanswer: STALE PLAN\n"
        if step == collab_engine.SUBPLAN_DONE:
            return "reasons: every step's effect already holds.\nanswer: SUBPLAN DONE\n"
        return f"reasons: first step whose effect is not yet in my beliefs.\nanswer: {step}\n"

    def _answer_replan(self, vars: dict[str, str]) -> str:
        view = self._view(vars["AGENT_NAME"], vars["ZERO_ORDER_BELIEF"])
        avoid = _parse_plan_var(vars["OPPO_PLAN"])
        plan = collab_engine.avoiding_plan(view, avoid)
        return (
            "reasoning: deprioritized rooms and objects the teammate is"
            " already covering.\n"
            f"plan: {plan if plan is not None else 'None'}\n"
        )


@dataclass
class HttpReasoner:
    """OpenAI-compatible chat completions client with scripted fallback."""

    registry: EntityRegistry
    base_url: str
    model: str
    api_key: str | None = None
    timeout: float = 30.0
    backoff_base: float = 0.5
    max_in_flight: int = 4
    backend = LLM
    fallback_count: int = 0
    _scripted: ScriptedReasoner = field(init=False)
    _gate: threading.BoundedSemaphore = field(init=False)

    def __post_init__(self):
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV, "")
        self._scripted = ScriptedReasoner(self.registry)
        self._gate = threading.BoundedSemaphore(self.max_in_flight)

    def _post(self, prompt: str) -> str:
        url = self.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": TEMPERATURE,
            "top_p": TOP_P,
            "max_tokens": MAX_TOKENS,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        with self._gate:
            response = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
        if response.status_code != 200:
            log.warning("chat completion returned HTTP %s", response.status_code)
            raise requests.HTTPError(f"HTTP {response.status_code}", response=response)
        data = response.json()
        return data["choices"][0]["message"]["content"]

    def _post_with_retry(self, prompt: str) -> str:
        try:
            return self._post(prompt)
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            log.warning("chat completion failed (%s); retrying once", exc)
            time.sleep(self.backoff_base)
            return self._post(prompt)

    def complete(self, request: ReasonerRequest) -> ReasonerResponse:
        tmpl = prompts.template(request.template_id)
        prompt = prompts.render(tmpl, request.vars)
        raw = ""
        try:
            raw = self._post_with_retry(prompt)
            sections = prompts.parse_sections(tmpl, raw)
            return ReasonerResponse(sections=sections, raw=raw, backend=LLM)
        except ParseFailure:
            repair = prompt + REPAIR_INSTRUCTION.format(
                labels=", ".join(tmpl.output_labels)
            )
            try:
                raw = self._post_with_retry(repair)
                sections = prompts.parse_sections(tmpl, raw)
                return ReasonerResponse(sections=sections, raw=raw, backend=LLM)
            except (ParseFailure, requests.RequestException, KeyError, IndexError, ValueError):
                pass
        except (requests.RequestException, KeyError, IndexError, ValueError):
            pass
        self.fallback_count += 1
        log.warning(
            "falling back to scripted reasoning for template %s", request.template_id
        )
        scripted = self._scripted.complete(request)
        return ReasonerResponse(
            sections=scripted.sections,
            raw=raw or scripted.raw,
            backend=SCRIPTED,
            fallback_used=True,
        )


def make_reasoner(
    backend: str,
    registry: EntityRegistry,
    base_url: str | None = None,
    model: str | None = None,
    **kwargs,
) -> ScriptedReasoner | HttpReasoner:
    if backend == SCRIPTED:
        return ScriptedReasoner(registry)
    if backend == LLM:
        if not base_url or not model:
            raise ValueError("llm backend requires base_url and model")
        return HttpReasoner(registry=registry, base_url=base_url, model=model, **kwargs)
    raise ValueError(f"unknown backend {backend!r}")
