# ctxforge
# Copyright (C) 2026 the ctxforge developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.

""" Agent loops

Chat backends, prompt rendering, parsing of the action-blob protocol and of
the resource usage tags, and :func:`run_agent`, the loop shared by the
executor and the optimizer agents.

Agents talk plain text. A tool call is an *action blob*, a JSON object with
``name`` and ``arguments`` anywhere in the assistant message; the last
well-formed one wins.
"""
import os
import json
import re
import time
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import jinja2
import requests


__all__ = [
    'Message',
    'ToolCall',
    'UsageSummary',
    'Trajectory',
    'PackageEntry',
    'OptimizerPackage',
    'AgentConfig',
    'BackendError',
    'ChatBackend',
    'ScriptedBackend',
    'LiveBackend',
    'message_hash',
    'render_template',
    'render_executor_prompt',
    'render_optimizer_system_prompt',
    'render_optimizer_prompt',
    'parse_action_blob',
    'serialize_tool_call',
    'parse_usage_tags',
    'run_agent',
]


ROLES = ('system', 'user', 'assistant', 'tool')
MODES = ('training', 'inference')
API_KEY_ENV = 'CTXFORGE_API_KEY'
TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), 'templates')

DUPLICATE_CALL_RULE = ("DO NOT call the same tool with the exact same "
                       "parameters twice.")
NO_ACTION_MESSAGE = ("Error: no valid action blob found. You MUST ALWAYS call "
                     "a tool in your response. To finish your turn, call "
                     "final_answer_tool.")
EMPTY_PREVIEW = '(empty context)'

_USAGE_TAG_RE = re.compile(
    r'\\?\b(unhelpful|helpful)_resource_id\{([^{}]*)\}')

_JINJA_ENV = jinja2.Environment(
    loader=jinja2.FileSystemLoader(TEMPLATE_DIR),
    undefined=jinja2.StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=False,
    autoescape=False,
)


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"Unsupported role {self.role!r}. "
                             f"Choose between: {' '.join(ROLES)}")


@dataclass
class ToolCall:
    name: str
    arguments: dict = field(default_factory=dict)
    raw: str = field(default='', compare=False)


@dataclass(frozen=True)
class UsageSummary:
    helpful_ids: frozenset = frozenset()
    unhelpful_ids: frozenset = frozenset()
    free_text: str = ''


class Trajectory(object):
    """ Record of one agent run

    Attributes
    ----------
    messages: list of Message
        Starts with exactly one system message
    tool_calls: list of ToolCall
        Every parsed call, rejected duplicates included
    final_answer: str or None
        Set by the final answer tool
    usage_summary: str or None
        Raw text passed to the usage summary tool, parsed in `usage`
    status: str
        ``running`` while the loop is active, then one of ``completed``,
        ``truncated``, ``failed``
    step_count: int
        Number of backend calls issued
    plans: list of str
        Plans recorded by the planning tool
    """

    def __init__(self, role='executor', mode=None):
        self.role = role
        self.mode = mode
        self.messages = []
        self.tool_calls = []
        self.final_answer = None
        self.usage_summary = None
        self.usage = None
        self.plans = []
        self.status = 'running'
        self.step_count = 0
        self.error = None

    @property
    def token_estimate(self):
        return sum(len(m.content) for m in self.messages) // 4

    @property
    def output(self):
        """ Final answer, empty string when the run did not complete """
        return self.final_answer if self.status == 'completed' else ''

    def to_record(self):
        return {
            'role': self.role,
            'mode': self.mode,
            'status': self.status,
            'step_count': self.step_count,
            'token_estimate': self.token_estimate,
            'final_answer': self.final_answer,
            'usage_summary': self.usage_summary,
            'plans': self.plans,
            'error': self.error,
            'messages': [{'role': m.role, 'content': m.content}
                         for m in self.messages],
        }


@dataclass
class PackageEntry:
    task: str
    executor_output: str
    reference: Optional[str] = None
    evaluation_result: Optional[str] = None
    context_usage_summary: Optional[str] = None


@dataclass
class OptimizerPackage:
    """ Data package handed to the optimizer for one update step

    `update_history` and `sibling_summaries` hold ``(summary, score)`` pairs,
    the score being None when the state was never validated.
    """
    context_preview: str
    entries: list
    update_history: list = field(default_factory=list)
    sibling_summaries: list = field(default_factory=list)
    information_seeking: bool = False


@dataclass
class AgentConfig:
    backend: object
    system_prompt: str
    role: str = 'executor'
    mode: Optional[str] = None
    max_steps: int = 12
    retries: int = 3
    backoff: float = 1.0


class BackendError(RuntimeError):
    """ Retryable failure of a chat backend or embedding provider """


class ChatBackend(object):
    """ Abstract chat backend

    Child classes implement ``complete(messages) -> str``.
    """

    def __getattr__(self, attr):
        message = ("Attempt to either use a bare 'ChatBackend' object or to "
                   "use an incomplete child class.")
        if attr == 'complete':
            message += (" Child classes should implement 'complete', taking "
                        "the ordered list of messages and returning the "
                        "assistant text")
        else:
            raise AttributeError("'%s' object has no attribute '%s'"
                                 % (type(self).__name__, attr))
        raise NotImplementedError(message)


def message_hash(messages):
    """ Stable hash of a message list, key of the scripted backends """
    payload = json.dumps([[m.role, m.content] for m in messages],
                         ensure_ascii=False, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


class ScriptedBackend(ChatBackend):
    """ Offline backend replaying canned responses

    Parameters
    ----------
    responses: dict
        Maps :func:`message_hash` of the incoming message list to the reply.
        Looked up first.
    responder: callable
        ``responder(messages) -> str``, used when no canned reply matches
    script: list of str
        Replies consumed in order when neither of the above applies

    A reply that is an exception instance is raised instead of returned,
    which is how tests simulate backend failures.
    """

    def __init__(self, responses=None, responder=None, script=None):
        self.responses = dict(responses or {})
        self.responder = responder
        self.script = list(script or [])
        self.calls = 0
        self.history = []

    def complete(self, messages):
        self.calls += 1
        self.history.append(list(messages))
        key = message_hash(messages)
        if key in self.responses:
            reply = self.responses[key]
        elif self.responder is not None:
            reply = self.responder(messages)
        elif self.script:
            reply = self.script.pop(0)
        else:
            raise BackendError(f"No scripted response for messages {key[:12]}")
        if isinstance(reply, Exception):
            raise reply
        return reply


class LiveBackend(ChatBackend):
    """ HTTP adapter for OpenAI-compatible chat completion endpoints

    The bearer token is read from the environment variable
    ``CTXFORGE_API_KEY``.
    """

    def __init__(self, endpoint, model, timeout=120, temperature=0.0,
                 api_key_env=API_KEY_ENV):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.temperature = temperature
        self.api_key = os.environ.get(api_key_env)
        if not self.api_key:
            raise ValueError(f"The live backend requires the environment "
                             f"variable {api_key_env}")

    def complete(self, messages):
        # The tool role of the text protocol has no wire counterpart
        wire = [{'role': 'user' if m.role == 'tool' else m.role,
                 'content': (f"Observation:\n{m.content}"
                             if m.role == 'tool' else m.content)}
                for m in messages]
        try:
            resp = requests.post(
                self.endpoint,
                headers={'Authorization': f"Bearer {self.api_key}"},
                json={'model': self.model, 'messages': wire,
                      'temperature': self.temperature},
                timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()['choices'][0]['message']['content'] or ''
        except (requests.RequestException, KeyError, IndexError,
                ValueError) as e:
            raise BackendError(f"{self.endpoint}: {e}") from e


def render_template(name, **values):
    """ Render one of the bundled jinja2 templates (strict on missing values) """
    return _JINJA_ENV.get_template(name).render(**values)


def _check_values(**values):
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ValueError(f"missing placeholder value: {', '.join(missing)}")


def render_executor_prompt(context_preview, task, tools, mode='inference'):
    """ Executor prompt

    Parameters
    ----------
    context_preview: str
        Rendered preview of the context, possibly empty
    task: str
        Task to solve
    tools: list of ToolSpec
        Tools listed in the prompt
    mode: str
        ``training`` adds the usage summary step, ``inference`` omits it

    Returns
    -------
    prompt: str
    """
    _check_values(context_preview=context_preview, task=task, tools=tools)
    if mode not in MODES:
        raise ValueError(f"Unsupported mode {mode!r}. "
                         f"Choose between: {' '.join(MODES)}")
    return render_template('executor.j2',
                           context_preview=context_preview or EMPTY_PREVIEW,
                           task=task, tools=tools,
                           training=(mode == 'training'))


def render_optimizer_system_prompt(tools):
    _check_values(tools=tools)
    return render_template('optimizer_system.j2', tools=tools)


def _scored(items):
    return [{'summary': summary, 'score': score} for summary, score in items]


def render_optimizer_prompt(package):
    """ Optimizer task instruction carrying the data package

    Sections: context update history, context preview, executor
    trajectories and feedback, and, when siblings were already explored in
    the same step, their summaries with the request to try a different
    strategy.
    """
    if not package.entries:
        raise ValueError("empty batch: the optimizer package needs at least "
                         "one trajectory")
    _check_values(context_preview=package.context_preview)
    return render_template(
        'optimizer_task.j2',
        update_history=_scored(package.update_history),
        context_preview=package.context_preview or EMPTY_PREVIEW,
        entries=package.entries,
        sibling_summaries=_scored(package.sibling_summaries),
        information_seeking=package.information_seeking)


def parse_action_blob(text):
    """ Last well-formed action blob in `text`

    An action blob is a JSON object with a nonempty string ``name`` and an
    optional object ``arguments``. Objects nested in a decoded one are not
    considered on their own.

    Returns
    -------
    call: ToolCall or None
    """
    decoder = json.JSONDecoder()
    found = None
    pos = 0
    while True:
        start = text.find('{', pos)
        if start < 0:
            return found
        try:
            obj, end = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        pos = end
        if not isinstance(obj, dict):
            continue
        name, arguments = obj.get('name'), obj.get('arguments', {})
        if isinstance(name, str) and name and isinstance(arguments, dict):
            found = ToolCall(name, arguments, text[start:end])


def serialize_tool_call(call):
    return 'Action:\n' + json.dumps(
        {'name': call.name, 'arguments': call.arguments},
        ensure_ascii=False, indent=2)


def parse_usage_tags(summary_text):
    """ Resource ids tagged as helpful or unhelpful

    Tags look like ``\\helpful_resource_id{r1}``; braces may list several
    ids separated by commas or spaces. An id tagged both ways counts as
    unhelpful.
    """
    helpful, unhelpful = set(), set()
    for kind, body in _USAGE_TAG_RE.findall(summary_text):
        ids = {i for i in re.split(r'[,\s]+', body) if i}
        (unhelpful if kind == 'unhelpful' else helpful).update(ids)
    both = helpful & unhelpful
    if both:
        logging.warning(f"Resources tagged both helpful and unhelpful, "
                        f"counted as unhelpful: {sorted(both)}")
    return UsageSummary(frozenset(helpful - both), frozenset(unhelpful),
                        summary_text)


def _complete(config, trajectory, max_steps):
    # None when the step budget runs out before a reply
    last_error = None
    for attempt in range(config.retries + 1):
        if trajectory.step_count >= max_steps:
            return None
        trajectory.step_count += 1
        try:
            return config.backend.complete(list(trajectory.messages))
        except BackendError as e:
            last_error = e
            logging.warning(f"{config.role} backend failure "
                            f"(attempt {attempt + 1}): {e}")
            if attempt < config.retries and config.backoff:
                time.sleep(config.backoff * 2**attempt)
    raise BackendError(f"backend failed after {config.retries} retries: "
                       f"{last_error}")


def run_agent(config, initial_prompt, tool_registry, max_steps=None):
    """ Run an agent until it submits a final answer

    Parameters
    ----------
    config: AgentConfig
        Backend, system prompt, retry policy and default step budget
    initial_prompt: str
        First user message
    tool_registry: ToolRegistry
        Tools the agent can call. Calls are routed through its ``dispatch``.
    max_steps: int
        Maximum number of backend calls (retries included). Defaults to
        ``config.max_steps``.

    Returns
    -------
    trajectory: Trajectory
        ``completed`` when the final answer tool succeeded, ``truncated``
        when the step budget ran out, ``failed`` when the backend kept
        failing.
    """
    max_steps = config.max_steps if max_steps is None else max_steps
    traj = Trajectory(config.role, config.mode)
    traj.messages = [Message('system', config.system_prompt),
                     Message('user', initial_prompt)]
    seen = set()
    while traj.step_count < max_steps:
        try:
            text = _complete(config, traj, max_steps)
        except BackendError as e:
            traj.status, traj.error = 'failed', str(e)
            return traj
        if text is None:
            break
        traj.messages.append(Message('assistant', text))
        call = parse_action_blob(text)
        if call is None:
            traj.messages.append(Message('tool', NO_ACTION_MESSAGE))
            continue
        traj.tool_calls.append(call)
        key = (call.name, json.dumps(call.arguments, sort_keys=True,
                                     default=str))
        if key in seen:
            traj.messages.append(Message('tool',
                                         f"Error: {DUPLICATE_CALL_RULE}"))
            continue
        seen.add(key)
        result = tool_registry.dispatch(call, traj)
        traj.messages.append(Message('tool', result.render()))
        if traj.final_answer is not None:
            traj.status = 'completed'
            return traj
    traj.status = 'truncated'
    return traj
