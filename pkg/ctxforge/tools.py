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

""" Tools exposed to the agents

Unified API, see :class:`Tool`. Tools are grouped in a
:class:`ToolRegistry`, which validates and dispatches the calls parsed from
the agent messages. Dispatch never raises: every problem comes back as an
error :class:`ToolResult`, that the agent reads as a tool message.

Information seeking goes through adapters. Fixture adapters replay canned
records and are the default; live adapters use HTTP.
"""
import os
import json
import re
import logging
from dataclasses import dataclass

import requests
from bs4 import BeautifulSoup

from . import retrieval
from .context_store import DETAIL_LEVELS, PREVIEW_CHARS
from .agents import parse_usage_tags


__all__ = [
    'ToolSpec',
    'ToolResult',
    'Tool',
    'ToolRegistry',
    'ContextManageTool',
    'WikipediaSearchTool',
    'BrowserUseTool',
    'FinalAnswerTool',
    'CtxUsageSummaryTool',
    'PlanningTool',
    'FixtureWikipedia',
    'LiveWikipedia',
    'FixtureBrowser',
    'LiveBrowser',
    'page_text',
    'load_fixture',
    'render_listing',
    'dispatch',
    'executor_registry',
    'optimizer_registry',
]


PAYLOAD_CAP = 2000
TRUNCATION_MARKER = '... [truncated]'
PARAM_TYPES = ('string', 'integer', 'number', 'boolean', 'object', 'array')

EDIT_ACTIONS = ('create', 'add', 'update', 'remove', 'swap', 'merge',
                'set_active', 'get_resource', 'delete')
READ_ACTIONS = ('search', 'embedding_search', 'llm_search', 'list_resources')
VERSION_ACTIONS = ('create_branch', 'checkout', 'commit', 'merge_branch',
                   'list_branches', 'update_branch_info')
MODE_ACTIONS = {
    'admin': EDIT_ACTIONS + READ_ACTIONS + VERSION_ACTIONS,
    # Switching or creating contexts would route writes away from the
    # repository that gets committed
    'optimizer': tuple(a for a in EDIT_ACTIONS
                       if a not in ('create', 'set_active')) + READ_ACTIONS,
    'executor': ('get_resource',) + READ_ACTIONS,
}
EDITION_ONLY_RULE = (
    "You MUST ONLY modify the content. DO NOT use any branch management "
    "actions like create_branch, checkout, merge_branch, or commit. Changes "
    "will be committed automatically when you are done.")


def _cap(text, cap):
    if cap is None or len(text) <= cap:
        return text, False
    return text[:max(cap - len(TRUNCATION_MARKER), 0)] + TRUNCATION_MARKER, True


@dataclass(frozen=True)
class ToolSpec:
    """ Name, description and parameter schema of a tool

    `parameters` maps each argument name to a dict with keys ``type`` (one
    of ``PARAM_TYPES``), ``description`` and ``required``.
    """
    name: str
    description: str
    parameters: dict
    output_type: str = 'string'

    @property
    def properties(self):
        return json.dumps(
            {k: {'type': v['type'], 'description': v.get('description', ''),
                 'required': bool(v.get('required', False))}
             for k, v in self.parameters.items()},
            ensure_ascii=False)

    @property
    def required(self):
        return [k for k, v in self.parameters.items() if v.get('required')]


@dataclass(frozen=True)
class ToolResult:
    """ Outcome of a tool call: either a payload or an error """
    ok: bool
    payload: str = ''
    error: str = ''
    truncated: bool = False

    @classmethod
    def success(cls, payload, cap=PAYLOAD_CAP):
        payload, truncated = _cap(str(payload) or '(empty)', cap)
        return cls(True, payload, '', truncated)

    @classmethod
    def failure(cls, error, cap=PAYLOAD_CAP):
        error, truncated = _cap(str(error) or 'unknown error', cap)
        return cls(False, '', error, truncated)

    def render(self):
        return self.payload if self.ok else f"Error: {self.error}"


def _error_text(e):
    # KeyError wraps its message in quotes
    if isinstance(e, KeyError) and e.args:
        return str(e.args[0])
    return str(e)


class Tool(object):
    """ Abstract tool

    Child classes store their :class:`ToolSpec` in ``spec`` and implement
    ``run(trajectory, **arguments)``, returning the payload text. Exceptions
    raised by ``run`` become error results.
    """
    payload_cap = PAYLOAD_CAP

    def __call__(self, trajectory=None, **arguments):
        try:
            payload = self.run(trajectory, **arguments)
        except (KeyError, ValueError, RuntimeError, requests.RequestException
                ) as e:
            return ToolResult.failure(_error_text(e), self.payload_cap)
        return ToolResult.success(payload, self.payload_cap)

    def __getattr__(self, attr):
        message = ("Attempt to either use a bare 'Tool' object or to "
                   "use an incomplete child class.")
        if attr == 'spec':
            message += (" Child classes should store in 'spec' the ToolSpec "
                        "describing name, description and parameters")
        elif attr == 'run':
            message += (" Child classes should implement 'run', taking the "
                        "trajectory and the call arguments and returning "
                        "the payload text")
        else:
            raise AttributeError("'%s' object has no attribute '%s'"
                                 % (type(self).__name__, attr))
        raise NotImplementedError(message)


def _coerce(value, type_name):
    """ Value converted to `type_name`, or None if it does not fit """
    if type_name == 'string':
        return value if isinstance(value, str) else None
    if type_name == 'boolean':
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ('true', 'false'):
            return value.lower() == 'true'
        return None
    if type_name in ('integer', 'number'):
        if isinstance(value, bool):
            return None
        if isinstance(value, str):
            try:
                value = float(value.strip())
            except ValueError:
                return None
        if not isinstance(value, (int, float)):
            return None
        if type_name == 'integer':
            return int(value) if float(value).is_integer() else None
        return value
    if type_name == 'object':
        return value if isinstance(value, dict) else None
    return value if isinstance(value, list) else None


def _validate(spec, arguments):
    if not isinstance(arguments, dict):
        return None, "arguments must be a JSON object"
    for name in arguments:
        if name not in spec.parameters:
            return None, (f"unexpected argument '{name}' for {spec.name}. "
                          f"Accepted: {', '.join(spec.parameters)}")
    res = {}
    for name, param in spec.parameters.items():
        value = arguments.get(name)
        if value is None:
            if param.get('required'):
                return None, f"missing required argument '{name}'"
            continue
        coerced = _coerce(value, param['type'])
        if coerced is None:
            return None, (f"argument '{name}' must be of type "
                          f"{param['type']}, got {value!r}")
        res[name] = coerced
    return res, None


def dispatch(call, registry, trajectory=None):
    """ Validate and execute a tool call

    Parameters
    ----------
    call: ToolCall
    registry: ToolRegistry
    trajectory: Trajectory
        Passed to the tool, which may record its effects in it

    Returns
    -------
    result: ToolResult
        Unknown tools, schema violations and failures of the tool are all
        reported as error results.
    """
    try:
        tool = registry.get(call.name)
        if tool is None:
            return ToolResult.failure(
                f"Unknown tool '{call.name}'. Available tools: "
                f"{', '.join(registry.names)}")
        arguments, problem = _validate(tool.spec, call.arguments)
        if problem:
            return ToolResult.failure(problem)
        return tool(trajectory, **arguments)
    except Exception as e:
        logging.warning(f"Tool {getattr(call, 'name', call)!r} crashed: {e!r}")
        return ToolResult.failure(f"{getattr(call, 'name', 'tool')} failed: "
                                  f"{_error_text(e)}")


class ToolRegistry(tuple):
    """ Immutable collection of tools with unique names """

    def __new__(cls, *tools):
        return tuple.__new__(cls, tools)

    def __init__(self, *tools):
        names = [t.spec.name for t in tools]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"Duplicate tool names: {duplicates}")
        self.__by_name = {t.spec.name: t for t in tools}

    @property
    def names(self):
        return list(self.__by_name)

    @property
    def specs(self):
        return [t.spec for t in self]

    def get(self, name):
        return self.__by_name.get(name)

    def dispatch(self, call, trajectory=None):
        return dispatch(call, self, trajectory)


def render_listing(listing):
    """ Agent-readable text of a resource listing, one entry per line """
    if not listing:
        return ''
    lines = []
    for entry in listing:
        line = (f"[{entry['resource_id']}] {entry['summary']} "
                f"({entry['length']} chars)")
        if 'preview' in entry:
            line += f": {entry['preview']}"
        elif 'content' in entry:
            line += f": {entry['content']}"
        lines.append(line)
    return '\n'.join(lines)


def _render_hits(repository, hits):
    if not hits:
        return 'No matching resources.'
    snapshot = repository.snapshot()
    return '\n'.join(f"{h.resource_id}\t{h.score:.4f}\t"
                     f"{snapshot.get(h.resource_id).summary}" for h in hits)


def _param(type_name, description, required=False):
    return {'type': type_name, 'description': description,
            'required': required}


class ContextManageTool(Tool):
    """ Single entry point to every context action

    Parameters
    ----------
    session: ContextSession
        The actions address its active context
    mode: str
        ``optimizer`` (edit and read, no version control), ``executor``
        (read only) or ``admin`` (everything)
    provider: EmbeddingProvider
        Used by ``embedding_search``
    search_backend: ChatBackend
        Sub-agent of ``llm_search``
    preview_chars: int
        Characters shown per resource at the preview detail level
    """

    def __init__(self, session, mode='optimizer', provider=None,
                 search_backend=None, preview_chars=PREVIEW_CHARS,
                 payload_cap=PAYLOAD_CAP):
        if mode not in MODE_ACTIONS:
            raise ValueError(f"Unsupported mode {mode!r}. "
                             f"Choose between: {' '.join(MODE_ACTIONS)}")
        self.session = session
        self.mode = mode
        self.provider = provider
        self.search_backend = search_backend
        self.preview_chars = preview_chars
        self.payload_cap = payload_cap
        actions = MODE_ACTIONS[mode]
        self.spec = ToolSpec(
            'context_manage_tool',
            'Manage the structured context. Available actions: '
            + ', '.join(actions) + '.',
            {
                'action': _param('string', 'One of: ' + ', '.join(actions),
                                 True),
                'content': _param('string', 'Resource content (add)'),
                'summary': _param('string', 'Resource summary (add, merge)'),
                'source': _param('string', 'Provenance label (add)'),
                'resource_id': _param('string', 'Target resource'),
                'field': _param('string', 'content, summary or keywords '
                                '(update)'),
                'value': _param('string', 'New field value (update, '
                                'update_branch_info)'),
                'id_a': _param('string', 'First resource (swap, merge)'),
                'id_b': _param('string', 'Second resource (swap, merge)'),
                'query': _param('string', 'Search query'),
                'k': _param('integer', 'Number of search results'),
                'detail': _param('string', 'summary, preview or detail '
                                 '(list_resources)'),
                'limit': _param('integer', 'Maximum number of listed '
                                'resources'),
                'context_id': _param('string', 'Context to focus (set_active)'),
                'name': _param('string', 'Branch name'),
                'description': _param('string', 'Branch description'),
                'target': _param('string', 'Branch or commit (checkout)'),
                'message': _param('string', 'Commit message'),
                'source_branch': _param('string', 'Merged branch'),
                'target_branch': _param('string', 'Receiving branch'),
                'key': _param('string', 'Metadata key (update_branch_info)'),
            })

    @staticmethod
    def _need(arguments, *names):
        missing = [n for n in names if arguments.get(n) is None]
        if missing:
            raise ValueError(f"missing required argument "
                             f"'{missing[0]}' for this action")
        return [arguments[n] for n in names]

    def run(self, trajectory, action, **arguments):
        if action not in MODE_ACTIONS['admin']:
            raise ValueError(f"Unknown action {action!r}. Choose between: "
                             f"{', '.join(MODE_ACTIONS[self.mode])}")
        if action not in MODE_ACTIONS[self.mode]:
            if self.mode == 'optimizer' and action in VERSION_ACTIONS:
                raise RuntimeError(f"Action '{action}' refused. "
                                   + EDITION_ONLY_RULE)
            raise RuntimeError(f"Action '{action}' is not available to the "
                               f"{self.mode}. Choose between: "
                               f"{', '.join(MODE_ACTIONS[self.mode])}")
        return getattr(self, f"_{action}")(self.session.active, **arguments)

    def _create(self, repo, **kw):
        self.session.create_context()
        return f"Created the empty context {self.session.active_id}, now active."

    def _add(self, repo, **kw):
        content, = self._need(kw, 'content')
        resource_id = repo.add_resource(content, kw.get('summary', ''),
                                        kw.get('source', 'optimizer-authored'))
        return f"Added resource {resource_id}."

    def _update(self, repo, **kw):
        resource_id, field_name, value = self._need(kw, 'resource_id',
                                                    'field', 'value')
        repo.update_resource(resource_id, field_name, value)
        return f"Updated {field_name} of {resource_id}."

    def _remove(self, repo, **kw):
        resource_id, = self._need(kw, 'resource_id')
        repo.remove_resource(resource_id)
        return f"Removed resource {resource_id}."

    _delete = _remove

    def _swap(self, repo, **kw):
        id_a, id_b = self._need(kw, 'id_a', 'id_b')
        repo.swap_resources(id_a, id_b)
        return f"Swapped {id_a} and {id_b}."

    def _merge(self, repo, **kw):
        id_a, id_b = self._need(kw, 'id_a', 'id_b')
        resource_id = repo.merge_resources(id_a, id_b, kw.get('summary', ''))
        return f"Merged {id_a} and {id_b} into {resource_id}."

    def _set_active(self, repo, **kw):
        context_id, = self._need(kw, 'context_id')
        self.session.set_active(context_id)
        return f"Active context: {context_id}."

    def _get_resource(self, repo, **kw):
        resource_id, = self._need(kw, 'resource_id')
        r = repo.get_resource(resource_id)
        return (f"resource_id: {r.resource_id}\nsummary: {r.summary}\n"
                f"source: {r.source}\nlength: {r.length}\n"
                f"keywords: {', '.join(sorted(r.keywords))}\n"
                f"content:\n{r.content}")

    def _search(self, repo, **kw):
        query, = self._need(kw, 'query')
        return _render_hits(repo, retrieval.keyword_search(
            repo, query, kw.get('k', 5)))

    def _embedding_search(self, repo, **kw):
        query, = self._need(kw, 'query')
        return _render_hits(repo, retrieval.embedding_search(
            repo, query, kw.get('k', 5), self.provider))

    def _llm_search(self, repo, **kw):
        query, = self._need(kw, 'query')
        if self.search_backend is None:
            raise RuntimeError("llm_search needs a configured sub-agent "
                               "backend")
        return _render_hits(repo, retrieval.agent_search(
            repo, query, kw.get('k', 5), self.search_backend))

    def _list_resources(self, repo, **kw):
        detail = kw.get('detail', 'summary')
        if detail not in DETAIL_LEVELS:
            raise ValueError(f"Unsupported detail level {detail!r}. "
                             f"Choose between: {' '.join(DETAIL_LEVELS)}")
        listing = repo.list_resources(detail, kw.get('limit'),
                                      self.preview_chars)
        return render_listing(listing) or 'The context is empty.'

    def _create_branch(self, repo, **kw):
        name, = self._need(kw, 'name')
        repo.create_branch(name, kw.get('description', ''))
        return f"Created branch {name} at {repo.head}."

    def _checkout(self, repo, **kw):
        target, = self._need(kw, 'target')
        repo.checkout(target)
        return f"Checked out {target} ({repo.head})."

    def _commit(self, repo, **kw):
        return f"Committed {repo.commit(kw.get('message', ''))}."

    def _merge_branch(self, repo, **kw):
        source, target = self._need(kw, 'source_branch', 'target_branch')
        return f"Merged {source} into {target}: {repo.merge_branch(source, target)}."

    def _list_branches(self, repo, **kw):
        return '\n'.join(
            f"{b.name}\t{b.head}\t{b.description}\t"
            f"{json.dumps(b.metadata, sort_keys=True)}"
            for b in repo.list_branches())

    def _update_branch_info(self, repo, **kw):
        name, key, value = self._need(kw, 'name', 'key', 'value')
        repo.update_branch_info(name, key, value)
        return f"Branch {name}: {key} = {value}."


def load_fixture(directory, name):
    """ Records of the fixture file ``<directory>/<name>.json`` ({} if absent)

    Fixture files are JSON objects mapping a query or an instruction to its
    canned payload.
    """
    path = os.path.join(directory, f"{name}.json")
    if not os.path.exists(path):
        return {}
    with open(path, encoding='utf-8') as f:
        records = json.load(f)
    if not isinstance(records, dict):
        raise ValueError(f"Fixture {path} must hold a JSON object")
    return records


def _fixture_lookup(records, key):
    if key in records:
        return records[key]
    folded = {k.strip().casefold(): v for k, v in records.items()}
    return folded.get(key.strip().casefold())


class FixtureWikipedia(object):
    """ Canned encyclopedia: query -> list of {"title", "extract"} """

    def __init__(self, pages):
        self.pages = pages

    def search(self, query, max_pages):
        return [(p['title'], p['extract'])
                for p in (_fixture_lookup(self.pages, query) or [])][:max_pages]


class LiveWikipedia(object):
    """ MediaWiki API client returning plain-text extracts """

    def __init__(self, endpoint='https://en.wikipedia.org/w/api.php',
                 timeout=30):
        self.endpoint = endpoint
        self.timeout = timeout

    def _get(self, **params):
        resp = requests.get(self.endpoint, params=dict(params, format='json'),
                            timeout=self.timeout,
                            headers={'User-Agent': 'ctxforge'})
        resp.raise_for_status()
        return resp.json()

    def search(self, query, max_pages):
        found = self._get(action='query', list='search', srsearch=query,
                          srlimit=max_pages)['query']['search']
        titles = [p['title'] for p in found]
        if not titles:
            return []
        pages = self._get(action='query', prop='extracts', explaintext=1,
                          titles='|'.join(titles))['query']['pages']
        extracts = {p['title']: p.get('extract', '') for p in pages.values()}
        return [(t, extracts.get(t, '')) for t in titles]


class FixtureBrowser(object):
    """ Recorded browsing sessions: instruction -> extracted page text """

    def __init__(self, sessions):
        self.sessions = sessions

    def navigate(self, instruction):
        text = _fixture_lookup(self.sessions, instruction)
        if text is None:
            raise KeyError(f"no fixture for instruction {instruction!r}")
        return text


def page_text(markup):
    """ Visible text of an HTML page, whitespace collapsed """
    soup = BeautifulSoup(markup, 'html.parser')
    for element in soup(['script', 'style', 'noscript', 'template']):
        element.decompose()
    return re.sub(r'\s+', ' ', soup.get_text(separator=' ', strip=True))


class LiveBrowser(object):
    """ Fetches the first URL of the instruction and extracts its text """

    _URL_RE = re.compile(r'https?://[^\s\'"<>]+')

    def __init__(self, timeout=30):
        self.timeout = timeout

    def navigate(self, instruction):
        match = self._URL_RE.search(instruction)
        if match is None:
            raise ValueError("The live browser needs a URL in the instruction")
        resp = requests.get(match.group(0), timeout=self.timeout,
                            headers={'User-Agent': 'ctxforge'})
        resp.raise_for_status()
        return page_text(resp.text)


class WikipediaSearchTool(Tool):
    """ Titles and extracts of encyclopedia pages """

    def __init__(self, adapter, extract_chars=PAYLOAD_CAP,
                 payload_cap=PAYLOAD_CAP):
        self.adapter = adapter
        self.extract_chars = extract_chars
        self.payload_cap = payload_cap
        self.spec = ToolSpec(
            'wikipedia_search_tool',
            'Search Wikipedia and return the titles and extracts of the '
            'matching pages.',
            {'query': _param('string', 'Search query', True),
             'max_pages': _param('integer', 'Maximum number of pages '
                                 '(default 3)')})

    def run(self, trajectory, query, max_pages=3):
        try:
            pages = self.adapter.search(query, max_pages)
        except requests.RequestException as e:
            raise RuntimeError(f"network failure: {e}") from e
        if not pages:
            return f"No matches for {query!r}."
        return '\n\n'.join(f"## {title}\n{_cap(extract, self.extract_chars)[0]}"
                           for title, extract in pages)


class BrowserUseTool(Tool):
    """ Text of the page reached by following a browsing instruction """

    def __init__(self, adapter, payload_cap=PAYLOAD_CAP):
        self.adapter = adapter
        self.payload_cap = payload_cap
        self.spec = ToolSpec(
            'browser_use_tool',
            'Browse the web following a natural language instruction and '
            'return the extracted page text.',
            {'instruction': _param('string', 'What to look for and where',
                                   True)})

    def run(self, trajectory, instruction):
        try:
            return self.adapter.navigate(instruction)
        except requests.RequestException as e:
            raise RuntimeError(f"navigation failure: {e}") from e


class FinalAnswerTool(Tool):
    spec = ToolSpec('final_answer_tool',
                    'Submit the final answer. It is the only way to complete '
                    'the task.',
                    {'answer': _param('string', 'The final answer', True)})

    def run(self, trajectory, answer):
        if trajectory is not None:
            trajectory.final_answer = answer
        return 'Final answer recorded.'


class CtxUsageSummaryTool(Tool):
    """ One-time report of how the context was used (training mode only) """

    spec = ToolSpec('ctx_usage_summary_tool',
                    'Report how you used the context, tagging resources with '
                    '\\helpful_resource_id{...} or \\unhelpful_resource_id{...}.'
                    ' Call it only one time.',
                    {'summary': _param('string', 'Usage summary', True)})

    def __init__(self, mode='training'):
        self.mode = mode

    def run(self, trajectory, summary):
        if self.mode != 'training':
            raise RuntimeError("ctx_usage_summary_tool is only available in "
                               "training mode")
        if trajectory is not None and trajectory.usage_summary is not None:
            raise RuntimeError("You must call ctx_usage_summary_tool only one "
                               "time.")
        usage = parse_usage_tags(summary)
        if trajectory is not None:
            trajectory.usage_summary, trajectory.usage = summary, usage
        return (f"Usage summary recorded. helpful: "
                f"{', '.join(sorted(usage.helpful_ids)) or '-'}; unhelpful: "
                f"{', '.join(sorted(usage.unhelpful_ids)) or '-'}")


class PlanningTool(Tool):
    spec = ToolSpec('planning_tool',
                    'Record a clear actionable plan before editing the '
                    'context.',
                    {'plan': _param('string', 'The plan', True)})

    def run(self, trajectory, plan):
        if not plan.strip():
            return 'Warning: empty plan, nothing recorded.'
        if trajectory is not None:
            trajectory.plans.append(plan)
        return f"Plan recorded:\n{plan}"


def executor_registry(session, mode='inference', provider=None,
                      search_backend=None, preview_chars=PREVIEW_CHARS,
                      payload_cap=PAYLOAD_CAP):
    """ Read-only context access, final answer and, in training mode, the
    usage summary """
    tools = [ContextManageTool(session, 'executor', provider, search_backend,
                               preview_chars, payload_cap)]
    if mode == 'training':
        tools.append(CtxUsageSummaryTool('training'))
    tools.append(FinalAnswerTool())
    return ToolRegistry(*tools)


def optimizer_registry(session, provider=None, search_backend=None,
                       wikipedia=None, browser=None,
                       preview_chars=PREVIEW_CHARS, payload_cap=PAYLOAD_CAP):
    """ Edit-only context access, planning, final answer and, when adapters
    are given, the information seeking tools """
    tools = [ContextManageTool(session, 'optimizer', provider, search_backend,
                               preview_chars, payload_cap),
             PlanningTool()]
    if wikipedia is not None:
        tools.append(WikipediaSearchTool(wikipedia, payload_cap=payload_cap))
    if browser is not None:
        tools.append(BrowserUseTool(browser, payload_cap=payload_cap))
    tools.append(FinalAnswerTool())
    return ToolRegistry(*tools)
