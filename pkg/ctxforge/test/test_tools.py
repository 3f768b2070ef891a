#!/usr/bin/env python
import os
from itertools import product
import unittest
from parameterized import parameterized
from ctxforge.agents import ToolCall, Trajectory, ScriptedBackend
from ctxforge.context_store import ContextRepository, ContextSession
from ctxforge.sim_env import FIXTURE_DIR
from ctxforge.tools import (
    ToolSpec, ToolResult, Tool, ToolRegistry, ContextManageTool,
    FinalAnswerTool, CtxUsageSummaryTool, WikipediaSearchTool,
    BrowserUseTool, FixtureWikipedia, FixtureBrowser, load_fixture,
    LiveBrowser, executor_registry, optimizer_registry, render_listing,
    dispatch, page_text,
    PAYLOAD_CAP, TRUNCATION_MARKER, VERSION_ACTIONS, EDITION_ONLY_RULE)


def _get_session(tag):
    repo = ContextRepository()
    if tag == 'filled':
        repo.add_resource('The verb comes first in declarative clauses.',
                          'word order rule')
        repo.add_resource('kalu means water', 'dictionary entry')
    elif tag != 'empty':
        raise ValueError('Unsupported tag: %s' % tag)
    return ContextSession(repo)


def _call(registry, tool_name, trajectory=None, **arguments):
    return registry.dispatch(ToolCall(tool_name, arguments), trajectory)


def _ctx(registry, trajectory=None, **arguments):
    return _call(registry, 'context_manage_tool', trajectory, **arguments)


class TestDispatch(unittest.TestCase):

    def setUp(self):
        self.session = _get_session('filled')
        self.registry = optimizer_registry(self.session)

    def test_unknown_tool(self):
        result = _call(self.registry, 'teleport_tool')
        self.assertFalse(result.ok)
        self.assertIn('teleport_tool', result.error)
        for name in self.registry.names:
            self.assertIn(name, result.error)

    def test_missing_argument(self):
        result = _call(self.registry, 'final_answer_tool')
        self.assertFalse(result.ok)
        self.assertIn("missing required argument 'answer'", result.error)

    def test_unexpected_argument(self):
        result = _call(self.registry, 'final_answer_tool', answer='a',
                       confidence='high')
        self.assertIn("unexpected argument 'confidence'", result.error)

    @parameterized.expand([('3', True), (3.0, True), ('three', False),
                           (True, False), (2.5, False)])
    def test_integer_coercion(self, k, ok):
        result = _ctx(self.registry, action='search', query='verb', k=k)
        self.assertEqual(result.ok, ok)

    def test_add_payload(self):
        result = _ctx(self.registry, action='add', content='new fact',
                      summary='a fact')
        self.assertTrue(result.ok)
        new_id = self.session.active.snapshot().ids[-1]
        self.assertIn(new_id, result.payload)

    def test_payload_cap(self):
        self.registry = optimizer_registry(self.session, payload_cap=100)
        _ctx(self.registry, action='add', content='y' * 500)
        new_id = self.session.active.snapshot().ids[-1]
        result = _ctx(self.registry, action='get_resource', resource_id=new_id)
        self.assertTrue(result.truncated)
        self.assertEqual(len(result.payload), 100)
        self.assertTrue(result.payload.endswith(TRUNCATION_MARKER))

    def test_render(self):
        self.assertEqual(ToolResult.failure('boom').render(), 'Error: boom')
        self.assertEqual(ToolResult.success('fine').render(), 'fine')
        text = ToolResult.success('x' * (PAYLOAD_CAP + 1)).payload
        self.assertEqual(len(text), PAYLOAD_CAP)

    def test_crashing_tool(self):
        class Crashing(Tool):
            spec = ToolSpec('crash_tool', 'Crashes', {})

            def run(self, trajectory):
                raise ZeroDivisionError('division by zero')

        with self.assertLogs(level='WARNING'):
            result = dispatch(ToolCall('crash_tool'), ToolRegistry(Crashing()))
        self.assertFalse(result.ok)
        self.assertIn('division by zero', result.error)

    def test_registry(self):
        with self.assertRaises(ValueError):
            ToolRegistry(FinalAnswerTool(), FinalAnswerTool())
        self.assertEqual(self.registry.names,
                         ['context_manage_tool', 'planning_tool',
                          'final_answer_tool'])
        self.assertIsNone(self.registry.get('nothing'))

    def test_bare_tool(self):
        with self.assertRaises(NotImplementedError):
            Tool().spec

    def test_spec(self):
        spec = FinalAnswerTool.spec
        self.assertEqual(spec.required, ['answer'])
        self.assertIn('"answer"', spec.properties)


class TestContextManageTool(unittest.TestCase):

    def setUp(self):
        self.session = _get_session('filled')
        self.repo = self.session.active
        self.ids = self.repo.snapshot().ids
        self.registry = optimizer_registry(self.session)

    @parameterized.expand(VERSION_ACTIONS)
    def test_optimizer_refuses_version_control(self, action):
        self.repo.commit('before')
        before = ([b.to_record() for b in self.repo.list_branches()],
                  len(self.repo.commits), self.repo.snapshot().snapshot_id)
        result = _ctx(self.registry, action=action, name='b', target='main',
                      message='m', source_branch='main', target_branch='main',
                      key='k', value='v')
        self.assertFalse(result.ok)
        self.assertIn('refused', result.error)
        self.assertIn(EDITION_ONLY_RULE, result.error)
        after = ([b.to_record() for b in self.repo.list_branches()],
                 len(self.repo.commits), self.repo.snapshot().snapshot_id)
        self.assertEqual(before, after)

    @parameterized.expand(['create', 'set_active'])
    def test_optimizer_cannot_switch_context(self, action):
        result = _ctx(self.registry, action=action, context_id='ctx-0')
        self.assertFalse(result.ok)
        self.assertEqual(self.session.context_ids, ['ctx-0'])

    def test_executor_is_read_only(self):
        registry = executor_registry(self.session)
        result = _ctx(registry, action='add', content='not allowed')
        self.assertFalse(result.ok)
        self.assertEqual(self.repo.snapshot().ids, self.ids)
        self.assertTrue(_ctx(registry, action='get_resource',
                             resource_id=self.ids[0]).ok)

    def test_edit_actions(self):
        r = self.registry
        self.assertTrue(_ctx(r, action='update', resource_id=self.ids[1],
                             field='content', value='kalu means river').ok)
        self.assertEqual(self.repo.get_resource(self.ids[1]).content,
                         'kalu means river')
        self.assertTrue(_ctx(r, action='swap', id_a=self.ids[0],
                             id_b=self.ids[1]).ok)
        self.assertEqual(self.repo.snapshot().ids, self.ids[::-1])
        result = _ctx(r, action='merge', id_a=self.ids[0], id_b=self.ids[1],
                      summary='merged')
        self.assertTrue(result.ok)
        self.assertEqual(len(self.repo.snapshot()), 1)
        merged = self.repo.snapshot().ids[0]
        self.assertIn(merged, result.payload)
        self.assertTrue(_ctx(r, action='delete', resource_id=merged).ok)
        self.assertEqual(len(self.repo.snapshot()), 0)

    def test_action_errors(self):
        result = _ctx(self.registry, action='remove', resource_id='res-9999')
        self.assertEqual(result.error, 'no such resource: res-9999')
        result = _ctx(self.registry, action='add')
        self.assertIn("'content'", result.error)
        result = _ctx(self.registry, action='fly')
        self.assertIn('Unknown action', result.error)

    def test_get_resource(self):
        result = _ctx(self.registry, action='get_resource',
                      resource_id=self.ids[0])
        self.assertIn('The verb comes first in declarative clauses.',
                      result.payload)
        self.assertIn('summary: word order rule', result.payload)

    @parameterized.expand(product(['summary', 'preview', 'detail'],
                                  ['filled', 'empty']))
    def test_list_resources(self, detail, tag):
        session = _get_session(tag)
        result = _ctx(optimizer_registry(session), action='list_resources',
                      detail=detail)
        self.assertTrue(result.ok)
        if tag == 'empty':
            self.assertEqual(result.payload, 'The context is empty.')
        else:
            listing = session.active.list_resources(detail)
            self.assertEqual(result.payload, render_listing(listing))
            self.assertEqual(len(result.payload.splitlines()), 2)

    def test_searches(self):
        result = _ctx(self.registry, action='search', query='verb clauses')
        self.assertTrue(result.payload.startswith(self.ids[0] + '\t'))
        result = _ctx(self.registry, action='embedding_search',
                      query='kalu means water', k=1)
        self.assertTrue(result.payload.startswith(self.ids[1] + '\t'))
        result = _ctx(self.registry, action='search', query='nothing here')
        self.assertEqual(result.payload, 'No matching resources.')

    def test_llm_search(self):
        result = _ctx(self.registry, action='llm_search', query='water')
        self.assertFalse(result.ok)
        backend = ScriptedBackend(script=[f'["{self.ids[1]}"]'])
        registry = optimizer_registry(self.session, search_backend=backend)
        result = _ctx(registry, action='llm_search', query='water')
        self.assertEqual(result.payload.split('\t')[0], self.ids[1])

    def test_admin(self):
        tool = ContextManageTool(self.session, 'admin')
        registry = ToolRegistry(tool)
        self.assertTrue(_ctx(registry, action='create_branch', name='side').ok)
        self.assertTrue(_ctx(registry, action='commit', message='m').ok)
        self.assertIn('side', _ctx(registry, action='list_branches').payload)
        self.assertTrue(_ctx(registry, action='create').ok)
        self.assertEqual(len(self.session.active.snapshot()), 0)
        self.assertTrue(_ctx(registry, action='set_active',
                             context_id='ctx-0').ok)
        self.assertEqual(self.session.active, self.repo)


class TestOtherTools(unittest.TestCase):

    def setUp(self):
        fixtures = os.path.join(FIXTURE_DIR, 'local_optima')
        self.registry = optimizer_registry(
            _get_session('empty'),
            wikipedia=FixtureWikipedia(load_fixture(fixtures, 'wikipedia')),
            browser=FixtureBrowser(load_fixture(fixtures, 'browser')))

    def test_wikipedia(self):
        result = _call(self.registry, 'wikipedia_search_tool',
                       query='local_optima rules-and-examples')
        self.assertIn('## Grammar', result.payload)
        self.assertIn('## Word order', result.payload)
        result = _call(self.registry, 'wikipedia_search_tool',
                       query='local_optima rules-and-examples', max_pages=1)
        self.assertNotIn('## Word order', result.payload)

    def test_wikipedia_no_match(self):
        result = _call(self.registry, 'wikipedia_search_tool', query='zzz')
        self.assertTrue(result.ok)
        self.assertEqual(result.payload, "No matches for 'zzz'.")

    def test_wikipedia_extract_cap(self):
        tool = WikipediaSearchTool(FixtureWikipedia(
            {'long': [{'title': 'Long', 'extract': 'w' * 300}]}),
            extract_chars=50)
        result = tool(None, query='long')
        self.assertEqual(result.payload,
                         '## Long\n' + 'w' * (50 - len(TRUNCATION_MARKER))
                         + TRUNCATION_MARKER)

    def test_browser(self):
        result = _call(self.registry, 'browser_use_tool', instruction=(
            'Open the reference grammar of the language and read the chapter '
            'on word order'))
        self.assertTrue(result.payload.startswith('Chapter 4.'))
        result = _call(self.registry, 'browser_use_tool',
                       instruction='Go somewhere unknown')
        self.assertFalse(result.ok)
        self.assertIn('no fixture for instruction', result.error)

    def test_load_missing_fixture(self):
        self.assertEqual(load_fixture(FIXTURE_DIR, 'nothing'), {})

    @parameterized.expand([
        ('<p>Fish &amp; chips</p>\n<p>served   hot</p>',
         'Fish & chips served hot'),
        ('<script>if (a<b) {leak()}</script><p>kept</p>', 'kept'),
        ('<style>p {color: red}</style><p>kept</p>', 'kept'),
        ('<!-- hidden --><p>kept</p>', 'kept'),
        ('<p title="1<2">kept</p>', 'kept'),
        ('', ''),
    ])
    def test_page_text(self, markup, expected):
        self.assertEqual(page_text(markup), expected)

    def test_live_browser_needs_url(self):
        with self.assertRaises(ValueError):
            LiveBrowser().navigate('open the grammar page')

    def test_browser_tool_adapter(self):
        tool = BrowserUseTool(FixtureBrowser({'go': 'page'}))
        self.assertEqual(tool(None, instruction='GO ').payload, 'page')

    def test_final_answer(self):
        traj = Trajectory()
        result = _call(self.registry, 'final_answer_tool', traj, answer='42')
        self.assertEqual(result.payload, 'Final answer recorded.')
        self.assertEqual(traj.final_answer, '42')

    def test_planning(self):
        traj = Trajectory()
        self.assertIn('Warning', _call(self.registry, 'planning_tool', traj,
                                       plan='  ').payload)
        _call(self.registry, 'planning_tool', traj, plan='add rules')
        self.assertEqual(traj.plans, ['add rules'])


class TestUsageSummary(unittest.TestCase):

    def test_once(self):
        registry = executor_registry(_get_session('filled'), 'training')
        traj = Trajectory(mode='training')
        result = _call(registry, 'ctx_usage_summary_tool', traj,
                       summary='\\helpful_resource_id{res-0001}')
        self.assertTrue(result.ok)
        self.assertEqual(traj.usage.helpful_ids, {'res-0001'})
        result = _call(registry, 'ctx_usage_summary_tool', traj,
                       summary='\\unhelpful_resource_id{res-0002}')
        self.assertFalse(result.ok)
        self.assertIn('only one time', result.error)
        self.assertEqual(traj.usage.unhelpful_ids, frozenset())

    def test_inference(self):
        registry = executor_registry(_get_session('filled'), 'inference')
        self.assertNotIn('ctx_usage_summary_tool', registry.names)
        result = CtxUsageSummaryTool('inference')(Trajectory(), summary='x')
        self.assertFalse(result.ok)


if __name__ == '__main__':
    unittest.main()
