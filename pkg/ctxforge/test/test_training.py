#!/usr/bin/env python
import os
import tempfile
from itertools import count, cycle
import unittest
from parameterized import parameterized
import numpy as np
from ctxforge.agents import (ToolCall, ScriptedBackend, BackendError,
                             serialize_tool_call)
from ctxforge.context_store import ContextRepository, ROOT_BRANCH
from ctxforge.tools import FixtureWikipedia, FixtureBrowser
from ctxforge.sim_env import (scenario_local_optima, scenario_pollution,
                              scenario_random)
from ctxforge.training import (
    TrainConfig, LearnableBatch, CandidateContext, BeamState, BatchSampler,
    RunLedger,
    Executor, ContextTrainer, compute_reward, select_top_k, verbose_callback,
    train, NO_OP_SUMMARY)


def _get_scenario(tag):
    if tag == 'local_optima':
        return scenario_local_optima()
    elif tag == 'pollution':
        return scenario_pollution()
    elif tag.startswith('random'):
        return scenario_random(int(tag.split('_')[1]))
    raise ValueError('Unsupported tag: %s' % tag)


def _get_config(tag, **kwargs):
    defaults = dict(beam_width=2, branching=3, steps_per_child=1, epochs=100,
                    batch_size=2, max_global_steps=3)
    defaults.update(kwargs)
    return TrainConfig(tag, **defaults)


def _executor(backend):
    return Executor(backend, preview_strategy='full', backoff=0)


def _get_trainer(scenario, mode='beam', **kwargs):
    return ContextTrainer(_executor(scenario.executor_backend()),
                          scenario.optimizer_backend(), scenario.world.metric,
                          _get_config(mode, **kwargs), backoff=0)


def _answer(text):
    return serialize_tool_call(ToolCall('final_answer_tool',
                                        {'answer': text}))


def _constant_executor(text='x'):
    return ScriptedBackend(responder=lambda messages: _answer(text))


def _unique_optimizer():
    """ Adds one new resource per optimizer run, then concludes """
    runs = count()

    def responder(messages):
        turn = sum(m.role == 'assistant' for m in messages)
        if turn == 0:
            return serialize_tool_call(ToolCall('context_manage_tool', {
                'action': 'add', 'content': f"note number {next(runs)}"}))
        return _answer('added a note')
    return ScriptedBackend(responder=responder)


def _candidate(branch, score, created):
    return CandidateContext(branch, f"head-{branch}", score, None, '',
                            created)


class TestSelection(unittest.TestCase):

    def test_improvement(self):
        best = _candidate('best', 0.5, 0)
        children = [_candidate(f"c{i}", s, i + 1)
                    for i, s in enumerate([0.2, 0.7, 0.6])]
        beam, new_best = select_top_k(children, best, 2)
        self.assertEqual([c.branch for c in beam], ['c1', 'c2'])
        self.assertIs(new_best, children[1])

    def test_elitism(self):
        best = _candidate('best', 0.5, 0)
        children = [_candidate(f"c{i}", s, i + 1)
                    for i, s in enumerate([0.1, 0.3, 0.2])]
        beam, new_best = select_top_k(children, best, 2)
        self.assertIs(new_best, best)
        self.assertEqual([c.branch for c in beam], ['best', 'c1'])

    def test_ties(self):
        best = _candidate('best', 0.5, 0)
        children = [_candidate(f"c{i}", 0.5, i + 1) for i in range(3)]
        beam, new_best = select_top_k(children, best, 3)
        self.assertIs(new_best, best)
        self.assertEqual([c.branch for c in beam], ['best', 'c0', 'c1'])

    def test_k_larger_than_pool(self):
        best = _candidate('best', 0.5, 0)
        beam, _ = select_top_k([_candidate('c0', 0.9, 1)], best, 5)
        self.assertEqual([c.branch for c in beam], ['c0', 'best'])

    def test_unscored(self):
        with self.assertRaises(ValueError):
            select_top_k([_candidate('c0', None, 1)],
                         _candidate('best', 0.5, 0), 2)


class TestPieces(unittest.TestCase):

    @parameterized.expand([
        ('mode', dict(mode='random')),
        ('beam_width', dict(beam_width=0)),
        ('branching', dict(branching=0)),
        ('epochs', dict(epochs=-1)),
        ('batch_size', dict(batch_size=0)),
        ('max_global_steps', dict(max_global_steps=-2)),
        ('validation_mode', dict(validation_mode='testing')),
    ])
    def test_config_errors(self, name, kwargs):
        with self.assertRaisesRegex(ValueError, name if name != 'mode'
                                    else 'Unsupported mode'):
            TrainConfig(**kwargs)

    def test_config_aliases(self):
        config = TrainConfig(beam_width=4, branching=2, steps_per_child=3)
        self.assertEqual((config.K, config.M, config.L), (4, 2, 3))
        TrainConfig(mode='bon', beam_width=0)

    def test_batch_sampler(self):
        tasks = [(f"t{i}", None) for i in range(5)]
        sampler = BatchSampler(tasks, 2, 2, seed=3)
        epoch = sampler.next_batch() + sampler.next_batch() + \
            sampler.next_batch()
        self.assertEqual(sorted(epoch), tasks)
        self.assertEqual(sampler.epoch, 1)
        self.assertFalse(sampler.exhausted)
        for _ in range(3):
            sampler.next_batch()
        self.assertTrue(sampler.exhausted)
        self.assertEqual(len(sampler.next_batch()), 2)

        again = BatchSampler(tasks, 2, 2, seed=3)
        self.assertEqual(again.next_batch(),
                         BatchSampler(tasks, 2, 2, seed=3).next_batch())

    def test_batch_sampler_empty(self):
        sampler = BatchSampler([], 2, 1)
        self.assertTrue(sampler.exhausted)
        with self.assertRaises(ValueError):
            sampler.next_batch()

    def test_learnable_batch(self):
        LearnableBatch(['t'], ['o'], [1.])
        with self.assertRaises(ValueError):
            LearnableBatch(['t', 'u'], ['o'], [1.])
        with self.assertRaises(ValueError):
            LearnableBatch(['t'], ['o'], [float('nan')])

    def test_compute_reward(self):
        rewards, feedback = compute_reward([('t1', 'a'), ('t2', 'b')],
                                           ['a', 'c'], 'exact_match')
        self.assertEqual(rewards, [1., 0.])
        self.assertEqual(feedback, ['reward 1.0000', 'reward 0.0000'])

    def test_compute_reward_failure(self):
        def broken(output, reference):
            raise ValueError('cannot score')
        with self.assertLogs(level='WARNING'):
            rewards, feedback = compute_reward([('t', 'r')], ['o'], broken)
        self.assertEqual(rewards, [0.])
        self.assertIn('cannot score', feedback[0])

    def test_ledger(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'ledger.jsonl')
            ledger = RunLedger(path)
            ledger.record('validate', score=0.5)
            ledger.record('update', branch='b')
            ledger.record('validate', score=0.7)
            loaded = RunLedger.load(path)
        self.assertEqual(loaded.events, ledger.events)
        self.assertEqual((loaded.validations, loaded.optimizer_calls), (2, 1))
        self.assertEqual(list(loaded.to_frame()['event']),
                         ['validate', 'update', 'validate'])

    def test_callback(self):
        ledger = RunLedger()
        best = _candidate('best', 0.5, 0)
        with self.assertLogs(level='INFO') as logs:
            callback = verbose_callback()
            callback(BeamState([best], best, 1), ledger)
        self.assertIn('Best = 0.5000', logs.output[-1])


class TestExecutor(unittest.TestCase):

    def setUp(self):
        self.repo = ContextRepository()
        self.ids = [self.repo.add_resource(c) for c in
                    ['verb first order', 'kalu means water', 'x' * 300]]

    def test_empty_preview(self):
        executor = _executor(_constant_executor())
        self.assertEqual(executor.build_preview(ContextRepository(), 't'), '')

    def test_full_preview(self):
        preview = _executor(_constant_executor()).build_preview(self.repo, 't')
        self.assertEqual(len(preview.splitlines()), 3)
        self.assertIn('x' * 300, preview)

    def test_embedding_preview(self):
        executor = Executor(_constant_executor(), preview_k=1,
                            preview_chars=50)
        preview = executor.build_preview(self.repo, 'kalu means water')
        self.assertTrue(preview.startswith(f"[{self.ids[1]}]"))
        self.assertEqual(len(preview.splitlines()), 1)

    def test_forward_pass(self):
        backend = _constant_executor('answer')
        trajectories = _executor(backend).forward_pass(
            self.repo.snapshot(), ['t1', 't2'], 'inference')
        self.assertEqual([t.output for t in trajectories],
                         ['answer', 'answer'])
        self.assertIn('kalu means water', backend.history[0][1].content)

    def test_bad_strategy(self):
        with self.assertRaises(ValueError):
            Executor(_constant_executor(), preview_strategy='random')


class TestTrainer(unittest.TestCase):

    def test_expand(self):
        scenario = _get_scenario('local_optima')
        trainer = _get_trainer(scenario, steps_per_child=2)
        trainer.sampler = BatchSampler(scenario.train, 2, 100)
        parent = trainer._initial(scenario.val)
        children = trainer.expand(parent, scenario.val)
        repo = trainer.repository
        self.assertEqual([c.branch for c in children],
                         ['step1/child0', 'step1/child1', 'step1/child2'])
        for child in children:
            self.assertEqual(child.lineage, ROOT_BRANCH)
            self.assertEqual(len(child.history), 2)
            log = repo.log(child.branch)
            self.assertEqual(len(log), len(repo.log(ROOT_BRANCH)) + 2)
            self.assertEqual(log[2].commit_id, parent.head)
            self.assertEqual(repo.get_branch(child.branch).metadata['score'],
                             child.score)
        self.assertEqual(trainer.ledger.optimizer_calls, 6)

    def test_sibling_summaries_in_prompt(self):
        scenario = _get_scenario('local_optima')
        trainer = _get_trainer(scenario)
        trainer.sampler = BatchSampler(scenario.train, 2, 100)
        parent = trainer._initial(scenario.val)
        trainer.expand(parent, scenario.val)
        prompts = [h[1].content for h in trainer.optimizer_backend.history
                   if len(h) == 2]
        self.assertEqual(len(prompts), 3)
        self.assertNotIn('Previous attempted context updates', prompts[0])
        self.assertIn('- Attempt 1: [strategy:greedy-dictionary]', prompts[1])
        self.assertIn('- Attempt 2: [strategy:rules-and-examples]', prompts[2])

    def test_refilled_slots_share_siblings(self):
        scenario = _get_scenario('local_optima')
        trainer = _get_trainer(scenario, max_global_steps=2)
        trainer.fit(scenario.train, scenario.val)
        prompts = [h[1].content for h in trainer.optimizer_backend.history
                   if len(h) == 2]
        self.assertEqual(len(prompts), 12)
        has_siblings = ['Previous attempted context updates' in p
                        for p in prompts]
        # Step 1 expands the initial context twice, step 2 two parents
        self.assertEqual(has_siblings, [False] + [True] * 5
                         + [False, True, True] * 2)
        self.assertEqual(prompts[3].count('- Attempt '), 3)
        self.assertEqual(prompts[5].count('- Attempt '), 5)
        self.assertNotIn('- Attempt 4:', prompts[8])

    @parameterized.expand([(True,), (False,)])
    def test_information_seeking(self, information_seeking):
        scenario = _get_scenario('local_optima')
        trainer = ContextTrainer(
            _executor(scenario.executor_backend()),
            scenario.optimizer_backend(), scenario.world.metric,
            _get_config('seq', max_global_steps=1,
                        information_seeking=information_seeking),
            wikipedia=FixtureWikipedia({}), browser=FixtureBrowser({}),
            backoff=0)
        trainer.fit(scenario.train, scenario.val)
        system, prompt = trainer.optimizer_backend.history[0][:2]
        self.assertEqual('wikipedia_search_tool' in system.content,
                         information_seeking)
        self.assertEqual('browser_use_tool' in system.content,
                         information_seeking)
        self.assertEqual('[Active Searching]' in prompt.content,
                         information_seeking)

    def test_failed_optimizer(self):
        scenario = _get_scenario('local_optima')
        trainer = ContextTrainer(
            _executor(scenario.executor_backend()),
            ScriptedBackend(script=[BackendError('down')] * 10),
            scenario.world.metric, _get_config('seq', max_global_steps=1),
            retries=0, backoff=0)
        with self.assertLogs(level='WARNING'):
            result = trainer.fit(scenario.train, scenario.val)
        repo = trainer.repository
        self.assertEqual(repo.get_commit('seq').message, NO_OP_SUMMARY)
        self.assertEqual(repo.snapshot_at('seq').snapshot_id,
                         repo.snapshot_at(ROOT_BRANCH).snapshot_id)
        update, = [e for e in trainer.ledger.events if e['event'] == 'update']
        self.assertEqual(update['status'], 'failed')
        self.assertEqual(result.score, 0.)

    def test_truncated_optimizer_discards_edits(self):
        scenario = _get_scenario('local_optima')

        def never_done(messages):
            turn = sum(m.role == 'assistant' for m in messages)
            return serialize_tool_call(ToolCall('context_manage_tool', {
                'action': 'add', 'content': f"vocab01 attempt {turn}"}))

        trainer = ContextTrainer(
            _executor(scenario.executor_backend()),
            ScriptedBackend(responder=never_done), scenario.world.metric,
            _get_config('seq', max_global_steps=1), optimizer_max_steps=3,
            backoff=0)
        with self.assertLogs(level='WARNING'):
            trainer.fit(scenario.train, scenario.val)
        repo = trainer.repository
        self.assertEqual(len(repo.snapshot_at('seq')), 0)
        self.assertEqual(repo.get_commit('seq').message, NO_OP_SUMMARY)

    def test_validation_cache(self):
        scenario = _get_scenario('local_optima')
        trainer = _get_trainer(scenario)
        first = trainer.validate(ROOT_BRANCH, scenario.val)
        calls = trainer.executor.backend.calls
        self.assertEqual(trainer.validate(ROOT_BRANCH, scenario.val), first)
        self.assertEqual(trainer.executor.backend.calls, calls)
        self.assertEqual(trainer.ledger.validations, 1)
        with self.assertRaisesRegex(ValueError, 'empty dataset'):
            trainer.validate(ROOT_BRANCH, [])


class TestTrainRuns(unittest.TestCase):

    def _train(self, scenario, mode, **kwargs):
        return train(_get_config(mode, **kwargs), scenario.train,
                     scenario.val, _executor(scenario.executor_backend()),
                     scenario.optimizer_backend(), scenario.world.metric,
                     backoff=0)

    def test_beam_escapes_local_optimum(self):
        scenario = _get_scenario('local_optima')
        result = self._train(scenario, 'beam')
        self.assertGreaterEqual(result.fun, 0.9 - 1e-9)
        self.assertEqual(result.branch, 'best')
        self.assertAlmostEqual(
            scenario.world.metric(result.x.text()), result.fun)
        self.assertEqual(result.repository.get_branch('best').metadata['score'],
                         result.fun)

    def test_seq_stays_on_plateau(self):
        scenario = _get_scenario('local_optima')
        result = self._train(scenario, 'seq')
        self.assertAlmostEqual(result.fun, 0.5)

    def test_seq_keeps_best_checkpoint(self):
        scenario = _get_scenario('pollution')
        result = self._train(scenario, 'seq')
        repo = result.repository
        self.assertAlmostEqual(result.fun, 0.6)
        self.assertAlmostEqual(
            scenario.world.metric(repo.snapshot_at('seq').text()), 0.2)
        self.assertNotIn('poison01', result.x.text())
        np.testing.assert_allclose(result.best_scores, [0.6, 0.6, 0.6])
        self.assertEqual(result.n_validations, 3)
        self.assertEqual(repo.get_branch('best').metadata['source_branch'],
                         'seq')

    @parameterized.expand([(seed,) for seed in range(20)])
    def test_beam_excludes_polluted_children(self, seed):
        scenario = _get_scenario('pollution')
        result = self._train(scenario, 'beam', seed=seed)
        self.assertAlmostEqual(result.fun, 0.6)
        self.assertNotIn('poison01', result.x.text())
        for beam in [e['beam'] for e in result.ledger.events
                     if e['event'] == 'select']:
            for branch in beam:
                self.assertNotIn('poison01', result.repository.snapshot_at(
                    branch).text())

    def test_budget(self):
        scenario = _get_scenario('local_optima')
        for steps in [1, 2]:
            result = train(_get_config('beam', max_global_steps=steps),
                           scenario.train, scenario.val,
                           _executor(_constant_executor()),
                           _unique_optimizer(), 'exact_match', backoff=0)
            self.assertEqual(result.n_optimizer_calls, 6 * steps)
            self.assertEqual(result.n_validations, 6 * steps + 1)
            self.assertEqual(result.ledger.count('select'), steps)
            self.assertEqual(result.nit, steps)

    def test_zero_steps(self):
        scenario = _get_scenario('local_optima')
        result = self._train(scenario, 'beam', max_global_steps=0)
        self.assertEqual(result.n_optimizer_calls, 0)
        self.assertEqual(result.n_validations, 1)
        self.assertEqual(result.fun, 0.)
        self.assertEqual(len(result.x), 0)
        self.assertEqual(result.best_scores, [])

    def test_deterministic(self):
        scenario = _get_scenario('local_optima')
        first = self._train(scenario, 'beam')
        second = self._train(scenario, 'beam')
        self.assertEqual(first.snapshot_id, second.snapshot_id)
        self.assertEqual(first.head, second.head)
        self.assertEqual(first.best_scores, second.best_scores)

    def test_elitism_random_worlds(self):
        for seed in range(50):
            scenario = _get_scenario(f"random_{seed}")
            result = self._train(scenario, 'beam', max_global_steps=2)
            scores = [e['score'] for e in result.ledger.events
                      if e['event'] == 'validate']
            self.assertAlmostEqual(result.fun, max(scores))
            self.assertTrue(np.all(np.diff(result.best_scores) >= 0))
            self.assertGreaterEqual(result.best_scores[0], scores[0])
            self.assertLessEqual(result.fun, scenario.world.max_score + 1e-12)

    def test_best_of_n(self):
        scenario = _get_scenario('local_optima')
        result = self._train(scenario, 'bon', n_samples=3)
        self.assertEqual(len(result.x), 6)
        self.assertEqual(result.n_optimizer_calls, 0)
        self.assertTrue(all(r.content.startswith('Task: ') for r in result.x))

    def test_best_of_n_picks_best_answer(self):
        scenario = _get_scenario('local_optima')
        answers = cycle(['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'])
        executor = _executor(ScriptedBackend(
            responder=lambda messages: _answer(next(answers))))
        result = train(_get_config('bon', n_samples=8), scenario.train, [],
                       executor, None, lambda o, r: float(o == 'c'),
                       backoff=0)
        self.assertEqual(len(result.x), 4)
        for resource in result.x:
            self.assertTrue(resource.content.endswith('Answer: c'))
        self.assertIsNone(result.fun)


if __name__ == '__main__':
    unittest.main()
