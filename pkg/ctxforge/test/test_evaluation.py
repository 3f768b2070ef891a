#!/usr/bin/env python
import os
import json
import tempfile
import unittest
from parameterized import parameterized
import numpy as np
import pandas as pd
from ctxforge.agents import Trajectory
from ctxforge.context_store import ContextSnapshot
from ctxforge.evaluation import (
    EvalReport, chrf_pp, exact_match, register_metric, get_metric,
    load_dataset, dataset_records, dataset_hash, score_outputs, evaluate,
    METRICS)

ALPHABET = list('abcde fgh')


def _grams(items, n):
    res = {}
    for i in range(len(items) - n + 1):
        key = tuple(items[i:i + n])
        res[key] = res.get(key, 0) + 1
    return res


def _chrf_oracle(hyp, ref):
    # Plain re-implementation: char orders 1-6 without spaces, word orders 1-2
    sequences = [(list(hyp.replace(' ', '')), list(ref.replace(' ', '')), n)
                 for n in range(1, 7)]
    sequences += [(hyp.split(), ref.split(), n) for n in range(1, 3)]
    precisions, recalls = [], []
    for h_items, r_items, n in sequences:
        h, r = _grams(h_items, n), _grams(r_items, n)
        n_h, n_r = sum(h.values()), sum(r.values())
        if n_h == 0 or n_r == 0:
            continue
        match = sum(min(c, r.get(g, 0)) for g, c in h.items())
        precisions.append(match / n_h)
        recalls.append(match / n_r)
    if not precisions:
        return 0.
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p + r == 0:
        return 0.
    return 100 * 5 * p * r / (4 * p + r)


class _ConstantExecutor(object):
    """ Answers every task with a fixed output """

    def __init__(self, outputs):
        self.outputs = outputs
        self.calls = []

    def forward_pass(self, snapshot, tasks, mode='inference'):
        self.calls.append((snapshot, list(tasks), mode))
        res = []
        for task in tasks:
            traj = Trajectory(mode=mode)
            traj.final_answer = self.outputs.get(task, '')
            traj.status = 'completed'
            res.append(traj)
        return res


class TestChrf(unittest.TestCase):

    def test_identity(self):
        for text in ['a', 'the cat sat', 'Buginese uses SVO order']:
            self.assertAlmostEqual(chrf_pp(text, text), 100., delta=1e-9)

    def test_disjoint(self):
        self.assertEqual(chrf_pp('xyz', 'abc'), 0.)

    def test_empty_hypothesis(self):
        self.assertEqual(chrf_pp('', 'reference text'), 0.)

    @parameterized.expand([('',), ('   ',)])
    def test_empty_reference(self, reference):
        with self.assertRaises(ValueError):
            chrf_pp('hypothesis', reference)

    def test_random_pairs(self):
        rng = np.random.RandomState(5)
        for _ in range(200):
            hyp = ''.join(rng.choice(ALPHABET, rng.randint(0, 30))).strip()
            ref = ''.join(rng.choice(ALPHABET, rng.randint(1, 30))).strip()
            if not ref:
                ref = 'a'
            self.assertAlmostEqual(chrf_pp(hyp, ref), _chrf_oracle(hyp, ref),
                                   delta=1e-6)

    def test_prefix_hypothesis(self):
        # Every hypothesis n-gram matches: precision 1, recall averaged
        # over 9/17 8/16 7/15 6/14 5/13 4/12 (chars) and 3/6 2/5 (words)
        hyp, ref = 'the cat sat', 'the cat sat on the mat'
        self.assertAlmostEqual(chrf_pp(hyp, ref), 49.835953470439,
                               delta=1e-6)
        self.assertAlmostEqual(chrf_pp(hyp, ref), _chrf_oracle(hyp, ref),
                               delta=1e-6)

    def test_range(self):
        score = chrf_pp('the cat sat on the mat', 'the cat is on the mat')
        self.assertTrue(0 < score < 100)


class TestMetrics(unittest.TestCase):

    @parameterized.expand([
        ('Paris', 'Paris', 1.),
        ('  paris ', 'Paris', 1.),
        ('Paris.', 'Paris', 0.),
        ('', 'Paris', 0.),
    ])
    def test_exact_match(self, hyp, ref, expected):
        self.assertEqual(exact_match(hyp, ref), expected)

    def test_get_metric(self):
        self.assertIs(get_metric('chrf_pp'), chrf_pp)
        self.assertIs(get_metric(exact_match), exact_match)
        with self.assertRaisesRegex(ValueError, 'Choose between'):
            get_metric('bleu')

    @parameterized.expand([('healthbench_rubric',), ('lcb_pass_at_1',),
                           ('hle_accuracy',)])
    def test_plugin_metrics(self, name):
        with self.assertRaises(NotImplementedError):
            get_metric(name)

    def test_register_metric(self):
        register_metric('length_ratio',
                        lambda hyp, ref: len(hyp) / max(len(ref), 1))
        try:
            self.assertEqual(get_metric('length_ratio')('ab', 'abcd'), 0.5)
        finally:
            del METRICS['length_ratio']
        with self.assertRaises(ValueError):
            register_metric('broken', 42)

    def test_score_outputs_isolates_failures(self):
        with self.assertLogs(level='WARNING'):
            scores, errors = score_outputs(['a', 'b'], ['a', ''], 'chrf_pp')
        self.assertAlmostEqual(scores[0], 100., delta=1e-9)
        self.assertEqual(scores[1], 0.)
        self.assertIsNone(errors[0])
        self.assertIsNotNone(errors[1])


class TestDatasets(unittest.TestCase):

    def test_load_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'data.jsonl')
            with open(path, 'w') as f:
                f.write(json.dumps({'task': 't1', 'reference': 'r1'}) + '\n')
                f.write(json.dumps({'task': 't2'}) + '\n')
            frame = load_dataset(path)
        self.assertEqual(list(frame.columns), ['task', 'reference'])
        self.assertEqual(dataset_records(frame), [('t1', 'r1'), ('t2', None)])

    def test_records(self):
        pairs = [('t1', 'r1'), ('t2', 'r2')]
        dicts = [{'task': t, 'reference': r} for t, r in pairs]
        frame = pd.DataFrame(dicts)
        self.assertEqual(dataset_records(dicts), pairs)
        self.assertEqual(dataset_records(frame), pairs)
        self.assertEqual(dataset_hash(dicts), dataset_hash(pairs))
        self.assertNotEqual(dataset_hash(pairs), dataset_hash(pairs[::-1]))


class TestEvaluate(unittest.TestCase):

    def test_mean(self):
        executor = _ConstantExecutor({'t1': 'Paris', 't2': 'Rome'})
        tasks = [('t1', 'Paris'), ('t2', 'Madrid'), ('t3', 'Oslo')]
        report = evaluate(executor, ContextSnapshot(), tasks, 'exact_match')
        self.assertEqual(report.scores, [1., 0., 0.])
        self.assertAlmostEqual(report.mean, 1 / 3)
        self.assertEqual(report.metric, 'exact_match')
        self.assertEqual(report.snapshot_id, ContextSnapshot().snapshot_id)
        self.assertEqual(executor.calls[0][2], 'inference')

    def test_chrf_header(self):
        executor = _ConstantExecutor({'t1': 'a b'})
        report = evaluate(executor, ContextSnapshot(), [('t1', 'a b')],
                          'chrf_pp')
        self.assertEqual(report.header,
                         {'char_order': 6, 'word_order': 2, 'beta': 2})

    def test_empty_dataset(self):
        with self.assertRaisesRegex(ValueError, 'empty dataset'):
            evaluate(_ConstantExecutor({}), ContextSnapshot(), [],
                     'exact_match')

    def test_report_roundtrip(self):
        executor = _ConstantExecutor({'t1': 'Paris'})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'report.json')
            report = evaluate(executor, ContextSnapshot(), [('t1', 'Paris')],
                              'exact_match', path)
            self.assertEqual(EvalReport.load(path), report)
        self.assertEqual(list(report.to_frame()['score']), [1.])

    def test_inconsistent_mean(self):
        with self.assertRaises(ValueError):
            EvalReport([1., 0.], 0.75, 'exact_match', 'h', 's')


if __name__ == '__main__':
    unittest.main()
