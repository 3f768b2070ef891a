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

""" Rewards, datasets and held-out evaluation

Metrics are functions ``metric(hypothesis, reference) -> float``. The
bundled ones are :func:`exact_match` and :func:`chrf_pp`; others can be
added with :func:`register_metric`.

Datasets are JSON-lines files, one ``{"task": ..., "reference": ...}``
record per line.
"""
import json
import hashlib
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd
from sacrebleu.metrics import CHRF


__all__ = [
    'EvalReport',
    'chrf_pp',
    'exact_match',
    'register_metric',
    'get_metric',
    'load_dataset',
    'dataset_records',
    'dataset_hash',
    'score_outputs',
    'evaluate',
]


CHAR_ORDER = 6
WORD_ORDER = 2
BETA = 2
PLUGIN_METRICS = ('healthbench_rubric', 'lcb_pass_at_1', 'hle_accuracy')


_CHRF = CHRF(char_order=CHAR_ORDER, word_order=WORD_ORDER, beta=BETA)


def chrf_pp(hypothesis, reference):
    """ Character and word n-gram F-score, in [0, 100]

    Scored by ``sacrebleu`` at the sentence level: character n-grams of
    orders 1 to 6 without whitespace, word n-grams of orders 1 and 2,
    precision and recall averaged over the orders and combined with
    beta = 2.

    Raises
    ------
    ValueError
        If the reference is empty (or only whitespace)
    """
    if not reference.strip():
        raise ValueError("chrf_pp needs a nonempty reference")
    return float(_CHRF.sentence_score(hypothesis, [reference]).score)


def exact_match(hypothesis, reference):
    """ 1.0 if the trimmed, case-folded texts are equal, 0.0 otherwise """
    return float(hypothesis.strip().casefold() == reference.strip().casefold())


METRICS = {
    'exact_match': exact_match,
    'chrf_pp': chrf_pp,
}


def register_metric(name, fn):
    """ Make `fn` available under `name` (replacing any previous one) """
    if not callable(fn):
        raise ValueError(f"Metric {name} is not callable")
    METRICS[name] = fn


def get_metric(metric):
    """ Metric function from its name (callables are returned unchanged) """
    if callable(metric):
        return metric
    if metric in METRICS:
        return METRICS[metric]
    if metric in PLUGIN_METRICS:
        raise NotImplementedError(
            f"{metric} is a plug-in point without bundled implementation. "
            "Provide one with register_metric.")
    raise ValueError(f"Unsupported metric {metric!r}. "
                     f"Choose between: {' '.join(METRICS)}")


def _metric_name(metric):
    return metric if isinstance(metric, str) else getattr(
        metric, 'name', getattr(metric, '__name__', type(metric).__name__))


def load_dataset(path):
    """ Tasks of a JSON-lines dataset

    Returns
    -------
    dataset: pandas.DataFrame
        Columns ``task`` and ``reference`` (None where missing)
    """
    try:
        frame = pd.read_json(path, lines=True, dtype=False)
    except ValueError as e:
        raise ValueError(f"Cannot parse dataset {path}: {e}") from e
    if frame.empty:
        return pd.DataFrame(columns=['task', 'reference'])
    if 'task' not in frame.columns:
        raise ValueError(f"Dataset {path} has no 'task' field")
    if 'reference' not in frame.columns:
        frame['reference'] = None
    frame = frame[['task', 'reference']]
    return frame.astype(object).where(frame.notna(), None)


def dataset_records(tasks):
    """ ``(task, reference)`` pairs of a dataset

    `tasks` can be a DataFrame from :func:`load_dataset`, a list of dicts
    with keys ``task`` and ``reference`` or a list of pairs.
    """
    if tasks is None:
        return []
    if isinstance(tasks, pd.DataFrame):
        return list(zip(tasks['task'], tasks['reference']))
    res = []
    for t in tasks:
        if isinstance(t, dict):
            res.append((t['task'], t.get('reference')))
        else:
            res.append(tuple(t))
    return res


def dataset_hash(tasks):
    payload = json.dumps([list(r) for r in dataset_records(tasks)],
                         ensure_ascii=False, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def score_outputs(outputs, references, metric):
    """ Per-task scores of the outputs

    A metric failing on one element scores 0 for it; the error is returned.

    Returns
    -------
    scores: list of float
    errors: list of str or None
    """
    fn = get_metric(metric)
    scores, errors = [], []
    for output, reference in zip(outputs, references):
        try:
            score = float(fn(output, reference))
            if not np.isfinite(score):
                raise ValueError(f"non-finite score {score}")
        except Exception as e:
            logging.warning(f"Metric {_metric_name(metric)} failed on "
                            f"{output!r}: {e}")
            scores.append(0.0)
            errors.append(str(e))
            continue
        scores.append(score)
        errors.append(None)
    return scores, errors


@dataclass
class EvalReport:
    """ Scores of a context on a dataset """
    scores: list
    mean: float
    metric: str
    dataset_hash: str
    snapshot_id: str
    outputs: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isclose(self.mean, np.mean(self.scores), rtol=0, atol=1e-12):
            raise ValueError("The mean does not match the per-task scores")

    def to_frame(self):
        return pd.DataFrame({'output': self.outputs or [None] * len(self.scores),
                             'score': self.scores})

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, ensure_ascii=False)

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls(**json.load(f))


def evaluate(executor, snapshot, tasks, metric, path=None):
    """ Score a context on held-out tasks

    Parameters
    ----------
    executor: object
        Anything with ``forward_pass(snapshot, tasks, mode)`` returning one
        trajectory per task, e.g. :class:`ctxforge.training.Executor`
    snapshot: ContextSnapshot
        The (committed) context to evaluate
    tasks:
        Dataset, see :func:`dataset_records`
    metric: str or callable
    path: str
        If given, the report is saved there

    Returns
    -------
    report: EvalReport
    """
    records = dataset_records(tasks)
    if not records:
        raise ValueError("empty dataset")
    trajectories = executor.forward_pass(
        snapshot, [task for task, _ in records], mode='inference')
    outputs = [t.output for t in trajectories]
    scores, errors = score_outputs(outputs, [ref for _, ref in records],
                                   metric)
    name = _metric_name(metric)
    header = ({'char_order': CHAR_ORDER, 'word_order': WORD_ORDER,
               'beta': BETA} if name == 'chrf_pp' else {})
    report = EvalReport(scores, float(np.mean(scores)), name,
                        dataset_hash(records), snapshot.snapshot_id, outputs,
                        errors, header)
    logging.info(f"Evaluated {len(records)} tasks with {name}: "
                 f"mean {report.mean:.4f}")
    if path is not None:
        report.save(path)
    return report
