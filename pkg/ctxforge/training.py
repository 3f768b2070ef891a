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

""" Context training routines

The context is trained, the models are frozen. One update step runs the
executor on a batch of tasks, scores its answers and hands the resulting
learnable batch to the optimizer agent, which edits the context through its
tools. The edits are committed on the branch of the candidate.

Three trainers share these steps:

- **seq**: a single branch updated step after step; the checkpoint with the
  best validation score is returned.
- **beam**: a population of at most K candidates. At every step each of them
  is expanded into M children, optimized for L steps each and validated;
  the K best of children and previous best survive.
- **bon**: no optimizer, the context collects the best of n executor
  answers of every training and validation task.

:func:`train` is the high-level entry point.
"""
import json
import logging
from time import time
from itertools import count
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.optimize import OptimizeResult

from .context_store import ContextRepository, ContextSession, PREVIEW_CHARS
from .agents import (AgentConfig, PackageEntry, OptimizerPackage, MODES,
                     run_agent, render_executor_prompt,
                     render_optimizer_system_prompt, render_optimizer_prompt)
from .retrieval import embedding_search
from .tools import (PAYLOAD_CAP, executor_registry, optimizer_registry,
                    render_listing)
from .evaluation import dataset_records, dataset_hash, score_outputs


__all__ = [
    'TrainConfig',
    'LearnableBatch',
    'CandidateContext',
    'BeamState',
    'BatchSampler',
    'RunLedger',
    'Executor',
    'ContextTrainer',
    'compute_reward',
    'select_top_k',
    'verbose_callback',
    'train',
]


TRAIN_MODES = ('seq', 'beam', 'bon')
PREVIEW_STRATEGIES = ('embedding', 'full')
NO_OP_SUMMARY = 'no-op'
EXECUTOR_SYSTEM_PROMPT = (
    "You are the executor agent. Solve the task of the user message calling "
    "the tools with action blobs.")


@dataclass
class TrainConfig:
    """ Hyper-parameters of a training run

    Attributes
    ----------
    mode: str
        ``seq``, ``beam`` or ``bon``
    beam_width, branching, steps_per_child: int
        K, M and L of the beam search. ``bon`` ignores them.
    epochs: int
        Passes over the training set before the run stops
    batch_size: int
        Tasks per learnable batch
    max_global_steps: int
        Optional cap on the number of selection (or seq update) steps
    seed: int
        Seed of the batch sampler
    information_seeking: bool
        Give the encyclopedia and browser tools to the optimizer
    n_samples: int
        Executor runs per task in ``bon`` mode
    validation_mode: str
        Executor prompt used for validation, ``inference`` or ``training``
    branch_prefix: str
        Prepended to every branch created by the run
    """
    mode: str = 'beam'
    beam_width: int = 2
    branching: int = 3
    steps_per_child: int = 1
    epochs: int = 2
    batch_size: int = 4
    max_global_steps: Optional[int] = None
    seed: int = 0
    information_seeking: bool = False
    n_samples: int = 8
    validation_mode: str = 'inference'
    branch_prefix: str = ''

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"Unsupported mode {self.mode!r}. "
                             f"Choose between: {' '.join(TRAIN_MODES)}")
        if self.mode != 'bon':
            for name in ('beam_width', 'branching', 'steps_per_child'):
                if getattr(self, name) < 1:
                    raise ValueError(f"{name} has to be at least 1")
        elif self.n_samples < 1:
            raise ValueError("n_samples has to be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs cannot be negative")
        if self.batch_size < 1:
            raise ValueError("batch_size has to be at least 1")
        if self.max_global_steps is not None and self.max_global_steps < 0:
            raise ValueError("max_global_steps cannot be negative")
        if self.validation_mode not in MODES:
            raise ValueError(f"Unsupported validation_mode "
                             f"{self.validation_mode!r}. "
                             f"Choose between: {' '.join(MODES)}")

    @property
    def K(self):
        return self.beam_width

    @property
    def M(self):
        return self.branching

    @property
    def L(self):
        return self.steps_per_child


@dataclass
class LearnableBatch:
    tasks: list
    outputs: list
    rewards: list
    references: list = field(default_factory=list)
    feedback: list = field(default_factory=list)
    trajectories: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        n = len(self.tasks)
        for name in ('outputs', 'rewards', 'references', 'feedback',
                     'trajectories'):
            values = getattr(self, name)
            if name in ('outputs', 'rewards') or values:
                if len(values) != n:
                    raise ValueError(f"LearnableBatch: {n} tasks but "
                                     f"{len(values)} {name}")
        if not np.all(np.isfinite(np.asarray(self.rewards, dtype=float))):
            raise ValueError("LearnableBatch: rewards must be finite")


@dataclass
class CandidateContext:
    """ Branch under training and its validation score

    `history` lists the ``(summary, score)`` of the updates that led to the
    candidate, the score being None for updates that were not validated.
    """
    branch: str
    head: str
    score: Optional[float] = None
    lineage: Optional[str] = None
    summary: str = ''
    created: int = 0
    history: list = field(default_factory=list)

    def to_record(self):
        return {'branch': self.branch, 'head': self.head, 'score': self.score,
                'lineage': self.lineage, 'summary': self.summary,
                'created': self.created,
                'history': [list(h) for h in self.history]}


@dataclass
class BeamState:
    beam: list
    best: CandidateContext
    step: int = 0
    best_scores: list = field(default_factory=list)


class BatchSampler(object):
    """ Seeded epoch-based sampling without replacement

    Batches keep coming after the last epoch, from new shuffles; the
    `exhausted` flag only tells that `epochs` passes were completed.
    """

    def __init__(self, tasks, batch_size, epochs, seed=0):
        self.records = dataset_records(tasks)
        self.batch_size = batch_size
        self.epochs = epochs
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self._order = []

    @property
    def exhausted(self):
        return not self.records or self.epoch >= self.epochs

    def next_batch(self):
        if not self.records:
            raise ValueError("empty dataset: no training task to sample")
        if not self._order:
            self._order = [int(i) for i in
                           self.rng.permutation(len(self.records))]
        batch = self._order[:self.batch_size]
        self._order = self._order[self.batch_size:]
        if not self._order:
            self.epoch += 1
        return [self.records[i] for i in batch]


class RunLedger(object):
    """ Append-only log of the events of a run

    Events are dicts with an ``event`` key: ``validate`` (a snapshot scored
    for the first time), ``update`` (an optimizer call), ``select`` (end of
    a beam or seq step), ``checkpoint`` (end of a run). With a `path`, every
    event is appended to it as one JSON line.
    """

    def __init__(self, path=None):
        self.path = path
        self.events = []

    def record(self, event, **fields):
        entry = dict(event=event, **fields)
        self.events.append(entry)
        if self.path is not None:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(entry, ensure_ascii=False, default=str)
                        + '\n')
        return entry

    def count(self, event):
        return sum(e['event'] == event for e in self.events)

    @property
    def optimizer_calls(self):
        return self.count('update')

    @property
    def validations(self):
        return self.count('validate')

    def to_frame(self):
        return pd.DataFrame(self.events)

    @classmethod
    def load(cls, path):
        ledger = cls()
        with open(path, encoding='utf-8') as f:
            ledger.events = [json.loads(line) for line in f if line.strip()]
        ledger.path = path
        return ledger


class Executor(object):
    """ Executor agent bound to a backend

    Parameters
    ----------
    backend: ChatBackend
    provider: EmbeddingProvider
        Used by the ``embedding`` preview and by the executor's searches
    preview_strategy: str
        ``embedding``: the `preview_k` resources closest to the task, at the
        preview detail level. ``full``: every resource with its content.
    """

    def __init__(self, backend, provider=None, preview_strategy='embedding',
                 preview_k=8, preview_chars=PREVIEW_CHARS, max_steps=12,
                 retries=3, backoff=1.0, search_backend=None,
                 payload_cap=PAYLOAD_CAP):
        if preview_strategy not in PREVIEW_STRATEGIES:
            raise ValueError(f"Unsupported preview strategy "
                             f"{preview_strategy!r}. Choose between: "
                             f"{' '.join(PREVIEW_STRATEGIES)}")
        self.backend = backend
        self.provider = provider
        self.preview_strategy = preview_strategy
        self.preview_k = preview_k
        self.preview_chars = preview_chars
        self.max_steps = max_steps
        self.retries = retries
        self.backoff = backoff
        self.search_backend = search_backend
        self.payload_cap = payload_cap

    def build_preview(self, repository, task):
        """ Context preview of the executor prompt ('' for an empty context) """
        if not repository.snapshot():
            return ''
        if self.preview_strategy == 'full':
            return render_listing(repository.list_resources('detail'))
        hits = embedding_search(repository, task, self.preview_k,
                                self.provider)
        listing = {e['resource_id']: e for e in repository.list_resources(
            'preview', preview_chars=self.preview_chars)}
        return render_listing([listing[h.resource_id] for h in hits])

    def run(self, repository, task, mode='inference'):
        session = ContextSession(repository)
        registry = executor_registry(session, mode, self.provider,
                                     self.search_backend, self.preview_chars,
                                     self.payload_cap)
        prompt = render_executor_prompt(self.build_preview(repository, task),
                                        task, registry.specs, mode)
        config = AgentConfig(self.backend, EXECUTOR_SYSTEM_PROMPT, 'executor',
                             mode, self.max_steps, self.retries, self.backoff)
        return run_agent(config, prompt, registry)

    def forward_pass(self, snapshot, tasks, mode='inference'):
        """ One trajectory per task, all against `snapshot`

        Returns
        -------
        trajectories: list of Trajectory
        """
        repository = ContextRepository()
        repository.load_snapshot(snapshot)
        return [self.run(repository, task, mode) for task in tasks]


def compute_reward(tasks, outputs, reward_fn):
    """ Rewards and feedback of executor outputs

    Parameters
    ----------
    tasks:
        ``(task, reference)`` records (or any dataset accepted by
        :func:`ctxforge.evaluation.dataset_records`)
    outputs: list of str
    reward_fn: str or callable
        Metric name or ``reward_fn(output, reference) -> float``

    Returns
    -------
    rewards: list of float
        A failing reward function gives 0 for the element
    feedback: list of str
    """
    references = [ref for _, ref in dataset_records(tasks)]
    rewards, errors = score_outputs(outputs, references, reward_fn)
    feedback = [f"reward {r:.4f}" if e is None
                else f"reward 0 (evaluation error: {e})"
                for r, e in zip(rewards, errors)]
    return rewards, feedback


def select_top_k(candidates, previous_best, K):
    """ Validation-guided pruning with elitism

    The pool is made of the candidates and of the previous best. It is
    sorted by descending score; ties go to the previous best first, then to
    the earliest created candidate.

    Returns
    -------
    beam: list of CandidateContext
        The first `K` of the pool
    best: CandidateContext
        Replaced by a candidate only if it scores strictly more
    """
    pool = [previous_best] + [c for c in candidates if c is not previous_best]
    unscored = [c.branch for c in pool if c.score is None]
    if unscored:
        raise ValueError(f"Candidates without validation score: {unscored}")
    pool.sort(key=lambda c: (-c.score, c is not previous_best, c.created))
    best = previous_best
    for candidate in candidates:
        if candidate.score > best.score:
            best = candidate
    return pool[:K], best


def verbose_callback():
    """ Provide a callback logging one line per training step """
    start = time()
    old_time = [start]

    def callback(state, ledger):
        now = time()
        beam_scores = np.array([c.score for c in state.beam])
        message = [
            'Step %i' % state.step,
            'Best = %.4f (%s)' % (state.best.score, state.best.branch),
            'Beam = %s' % np.array2string(beam_scores, precision=4),
            'N Update = %i' % ledger.optimizer_calls,
            'N Valid = %i' % ledger.validations,
            'Step sec = %.2f' % (now - old_time[0]),
            'Cum sec = %.2f' % (now - start),
        ]
        logging.info('\t'.join(message))
        old_time[0] = now

    logging.info('Context training started')
    return callback


class ContextTrainer(object):
    """ Training loop over a context repository

    Parameters
    ----------
    executor: Executor
    optimizer_backend: ChatBackend
    metric: str or callable
        Reward of the executor outputs, see :func:`compute_reward`
    config: TrainConfig
    repository: ContextRepository
        Where branches and commits are created (a new in-memory one if None)
    start: str
        Branch whose head is the initial context (``main`` by default)
    ledger: RunLedger
    callback: callable
        ``callback(state, ledger)`` after every step
    trajectory_log: str
        If given, every agent trajectory is appended to it as a JSON line
    wikipedia, browser:
        Adapters of the information seeking tools, used when
        ``config.information_seeking`` is set
    """

    def __init__(self, executor, optimizer_backend, metric, config,
                 repository=None, start=None, ledger=None, provider=None,
                 search_backend=None, wikipedia=None, browser=None,
                 optimizer_max_steps=20, retries=3, backoff=1.0,
                 preview_chars=PREVIEW_CHARS, payload_cap=PAYLOAD_CAP,
                 callback=None, trajectory_log=None):
        self.executor = executor
        self.optimizer_backend = optimizer_backend
        self.metric = metric
        self.config = config
        self.repository = repository or ContextRepository()
        self.start = start or self.repository.active_branch or 'main'
        self.ledger = ledger or RunLedger()
        self.provider = provider
        self.search_backend = search_backend
        self.wikipedia = wikipedia
        self.browser = browser
        self.optimizer_max_steps = optimizer_max_steps
        self.retries = retries
        self.backoff = backoff
        self.preview_chars = preview_chars
        self.payload_cap = payload_cap
        self.callback = callback
        self.trajectory_log = trajectory_log
        self._cache = {}
        self._created = count()
        self.sampler = None

    # ---- single steps ----------------------------------------------------

    def _log_trajectories(self, trajectories, **fields):
        if self.trajectory_log is None:
            return
        with open(self.trajectory_log, 'a', encoding='utf-8') as f:
            for t in trajectories:
                f.write(json.dumps(dict(fields, **t.to_record()),
                                   ensure_ascii=False, default=str) + '\n')

    def _branch(self, name):
        return self.config.branch_prefix + name

    def forward_pass(self, snapshot, tasks, mode='training'):
        """ Executor outputs on `tasks`, empty for unfinished trajectories

        Returns
        -------
        outputs: list of str
        trajectories: list of Trajectory
        """
        trajectories = self.executor.forward_pass(snapshot, tasks, mode)
        return [t.output for t in trajectories], trajectories

    def make_batch(self, snapshot, records):
        """ Learnable batch of the executor running on `snapshot` """
        tasks = [task for task, _ in records]
        outputs, trajectories = self.forward_pass(snapshot, tasks, 'training')
        rewards, feedback = compute_reward(records, outputs, self.metric)
        return LearnableBatch(tasks, outputs, rewards,
                              [ref for _, ref in records], feedback,
                              trajectories)

    def validate(self, ref, val):
        """ Mean reward on `val` of the context at `ref` (cached) """
        snapshot = self.repository.snapshot_at(ref)
        key = (snapshot.snapshot_id, dataset_hash(val))
        if key not in self._cache:
            records = dataset_records(val)
            if not records:
                raise ValueError("empty dataset: validation needs tasks")
            outputs, trajectories = self.forward_pass(
                snapshot, [task for task, _ in records],
                self.config.validation_mode)
            rewards, _ = compute_reward(records, outputs, self.metric)
            self._cache[key] = float(np.mean(rewards))
            self.ledger.record('validate', ref=ref,
                               commit=self.repository.resolve(ref),
                               snapshot_id=snapshot.snapshot_id,
                               score=self._cache[key],
                               n_resources=len(snapshot))
            self._log_trajectories(trajectories, stage='validate', ref=ref)
        return self._cache[key]

    def optimizer_update(self, candidate, batch, sibling_summaries=()):
        """ One optimizer run on the branch of `candidate`, then commit

        The commit message is the summary given by the optimizer in its
        final answer. A failed or truncated optimizer leaves an empty-diff
        commit with summary ``no-op``.

        Returns
        -------
        head: str
            The new commit
        summary: str
        """
        repo = self.repository
        repo.checkout(candidate.branch)
        package = OptimizerPackage(
            render_listing(repo.list_resources(
                'preview', preview_chars=self.preview_chars)),
            [PackageEntry(task, output, ref, feedback,
                          traj.usage_summary if traj is not None else None)
             for task, output, ref, feedback, traj in zip(
                 batch.tasks, batch.outputs,
                 batch.references or [None] * len(batch.tasks),
                 batch.feedback or [None] * len(batch.tasks),
                 batch.trajectories or [None] * len(batch.tasks))],
            list(candidate.history), list(sibling_summaries),
            self.config.information_seeking)
        prompt = render_optimizer_prompt(package)
        is_on = self.config.information_seeking
        registry = optimizer_registry(
            ContextSession(repo), self.provider, self.search_backend,
            self.wikipedia if is_on else None,
            self.browser if is_on else None,
            self.preview_chars, self.payload_cap)
        config = AgentConfig(self.optimizer_backend,
                             render_optimizer_system_prompt(registry.specs),
                             'optimizer', None, self.optimizer_max_steps,
                             self.retries, self.backoff)
        traj = run_agent(config, prompt, registry)
        self._log_trajectories([traj], stage='update',
                               branch=candidate.branch)
        if traj.status == 'completed' and repo.active_branch == candidate.branch:
            summary = traj.final_answer.strip() or NO_OP_SUMMARY
        else:
            logging.warning(f"Optimizer {traj.status} on {candidate.branch}: "
                            f"edits discarded, empty-diff commit")
            repo.checkout(candidate.branch)
            summary = NO_OP_SUMMARY
        head = repo.commit(summary)
        self.ledger.record('update', branch=candidate.branch, commit=head,
                           status=traj.status, summary=summary,
                           steps=traj.step_count)
        return head, summary

    def _new_candidate(self, name, parent, description):
        self.repository.checkout(parent.branch)
        if self.repository.head != parent.head:
            self.repository.checkout(parent.head)
        self.repository.create_branch(name, description)
        return CandidateContext(name, parent.head, None, parent.branch,
                                parent.summary, next(self._created),
                                list(parent.history))

    def _score(self, candidate, val):
        candidate.score = self.validate(candidate.head, val)
        if candidate.history:
            candidate.history[-1] = (candidate.history[-1][0], candidate.score)
        self.repository.update_branch_info(candidate.branch, 'score',
                                           candidate.score)
        return candidate

    def expand(self, parent, val, step=1, first_index=0, siblings=None):
        """ M children of `parent`, each optimized for L steps and validated

        Children are built one after the other; each one sees the summaries
        and scores of its earlier siblings. Passing the same `siblings` list
        to several expansions of one parent makes the children of the later
        calls see those of the earlier ones too (the list is extended in
        place).

        Returns
        -------
        children: list of CandidateContext
        """
        children = []
        siblings = [] if siblings is None else siblings
        for j in range(first_index, first_index + self.config.M):
            child = self._new_candidate(self._branch(f"step{step}/child{j}"),
                                        parent,
                                        f"child {j} of {parent.branch}")
            for _ in range(self.config.L):
                batch = self.make_batch(
                    self.repository.snapshot_at(child.branch),
                    self.sampler.next_batch())
                child.head, child.summary = self.optimizer_update(
                    child, batch, siblings)
                child.history.append((child.summary, None))
            self._score(child, val)
            self.repository.update_branch_info(child.branch, 'summary',
                                               child.summary)
            siblings.append((child.summary, child.score))
            children.append(child)
        return children

    def _initial(self, val):
        head = self.repository.resolve(self.start)
        candidate = CandidateContext(self.start, head, None, None, '',
                                     next(self._created))
        candidate.score = self.validate(head, val)
        return candidate

    def _steps_left(self, step):
        cap = self.config.max_global_steps
        return not self.sampler.exhausted and (cap is None or step < cap)

    def _checkpoint(self, best):
        """ Point the ``best`` branch at the returned candidate """
        name = self._branch('best')
        self.repository.checkout(best.head)
        self.repository.create_branch(name, f"best checkpoint of the "
                                      f"{self.config.mode} run")
        self.repository.checkout(name)
        self.repository.update_branch_info(name, 'score', best.score)
        self.repository.update_branch_info(name, 'source_branch', best.branch)
        self.ledger.record('checkpoint', branch=name, source=best.branch,
                           commit=best.head, score=best.score,
                           snapshot_id=self.repository.snapshot_at(
                               best.head).snapshot_id)
        return best

    # ---- trainers --------------------------------------------------------

    def seq_train(self, train, val):
        """ Linear updates of a single branch

        Returns
        -------
        best: CandidateContext
            The checkpoint with the highest validation score (the earliest
            one on ties), not necessarily the head of the branch
        """
        self.sampler = BatchSampler(train, self.config.batch_size,
                                    self.config.epochs, self.config.seed)
        initial = self._initial(val)
        current = self._new_candidate(self._branch('seq'), initial,
                                      'sequential training')
        current.score = initial.score
        best = initial
        state = BeamState([current], best)
        while self._steps_left(state.step):
            state.step += 1
            batch = self.make_batch(
                self.repository.snapshot_at(current.branch),
                self.sampler.next_batch())
            current.head, current.summary = self.optimizer_update(current,
                                                                  batch)
            current.history.append((current.summary, None))
            self._score(current, val)
            if current.score > best.score:
                best = CandidateContext(current.branch, current.head,
                                        current.score, current.lineage,
                                        current.summary, current.created,
                                        list(current.history))
            state.best = best
            state.best_scores.append(best.score)
            self.ledger.record('select', step=state.step,
                               best_score=best.score, best_commit=best.head,
                               beam=[current.score])
            if self.callback is not None:
                self.callback(state, self.ledger)
        self.state = state
        return self._checkpoint(best)

    def beam_search_train(self, train, val):
        """ Beam search over context branches with elitism

        Returns
        -------
        best: CandidateContext
            Highest validation score ever seen; the initial context if no
            child ever improved on it
        """
        self.sampler = BatchSampler(train, self.config.batch_size,
                                    self.config.epochs, self.config.seed)
        best = self._initial(val)
        state = BeamState([best], best)
        K, M = self.config.K, self.config.M
        while self._steps_left(state.step):
            state.step += 1
            # Missing beam slots are filled by expanding the members again,
            # all the children of one parent are siblings
            slots = [state.beam[i % len(state.beam)] for i in range(K)]
            children, siblings = [], {}
            for i, parent in enumerate(slots):
                children += self.expand(
                    parent, val, state.step, i * M,
                    siblings.setdefault(parent.branch, []))
            state.beam, state.best = select_top_k(children, state.best, K)
            state.best_scores.append(state.best.score)
            self.ledger.record('select', step=state.step,
                               best_score=state.best.score,
                               best_commit=state.best.head,
                               beam=[c.branch for c in state.beam],
                               pool=len(children) + 1)
            if self.callback is not None:
                self.callback(state, self.ledger)
        self.state = state
        return self._checkpoint(state.best)

    def best_of_n_context(self, train, val, n=None):
        """ Context of the best of `n` executor answers to every task

        Each training and validation task gives one resource holding the
        task and the answer of highest reward (the earliest one on ties).
        The resources are committed at once on the ``bon`` branch.
        """
        n = n or self.config.n_samples
        records = dataset_records(train) + dataset_records(val)
        initial = CandidateContext(self.start,
                                   self.repository.resolve(self.start),
                                   created=next(self._created))
        candidate = self._new_candidate(self._branch('bon'), initial,
                                        f"best of {n} answers")
        self.repository.checkout(candidate.branch)
        empty = self.repository.snapshot_at(candidate.head)
        for task, reference in records:
            outputs, _ = self.forward_pass(empty, [task] * n, 'inference')
            rewards, _ = compute_reward([(task, reference)] * n, outputs,
                                        self.metric)
            best = int(np.argmax(rewards))
            self.repository.add_resource(
                f"Task: {task}\nAnswer: {outputs[best]}",
                f"Best of {n} answer (reward {rewards[best]:.4f}) to: "
                f"{task[:60]}")
        candidate.head = self.repository.commit(
            f"best of {n}: {len(records)} answers")
        candidate.summary = f"best of {n}"
        if dataset_records(val):
            self._score(candidate, val)
        self.state = BeamState([candidate], candidate, 1)
        return self._checkpoint(candidate)

    def fit(self, train, val):
        """ Run the trainer of ``config.mode`` """
        return {'seq': self.seq_train, 'beam': self.beam_search_train,
                'bon': self.best_of_n_context}[self.config.mode](train, val)


def train(config, train_set, val_set, executor, optimizer_backend, metric,
          repository=None, **trainer_kwargs):
    """ Train a context

    Parameters
    ----------
    config: TrainConfig or dict
        Dicts are converted to :class:`TrainConfig`
    train_set, val_set:
        Datasets, see :func:`ctxforge.evaluation.dataset_records`
    executor: Executor
    optimizer_backend: ChatBackend
        Ignored in ``bon`` mode
    metric: str or callable
    repository: ContextRepository
    trainer_kwargs:
        Passed to :class:`ContextTrainer`

    Returns
    -------
    result: scipy.optimize.OptimizeResult
        It includes

        - **x**: *(ContextSnapshot)* - the returned context
        - **fun**: *(float)* - its validation score (None in ``bon`` mode
          without validation set)
        - **branch**, **head**: where it is stored (the ``best`` branch)
        - **candidate**: *(CandidateContext)* - the selected candidate
        - **best_scores**: *(list)* - best score after every step
        - **n_optimizer_calls**, **n_validations**: budget accounting
        - **repository**, **ledger**
    """
    if isinstance(config, dict):
        config = TrainConfig(**config)
    trainer = ContextTrainer(executor, optimizer_backend, metric, config,
                             repository, **trainer_kwargs)
    best = trainer.fit(train_set, val_set)
    res = OptimizeResult()
    res.x = trainer.repository.snapshot_at(best.head)
    res.fun = best.score
    res.branch = trainer.repository.active_branch
    res.head = best.head
    res.candidate = best
    res.snapshot_id = res.x.snapshot_id
    res.best_scores = trainer.state.best_scores
    res.n_optimizer_calls = trainer.ledger.optimizer_calls
    res.n_validations = trainer.ledger.validations
    res.nit = trainer.state.step
    res.success = True
    res.message = (f"{config.mode} training: best {best.score} on "
                   f"{best.branch} after {res.nit} steps")
    res.repository = trainer.repository
    res.ledger = trainer.ledger
    logging.info(res.message)
    return res
