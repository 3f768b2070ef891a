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

""" Synthetic environments for offline training runs

A :class:`FactWorld` scores a context by the facts it holds: the fraction of
the required facts present, multiplied by 0.2 for every poison fact. Facts
are plain tokens (``vocab03``, ``poison01``...).

The agents are scripted backends. The executor reads the facts of its
context preview and answers with them. The optimizer follows one of a few
strategies, each a fixed plan of resources to add step after step. Its
choice depends only on the prompt it receives: the update history tells
which strategy the branch followed so far and how far, the sibling attempts
tell which strategies were already tried from the same parent.
"""
import os
import re
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .context_store import tokenize
from .agents import ToolCall, ScriptedBackend, serialize_tool_call


__all__ = [
    'FactWorld',
    'Scenario',
    'world_reward',
    'scripted_optimizer',
    'ScenarioOptimizer',
    'WorldExecutor',
    'scenario_local_optima',
    'scenario_pollution',
    'scenario_random',
    'save_scenario',
    'load_scenario',
    'SCENARIOS',
]


STRATEGIES = ('greedy-dictionary', 'rules-and-examples', 'poisoner', 'no-op')
PENALTY = 0.2
FIXTURE_DIR = os.path.join(os.path.dirname(__file__), 'fixtures')

_STRATEGY_TAG_RE = re.compile(r'\[strategy:([\w-]+)\]')
_RESOURCE_LINE_RE = re.compile(r'^\[(res-\d+)\](.*)$', re.M)
_TITLES = {
    'greedy-dictionary': 'Dictionary entries',
    'rules-and-examples': 'Rules and worked examples',
    'poisoner': 'Shortcut notes',
}


def _section(text, start, end):
    i = text.find(start)
    if i < 0:
        return ''
    i += len(start)
    j = text.find(end, i)
    return text[i:] if j < 0 else text[i:j]


@dataclass(frozen=True)
class FactWorld:
    """ Reward landscape over contexts

    Attributes
    ----------
    required_facts: frozenset
        Facts the executor needs
    decoy_facts: frozenset
        Harmless facts of no value
    poison_facts: frozenset
        Facts that divide the score by 5 each
    strategy_graph: dict
        Strategy name -> list of steps. A step is the list of resources added
        at that step, a resource the list of facts it states.
    max_score: float
        Best achievable score, reached by `optimal_path`
    optimal_path: tuple
        Sequence of strategies, one per optimization step
    """
    name: str
    required_facts: frozenset
    decoy_facts: frozenset
    poison_facts: frozenset
    strategy_graph: dict
    max_score: float
    optimal_path: tuple = ()
    penalty: float = PENALTY

    def __post_init__(self):
        if not self.required_facts:
            raise ValueError("A world needs at least one required fact")
        overlap = self.required_facts & self.poison_facts
        if overlap:
            raise ValueError(f"Facts both required and poisonous: "
                             f"{sorted(overlap)}")
        unknown = [s for s in self.strategy_graph if s not in STRATEGIES]
        if unknown:
            raise ValueError(f"Unsupported strategies {unknown}. "
                             f"Choose between: {' '.join(STRATEGIES)}")
        for strategy, steps in self.strategy_graph.items():
            for resources in steps:
                for facts in resources:
                    stray = set(facts) - self.vocabulary
                    if stray:
                        raise ValueError(f"Strategy {strategy} states facts "
                                         f"outside the world: {sorted(stray)}")

    @property
    def vocabulary(self):
        return self.required_facts | self.decoy_facts | self.poison_facts

    def score_tokens(self, tokens):
        tokens = set(tokens)
        present = len(self.required_facts & tokens)
        poison = len(self.poison_facts & tokens)
        return present / len(self.required_facts) * self.penalty**poison

    def metric(self, output, reference=None):
        """ Reward of an executor output, the reference is not needed """
        return self.score_tokens(tokenize(output))

    def plan(self, strategy, step):
        """ Resources (lists of facts) added by `strategy` at `step`

        Empty once the plan of the strategy is exhausted, and always for
        ``no-op``.
        """
        if strategy not in STRATEGIES:
            raise ValueError(f"Unsupported strategy {strategy!r}. "
                             f"Choose between: {' '.join(STRATEGIES)}")
        if strategy == 'no-op':
            return []
        if strategy not in self.strategy_graph:
            raise ValueError(f"World {self.name} has no plan for {strategy}")
        steps = self.strategy_graph[strategy]
        return [list(r) for r in steps[step]] if step < len(steps) else []

    def path_score(self, path):
        """ Score reached by running the strategies of `path` in sequence """
        tokens = set()
        for i, strategy in enumerate(path):
            for facts in self.plan(strategy, list(path[:i]).count(strategy)):
                tokens.update(facts)
        return self.score_tokens(tokens)

    def to_record(self):
        return {
            'name': self.name,
            'required_facts': sorted(self.required_facts),
            'decoy_facts': sorted(self.decoy_facts),
            'poison_facts': sorted(self.poison_facts),
            'strategy_graph': self.strategy_graph,
            'max_score': self.max_score,
            'optimal_path': list(self.optimal_path),
            'penalty': self.penalty,
        }

    @classmethod
    def from_record(cls, record):
        return cls(record['name'], frozenset(record['required_facts']),
                   frozenset(record['decoy_facts']),
                   frozenset(record['poison_facts']),
                   {k: [[list(r) for r in step] for step in v]
                    for k, v in record['strategy_graph'].items()},
                   record['max_score'], tuple(record['optimal_path']),
                   record.get('penalty', PENALTY))


def world_reward(snapshot, world):
    """ Score of a context in `world`, a function of the content only """
    return world.score_tokens(tokenize(snapshot.text()))


def _resource_text(strategy, facts):
    return f"{_TITLES[strategy]}: {' '.join(facts)}"


def scripted_optimizer(world, strategy, step=0, information_seeking=False):
    """ Tool calls of one optimization step following `strategy`

    Planning first, then optionally an encyclopedia lookup, one addition per
    resource of the plan and the final answer, whose summary is tagged with
    the strategy name.

    Returns
    -------
    calls: list of ToolCall
    """
    resources = world.plan(strategy, step)
    tag = f"[strategy:{strategy}]"
    calls = [ToolCall('planning_tool', {
        'plan': f"{tag} step {step + 1}: add {len(resources)} resources"})]
    if information_seeking and strategy != 'no-op':
        calls.append(ToolCall('wikipedia_search_tool', {
            'query': f"{world.name} {strategy}"}))
    for i, facts in enumerate(resources):
        calls.append(ToolCall('context_manage_tool', {
            'action': 'add', 'content': _resource_text(strategy, facts),
            'summary': f"{strategy} step {step + 1} part {i + 1}"}))
    if resources:
        summary = (f"{tag} step {step + 1}: added "
                   f"{', '.join(sorted({f for r in resources for f in r}))}")
    else:
        summary = f"{tag} step {step + 1}: no change"
    calls.append(ToolCall('final_answer_tool', {'answer': summary}))
    return calls


class ScenarioOptimizer(object):
    """ Responder of a scripted optimizer backend

    The strategy of an update is, in order of precedence, the entry of
    `schedule` at the depth of the branch, the strategy of the last update
    in the history, or the first of `strategies`. If a sibling already tried
    it, the first untried strategy is used instead. The step of the plan is
    the number of times the branch already followed that strategy.
    """

    def __init__(self, world, strategies, schedule=None):
        self.world = world
        self.strategies = list(strategies)
        self.schedule = list(schedule) if schedule else None
        unknown = [s for s in self.strategies + (self.schedule or [])
                   if s not in STRATEGIES]
        if unknown:
            raise ValueError(f"Unsupported strategies {unknown}. "
                             f"Choose between: {' '.join(STRATEGIES)}")

    def choose(self, prompt):
        """ Strategy and plan step selected for an optimizer prompt """
        history = _section(prompt, '#### A. Context Update History',
                           '#### B. Context Preview')
        siblings = _section(prompt, '#### Previous attempted context updates',
                            '### RECOMMENDED WORKFLOW')
        followed = _STRATEGY_TAG_RE.findall(history)
        depth = len(re.findall(r'^- Update \d+:', history, re.M))
        if self.schedule:
            preferred = self.schedule[min(depth, len(self.schedule) - 1)]
        elif followed:
            preferred = followed[-1]
        else:
            preferred = self.strategies[0]
        tried = set(_STRATEGY_TAG_RE.findall(siblings))
        if preferred in tried:
            untried = [s for s in self.strategies if s not in tried]
            n_siblings = len(re.findall(r'^- Attempt \d+:', siblings, re.M))
            preferred = (untried[0] if untried else
                         self.strategies[n_siblings % len(self.strategies)])
        return preferred, followed.count(preferred)

    def __call__(self, messages):
        strategy, step = self.choose(messages[1].content)
        calls = scripted_optimizer(
            self.world, strategy, step,
            'wikipedia_search_tool' in messages[0].content)
        turn = sum(m.role == 'assistant' for m in messages)
        call = calls[min(turn, len(calls) - 1)]
        return f"Following the {strategy} strategy.\n{serialize_tool_call(call)}"


class WorldExecutor(object):
    """ Responder of a scripted executor backend

    Answers with the world facts found in the context preview. In training
    mode the answer is preceded by a usage summary tagging resources stating
    required facts as helpful and those stating poison facts as unhelpful.
    """

    def __init__(self, world):
        self.world = world

    def _usage(self, preview):
        helpful, unhelpful = [], []
        for resource_id, line in _RESOURCE_LINE_RE.findall(preview):
            tokens = set(tokenize(line))
            if tokens & self.world.poison_facts:
                unhelpful.append(resource_id)
            elif tokens & self.world.required_facts:
                helpful.append(resource_id)
        if not helpful and not unhelpful:
            return 'The context did not help with this task.'
        text = 'Context usage:'
        if helpful:
            text += f" \\helpful_resource_id{{{', '.join(helpful)}}}"
        if unhelpful:
            text += f" \\unhelpful_resource_id{{{', '.join(unhelpful)}}}"
        return text

    def __call__(self, messages):
        prompt = messages[1].content
        preview = _section(prompt, '#### CONTEXT PREVIEW', '#### TASK')
        turn = sum(m.role == 'assistant' for m in messages)
        if 'ctx_usage_summary_tool' in prompt and turn == 0:
            call = ToolCall('ctx_usage_summary_tool',
                            {'summary': self._usage(preview)})
        else:
            facts = sorted(set(tokenize(preview)) & self.world.vocabulary)
            call = ToolCall('final_answer_tool', {'answer': ' '.join(facts)})
        return serialize_tool_call(call)


@dataclass
class Scenario:
    """ World, optimizer behaviour and datasets of a simulated run """
    name: str
    world: FactWorld
    strategies: list
    schedule: Optional[list] = None
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    description: str = ''

    def executor_backend(self):
        return ScriptedBackend(responder=WorldExecutor(self.world))

    def optimizer_backend(self):
        return ScriptedBackend(responder=ScenarioOptimizer(
            self.world, self.strategies, self.schedule))

    def to_record(self):
        return {'name': self.name, 'description': self.description,
                'world': self.world.to_record(),
                'strategies': self.strategies, 'schedule': self.schedule}


def _tasks(world, prefix, n):
    reference = ' '.join(sorted(world.required_facts))
    return [{'task': f"{prefix} {i + 1}: answer with every relevant fact.",
             'reference': reference} for i in range(n)]


def _facts(prefix, n, start=1):
    return [f"{prefix}{i:02d}" for i in range(start, start + n)]


def scenario_local_optima():
    """ Greedy plateau at 0.5, escape to 0.9 by switching strategy

    The dictionary strategy states half of the required facts at its first
    step and only decoys afterwards. The rules strategy states four grammar
    facts, then examples repeating the dictionary facts. Following the
    dictionary once and then the rules reaches 0.9, as do two rules steps;
    the fifth grammar fact is out of reach.
    """
    vocab, grammar = _facts('vocab', 5), _facts('grammar', 5)
    decoys = _facts('decoy', 5)
    world = FactWorld(
        'local_optima', frozenset(vocab + grammar), frozenset(decoys),
        frozenset(),
        {'greedy-dictionary': [[vocab]] + [[[d]] for d in decoys],
         'rules-and-examples': [[grammar[:4]], [vocab]]},
        0.9, ('greedy-dictionary', 'rules-and-examples'))
    return Scenario('local_optima', world,
                    ['greedy-dictionary', 'rules-and-examples', 'no-op'],
                    None, _tasks(world, 'Train sentence', 4),
                    _tasks(world, 'Validation sentence', 2),
                    _tasks(world, 'Validation sentence', 2),
                    scenario_local_optima.__doc__.splitlines()[0])


def scenario_pollution():
    """ A single poisoned resource drops the score from 0.6 to 0.2

    The schedule follows the rules first, the poisoner then, and stops
    editing afterwards. The poisoner states the two missing facts together
    with a poison fact in one resource.
    """
    facts = _facts('fact', 5)
    world = FactWorld(
        'pollution', frozenset(facts), frozenset(), frozenset(['poison01']),
        {'rules-and-examples': [[facts[:3]]],
         'poisoner': [[facts[3:] + ['poison01']]]},
        0.6, ('rules-and-examples',))
    return Scenario('pollution', world,
                    ['rules-and-examples', 'poisoner', 'no-op'],
                    ['rules-and-examples', 'poisoner', 'no-op'],
                    _tasks(world, 'Train question', 4),
                    _tasks(world, 'Validation question', 2),
                    _tasks(world, 'Validation question', 2),
                    scenario_pollution.__doc__.splitlines()[0])


def scenario_random(seed, n_required=8, n_steps=3):
    """ Randomly generated landscape, for property tests of the trainers

    Plans of three strategies are drawn from the required, decoy and poison
    facts. The optimal path is searched exhaustively over paths of length
    `n_steps`.
    """
    rng = np.random.default_rng(seed)
    required = _facts('fact', n_required)
    decoys, poison = _facts('decoy', 4), _facts('poison', 2)
    pool = required + decoys + poison
    graph = {}
    for strategy in STRATEGIES[:3]:
        graph[strategy] = [
            [sorted(rng.choice(pool, size=rng.integers(1, 4), replace=False))
             for _ in range(rng.integers(1, 3))]
            for _ in range(rng.integers(1, n_steps + 1))]
    graph = {k: [[[str(f) for f in r] for r in step] for step in v]
             for k, v in graph.items()}
    strategies = list(rng.permutation(list(STRATEGIES)))
    world = FactWorld(f"random_{seed}", frozenset(required), frozenset(decoys),
                      frozenset(poison), graph, 0.0)
    paths = [()]
    for _ in range(n_steps):
        paths = [p + (s,) for p in paths for s in STRATEGIES]
    scores = [world.path_score(p) for p in paths]
    best = int(np.argmax(scores))
    world = FactWorld(world.name, world.required_facts, world.decoy_facts,
                      world.poison_facts, graph, scores[best], paths[best])
    schedule = [str(s) for s in rng.choice(STRATEGIES, size=n_steps + 2)]
    return Scenario(world.name, world, [str(s) for s in strategies],
                    schedule if rng.random() < 0.5 else None,
                    _tasks(world, 'Train item', 4),
                    _tasks(world, 'Validation item', 2),
                    _tasks(world, 'Validation item', 2))


SCENARIOS = {
    'local_optima': scenario_local_optima,
    'pollution': scenario_pollution,
}


def save_scenario(scenario, directory):
    """ Write ``scenario.json`` and the three JSON-lines datasets """
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, 'scenario.json'), 'w',
              encoding='utf-8') as f:
        json.dump(scenario.to_record(), f, indent=2, sort_keys=True)
        f.write('\n')
    for split in ('train', 'val', 'test'):
        pd.DataFrame(getattr(scenario, split), columns=['task', 'reference']
                     ).to_json(os.path.join(directory, f"{split}.jsonl"),
                               orient='records', lines=True, force_ascii=False)


def load_scenario(name_or_directory):
    """ Scenario from a fixture directory (or the name of a bundled one) """
    directory = name_or_directory
    if not os.path.isdir(directory):
        directory = os.path.join(FIXTURE_DIR, name_or_directory)
    path = os.path.join(directory, 'scenario.json')
    if not os.path.exists(path):
        raise FileNotFoundError(f"No scenario found at {name_or_directory}. "
                                f"Bundled ones: {' '.join(SCENARIOS)}")
    with open(path, encoding='utf-8') as f:
        record = json.load(f)
    splits = {}
    for split in ('train', 'val', 'test'):
        split_path = os.path.join(directory, f"{split}.jsonl")
        if os.path.exists(split_path):
            frame = pd.read_json(split_path, lines=True, dtype=False)
            splits[split] = frame.to_dict('records')
        else:
            splits[split] = []
    return Scenario(record['name'], FactWorld.from_record(record['world']),
                    record['strategies'], record.get('schedule'),
                    description=record.get('description', ''), **splits)
