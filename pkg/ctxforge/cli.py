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

""" Command line interface

::

    ctxforge train --config run.json [--mode beam] [--seed 0] [--resume]
    ctxforge eval --config run.json [--ref best] [--dataset test.jsonl]
    ctxforge inspect RUN_DIR branches|log|context|trajectory|scores
    ctxforge export REPO --ref best --file context.json
    ctxforge import REPO --file context.json --branch imported

A run directory holds the context repository (``repo/``), the run ledger
(``ledger.jsonl``), the agent trajectories (``trajectories.jsonl``) and the
summary of every run made in it (``result.json``).

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
import os
import sys
import json
import logging
import argparse
from dataclasses import replace
from contextlib import contextmanager

import pandas as pd

from .context_store import (ContextRepository, export_snapshot,
                            import_snapshot, context_stats, DETAIL_LEVELS)
from .tools import render_listing
from .training import RunLedger, verbose_callback, train
from .evaluation import evaluate, load_dataset
from .run_helpers import ConfigError, load_run_config, get_run_components


__all__ = [
    'main',
    'cmd_train',
    'cmd_eval',
    'cmd_inspect',
    'cmd_export',
    'cmd_import',
]


INSPECT_VIEWS = ('branches', 'log', 'context', 'trajectory', 'scores')
LOCK_FILE = '.lock'
REPO_DIR = 'repo'
LEDGER_FILE = 'ledger.jsonl'
TRAJECTORY_FILE = 'trajectories.jsonl'
RESULT_FILE = 'result.json'


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        raise ConfigError(f"usage: {message}")


@contextmanager
def _lock(directory):
    """ Exclusive ownership of a run directory """
    path = os.path.join(directory, LOCK_FILE)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"out: {directory} is locked by another process "
                          f"(remove {path} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        os.remove(path)


def _repo_dir(path):
    if os.path.exists(os.path.join(path, 'commits.jsonl')):
        return path
    return os.path.join(path, REPO_DIR)


def _load_repo(path, provider=None):
    return ContextRepository.load(_repo_dir(path), provider)


def _read_result(out):
    path = os.path.join(out, RESULT_FILE)
    if not os.path.exists(path):
        return {'runs': []}
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def _print_table(frame, csv=False):
    if csv:
        print(frame.to_csv(index=False), end='')
    elif frame.empty:
        print('(no rows)')
    else:
        print(frame.to_string(index=False))


def cmd_train(args):
    overrides = {'mode': args.mode, 'seed': args.seed,
                 'fixtures': args.fixtures, 'out': args.out}
    run = load_run_config(args.config, overrides)
    if run.train is None or run.val is None:
        raise ConfigError(f"{'train' if run.train is None else 'val'}: "
                          "dataset path required for training")
    out = run.out
    repo_path = os.path.join(out, REPO_DIR)
    if args.resume:
        if not os.path.exists(os.path.join(repo_path, 'commits.jsonl')):
            raise FileNotFoundError(f"out: nothing to resume in {out}")
    elif os.path.isdir(out) and os.listdir(out):
        raise ConfigError(f"out: {out} is not empty, use --resume to "
                          "continue the run or choose another directory")
    os.makedirs(out, exist_ok=True)

    with _lock(out):
        comp = get_run_components(run)
        previous = _read_result(out)
        start = None
        config = run.train_config
        if args.resume:
            repository = ContextRepository.load(repo_path, comp.provider)
            if previous['runs']:
                start = previous['runs'][-1]['branch']
            config = replace(config,
                             branch_prefix=f"run{len(previous['runs']) + 1}/")
        else:
            repository = ContextRepository(repo_path)
        res = train(config, comp.train, comp.val, comp.executor,
                    comp.optimizer_backend, comp.metric, repository,
                    start=start,
                    ledger=RunLedger(os.path.join(out, LEDGER_FILE)),
                    provider=comp.provider,
                    search_backend=comp.search_backend,
                    wikipedia=comp.wikipedia, browser=comp.browser,
                    optimizer_max_steps=run.optimizer_max_steps,
                    retries=run.retries, backoff=run.backoff,
                    preview_chars=run.preview_chars,
                    payload_cap=run.payload_cap,
                    callback=verbose_callback() if args.verbose else None,
                    trajectory_log=os.path.join(out, TRAJECTORY_FILE))
        summary = {
            'mode': config.mode,
            'seed': config.seed,
            'branch': res.branch,
            'head': res.head,
            'score': res.fun,
            'snapshot_id': res.snapshot_id,
            'n_optimizer_calls': res.n_optimizer_calls,
            'n_validations': res.n_validations,
            'best_scores': res.best_scores,
        }
        summary.update(context_stats(res.x))
        previous['runs'].append(summary)
        with open(os.path.join(out, RESULT_FILE), 'w', encoding='utf-8') as f:
            json.dump(previous, f, indent=2)
    print(f"best branch: {res.branch}")
    print(f"score: {res.fun}")
    print(f"snapshot: {res.snapshot_id}")
    print(f"resources: {summary['n_resources']}")
    return 0


def cmd_eval(args):
    run = load_run_config(args.config, {'fixtures': args.fixtures})
    comp = get_run_components(run)
    repository = _load_repo(args.repo or run.out, comp.provider)
    snapshot = repository.snapshot_at(args.ref)
    if args.dataset is not None:
        if not os.path.exists(args.dataset):
            raise FileNotFoundError(f"dataset not found: {args.dataset}")
        tasks = load_dataset(args.dataset)
    elif comp.test is not None:
        tasks = comp.test
    else:
        raise ConfigError("test: no evaluation dataset, pass --dataset")
    metric = comp.metric if args.metric is None else args.metric
    report_path = args.report or os.path.join(
        args.repo or run.out, f"eval_{args.ref.replace('/', '_')}.json")
    report = evaluate(comp.executor, snapshot, tasks, metric, report_path)
    print(f"mean {report.metric}: {report.mean}")
    print(f"report: {report_path}")
    return 0


def _inspect_branches(repository):
    rows = []
    for b in repository.list_branches():
        stats = context_stats(repository.snapshot_at(b.head))
        rows.append(dict(name=b.name, head=b.head,
                         score=b.metadata.get('score'),
                         description=b.description, **stats))
    return pd.DataFrame(rows)


def _inspect_log(repository, ref, limit):
    rows = [{'commit': c.commit_id, 'parents': ' '.join(c.parent_ids),
             'message': c.message.splitlines()[0] if c.message else '',
             'n_resources': len(repository.snapshot_at(c.commit_id))}
            for c in repository.log(ref, limit)]
    return pd.DataFrame(rows)


def _inspect_scores(path):
    ledger = RunLedger.load(os.path.join(path, LEDGER_FILE))
    frame = ledger.to_frame()
    if frame.empty:
        return frame
    columns = [c for c in ('event', 'step', 'ref', 'branch', 'commit',
                           'score', 'best_score', 'n_resources', 'summary')
               if c in frame.columns]
    return frame[columns]


def _inspect_trajectories(path, limit):
    rows = []
    with open(os.path.join(path, TRAJECTORY_FILE), encoding='utf-8') as f:
        for line in f:
            if not line.strip():
                continue
            t = json.loads(line)
            rows.append({'stage': t.get('stage'),
                         'where': t.get('branch') or t.get('ref'),
                         'role': t['role'], 'mode': t['mode'],
                         'status': t['status'], 'steps': t['step_count'],
                         'final_answer': (t['final_answer'] or '')[:60]})
    frame = pd.DataFrame(rows)
    return frame if limit is None else frame.tail(limit)


def cmd_inspect(args):
    if not os.path.exists(args.path):
        raise FileNotFoundError(f"no run or repository at {args.path}")
    if args.what == 'scores':
        _print_table(_inspect_scores(args.path), args.csv)
        return 0
    if args.what == 'trajectory':
        _print_table(_inspect_trajectories(args.path, args.limit), args.csv)
        return 0
    repository = _load_repo(args.path)
    if args.what == 'branches':
        _print_table(_inspect_branches(repository), args.csv)
    elif args.what == 'log':
        _print_table(_inspect_log(repository, args.ref, args.limit), args.csv)
    else:
        # A scratch copy keeps the persisted refs untouched
        scratch = ContextRepository()
        scratch.load_snapshot(repository.snapshot_at(args.ref))
        print(render_listing(scratch.list_resources(args.detail, args.limit))
              or '(empty context)')
    return 0


def cmd_export(args):
    repository = _load_repo(args.repo)
    snapshot = repository.snapshot_at(args.ref)
    export_snapshot(snapshot, args.file)
    print(f"exported {snapshot.snapshot_id} ({len(snapshot)} resources) "
          f"to {args.file}")
    return 0


def cmd_import(args):
    snapshot = import_snapshot(args.file)
    repository = _load_repo(args.repo)
    if any(b.name == args.branch for b in repository.list_branches()):
        raise ConfigError(f"branch: {args.branch} already exists")
    repository.checkout(repository.root)
    repository.create_branch(args.branch, f"imported from {args.file}")
    repository.checkout(args.branch)
    repository.load_snapshot(snapshot)
    head = repository.commit(args.message
                             or f"import {os.path.basename(args.file)}")
    print(f"imported {snapshot.snapshot_id} on {args.branch} ({head})")
    return 0


def _parser():
    parser = _Parser(prog='ctxforge',
                     description='Train, evaluate and inspect contexts.')
    parser.add_argument('--verbose', action='store_true',
                        help='log progress at INFO level')
    sub = parser.add_subparsers(dest='command', required=True,
                                parser_class=_Parser)

    p = sub.add_parser('train', help='run a training')
    p.add_argument('--config', required=True)
    p.add_argument('--mode', choices=('bon', 'seq', 'beam'))
    p.add_argument('--seed', type=int)
    p.add_argument('--resume', action='store_true')
    p.add_argument('--fixtures')
    p.add_argument('--out')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='evaluate a context on held-out tasks')
    p.add_argument('--config', required=True)
    p.add_argument('--repo', help='run directory or repository '
                   '(default: out of the config)')
    p.add_argument('--ref', default='best', help='branch or commit')
    p.add_argument('--dataset')
    p.add_argument('--metric')
    p.add_argument('--fixtures')
    p.add_argument('--report', help='report path')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('inspect', help='tables of a run')
    p.add_argument('path', help='run directory or repository')
    p.add_argument('what', choices=INSPECT_VIEWS)
    p.add_argument('--ref', help='branch or commit (default: active)')
    p.add_argument('--detail', choices=DETAIL_LEVELS, default='summary')
    p.add_argument('--limit', type=int)
    p.add_argument('--csv', action='store_true')
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser('export', help='write a snapshot to a file')
    p.add_argument('repo')
    p.add_argument('--ref', default='best')
    p.add_argument('--file', required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser('import', help='commit a snapshot file on a new branch')
    p.add_argument('repo')
    p.add_argument('--file', required=True)
    p.add_argument('--branch', required=True)
    p.add_argument('--message')
    p.set_defaults(func=cmd_import)
    return parser


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except ConfigError as e:
        print(f"ctxforge: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(message)s')
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as e:
        message = e.args[0] if isinstance(e, KeyError) and e.args else e
        logging.error(message)
        print(f"ctxforge: error: {message}", file=sys.stderr)
        return 1
    except Exception as e:
        logging.error(f"{type(e).__name__}: {e}")
        print(f"ctxforge: failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
