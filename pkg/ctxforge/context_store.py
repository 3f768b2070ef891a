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

""" Versioned context store

A context is an ordered collection of :class:`Resource` s. Its states are
stored as immutable :class:`ContextSnapshot` s inside a
:class:`ContextRepository`, a small commit/branch graph that the optimizer
edits and the trainers fork, commit and restore.

Several repositories can live side by side in a :class:`ContextSession`;
exactly one of them is active at any time.
"""

# Note for developers
# -------------------
# 1) Snapshots are content addressed. The hash covers the canonical
#    serialization of every resource (embeddings excluded: they are derived
#    data and are recomputed on demand).
# 2) Commit ids hash (sequence number, parents, snapshot id, message), never
#    the wall-clock timestamp, so that two identical runs build identical
#    graphs.
# 3) The working state is a plain list of resources. It is discarded by
#    checkout and frozen into a snapshot by commit.

import os
import json
import re
import hashlib
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from graphlib import TopologicalSorter, CycleError
from typing import Optional

import numpy as np


__all__ = [
    'Resource',
    'ContextSnapshot',
    'Commit',
    'Branch',
    'ContextRepository',
    'ContextSession',
    'tokenize',
    'extract_keywords',
    'export_snapshot',
    'import_snapshot',
    'context_stats',
]


SOURCES = ('optimizer-authored', 'wikipedia', 'web', 'imported')
DETAIL_LEVELS = ('summary', 'preview', 'detail')
EDITABLE_FIELDS = ('content', 'summary', 'keywords')
MERGE_SEPARATOR = '\n---\n'
PREVIEW_CHARS = 200
TRUNCATION_MARKER = '... [truncated]'
ROOT_BRANCH = 'main'
SNAPSHOT_FORMAT = 'ctxforge-snapshot/1'

_TOKEN_RE = re.compile(r'[^\W_]+')
_RESOURCE_ID_RE = re.compile(r'^res-(\d+)$')


def tokenize(text):
    """ Lowercase alphanumeric tokens of `text`, in order of appearance """
    return _TOKEN_RE.findall(text.lower())


def extract_keywords(content, summary=''):
    """ Keyword set of a resource

    Lowercase alphanumeric tokens of length at least 3 taken from content and
    summary. Texts made only of shorter tokens fall back to all their tokens,
    texts without any token fall back to their stripped lowercase prefix, so
    that the set is never empty for a nonempty content.
    """
    tokens = tokenize(f"{content} {summary}")
    keywords = frozenset(t for t in tokens if len(t) >= 3)
    if not keywords and tokens:
        keywords = frozenset(tokens)
    if not keywords and content.strip():
        keywords = frozenset([content.strip().lower()[:32]])
    return keywords


def _hash_text(text):
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def _canonical(obj, indent=None):
    if indent is None:
        return json.dumps(obj, sort_keys=True, ensure_ascii=False,
                          separators=(',', ':'))
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


@dataclass(frozen=True)
class Resource:
    """ One atomic context item

    The embedding is optional and is excluded from equality and hashing.
    """
    resource_id: str
    summary: str
    content: str
    source: str = 'optimizer-authored'
    keywords: frozenset = frozenset()
    embedding: Optional[np.ndarray] = field(default=None, compare=False,
                                            repr=False)

    @property
    def length(self):
        return len(self.content)

    @property
    def is_embedded(self):
        return self.embedding is not None

    def to_record(self):
        return {
            'resource_id': self.resource_id,
            'summary': self.summary,
            'content': self.content,
            'source': self.source,
            'length': self.length,
            'keywords': sorted(self.keywords),
        }

    @classmethod
    def from_record(cls, record):
        """ Build a resource from its record, validating every invariant """
        missing = [k for k in ('resource_id', 'summary', 'content', 'source',
                               'length', 'keywords') if k not in record]
        if missing:
            raise ValueError(f"Resource record misses the fields: {missing}")
        for key in ('resource_id', 'summary', 'content', 'source'):
            if not isinstance(record[key], str):
                raise ValueError(f"Resource field {key} must be a string")
        if not record['resource_id']:
            raise ValueError("Empty resource_id")
        if record['source'] not in SOURCES:
            raise ValueError(
                f"Unsupported source {record['source']!r} for resource "
                f"{record['resource_id']}. Choose between: {' '.join(SOURCES)}")
        if record['length'] != len(record['content']):
            raise ValueError(
                f"Resource {record['resource_id']}: declared length "
                f"{record['length']} but content has {len(record['content'])} "
                "characters")
        keywords = frozenset(record['keywords'])
        if record['content'] and not keywords:
            raise ValueError(
                f"Resource {record['resource_id']} has content but no keywords")
        if any(k != k.lower() for k in keywords):
            raise ValueError(
                f"Resource {record['resource_id']} has non-lowercase keywords")
        return cls(record['resource_id'], record['summary'],
                   record['content'], record['source'], keywords)


class ContextSnapshot(tuple):
    """ Ordered, immutable collection of resources

    The :attr:`snapshot_id` is the SHA-256 of the canonical serialization,
    hence it depends on the order, the ids, the contents, the summaries and
    the rest of the metadata of every resource.
    """
    def __new__(cls, resources=()):
        resources = tuple(resources)
        ids = [r.resource_id for r in resources]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"Duplicate resource ids in snapshot: {dup}")
        return tuple.__new__(cls, resources)

    @property
    def ids(self):
        return [r.resource_id for r in self]

    def serialize(self):
        return _canonical([r.to_record() for r in self])

    @cached_property
    def snapshot_id(self):
        return _hash_text(self.serialize())

    def get(self, resource_id):
        for r in self:
            if r.resource_id == resource_id:
                return r
        raise KeyError(f"no such resource: {resource_id}")

    def __contains__(self, resource_id):
        if isinstance(resource_id, Resource):
            return tuple.__contains__(self, resource_id)
        return any(r.resource_id == resource_id for r in self)

    def text(self):
        """ Concatenated contents, used by content-only scorers """
        return '\n'.join(r.content for r in self)


@dataclass(frozen=True)
class Commit:
    commit_id: str
    parent_ids: tuple
    snapshot_id: str
    message: str
    timestamp: str

    def to_record(self):
        return {
            'commit_id': self.commit_id,
            'parent_ids': list(self.parent_ids),
            'snapshot_id': self.snapshot_id,
            'message': self.message,
            'timestamp': self.timestamp,
        }

    @classmethod
    def from_record(cls, record):
        return cls(record['commit_id'], tuple(record['parent_ids']),
                   record['snapshot_id'], record['message'],
                   record['timestamp'])


@dataclass
class Branch:
    name: str
    head: str
    description: str = ''
    metadata: dict = field(default_factory=dict)

    def to_record(self):
        return {'name': self.name, 'head': self.head,
                'description': self.description, 'metadata': self.metadata}


class ContextRepository(object):
    """ Branch/commit graph over context snapshots

    Parameters
    ----------
    path: str
        If provided, the repository is persisted in this (new or empty)
        directory and every commit and reference change is written through.
        Use :meth:`load` to reopen an existing repository.

    Notes
    -----
    A new repository holds one root commit of the empty snapshot, on the
    branch ``main``, which is checked out.
    Writes are serialized: a repository has a single writer.
    """

    def __init__(self, path=None):
        self.path = None
        self.metadata = {}
        self._commits = {}
        self._snapshots = {}
        self._branches = {}
        self._next_resource = 1
        self._active_branch = None
        self._detached = None
        self._working = []
        empty = ContextSnapshot()
        root = self._new_commit((), empty, 'init')
        self._branches[ROOT_BRANCH] = Branch(ROOT_BRANCH, root,
                                             'root of the repository')
        self._active_branch = ROOT_BRANCH
        if path is not None:
            self.save(path)

    # ---- state -----------------------------------------------------------

    @property
    def active_branch(self):
        return self._active_branch

    @property
    def is_detached(self):
        return self._active_branch is None

    @property
    def head(self):
        if self._active_branch is None:
            return self._detached
        return self._branches[self._active_branch].head

    @property
    def root(self):
        return next(iter(self._commits))

    @property
    def commits(self):
        """ All commits, in creation order """
        return list(self._commits.values())

    def snapshot(self):
        """ Current working state as a snapshot (uncommitted edits included) """
        return ContextSnapshot(self._working)

    def head_snapshot(self):
        return self._snapshots[self._commits[self.head].snapshot_id]

    def is_dirty(self):
        return self.snapshot().snapshot_id != self.head_snapshot().snapshot_id

    def resolve(self, ref=None):
        """ Commit id of a branch name or commit id (current head if None) """
        if ref is None:
            return self.head
        if ref in self._branches:
            return self._branches[ref].head
        if ref in self._commits:
            return ref
        raise KeyError(f"no such branch or commit: {ref}")

    def get_commit(self, ref=None):
        return self._commits[self.resolve(ref)]

    def snapshot_at(self, ref=None):
        return self._snapshots[self.get_commit(ref).snapshot_id]

    def get_branch(self, name):
        try:
            return self._branches[name]
        except KeyError:
            raise KeyError(f"no such branch: {name}") from None

    # ---- resources -------------------------------------------------------

    def _check_writable(self):
        if self._active_branch is None:
            raise RuntimeError(
                f"Detached checkout of commit {self._detached} is read-only. "
                "Checkout a branch to edit the context.")

    def _index(self, resource_id):
        for i, r in enumerate(self._working):
            if r.resource_id == resource_id:
                return i
        raise KeyError(f"no such resource: {resource_id}")

    def _new_resource_id(self):
        resource_id = f"res-{self._next_resource:04d}"
        self._next_resource += 1
        return resource_id

    def _reserve_ids(self, resource_ids):
        for resource_id in resource_ids:
            match = _RESOURCE_ID_RE.match(resource_id)
            if match:
                self._next_resource = max(self._next_resource,
                                          int(match.group(1)) + 1)

    def add_resource(self, content, summary='', source='optimizer-authored'):
        """ Append a new resource to the working state

        Returns
        -------
        resource_id: str
        """
        self._check_writable()
        if not isinstance(content, str) or not content.strip():
            raise ValueError("empty content: a resource needs some content")
        if source not in SOURCES:
            raise ValueError(f"Unsupported source {source!r}. "
                             f"Choose between: {' '.join(SOURCES)}")
        resource = Resource(self._new_resource_id(), summary, content, source,
                            extract_keywords(content, summary))
        self._working.append(resource)
        return resource.resource_id

    def update_resource(self, resource_id, field_name, new_value):
        """ Replace one editable field of a resource

        Changing content or summary recomputes the keywords; changing the
        content also drops the embedding, which becomes stale.
        """
        self._check_writable()
        if field_name == 'resource_id':
            raise ValueError("resource_id is immutable")
        if field_name not in EDITABLE_FIELDS:
            raise ValueError(f"Unsupported field {field_name!r}. "
                             f"Choose between: {' '.join(EDITABLE_FIELDS)}")
        i = self._index(resource_id)
        old = self._working[i]
        if field_name == 'content':
            if not isinstance(new_value, str) or not new_value.strip():
                raise ValueError("empty content: a resource needs some content")
            new = replace(old, content=new_value, embedding=None,
                          keywords=extract_keywords(new_value, old.summary))
        elif field_name == 'summary':
            new_value = str(new_value)
            new = replace(old, summary=new_value,
                          keywords=extract_keywords(old.content, new_value))
        else:
            if isinstance(new_value, str):
                new_value = tokenize(new_value)
            keywords = frozenset(str(k).lower() for k in new_value if str(k))
            if not keywords:
                raise ValueError("keywords cannot be empty for a resource "
                                 "with content")
            new = replace(old, keywords=keywords)
        self._working[i] = new

    def remove_resource(self, resource_id):
        """ Remove a resource from the working state

        Committed snapshots still hold it.
        """
        self._check_writable()
        del self._working[self._index(resource_id)]

    delete_resource = remove_resource

    def swap_resources(self, id_a, id_b):
        self._check_writable()
        i, j = self._index(id_a), self._index(id_b)
        self._working[i], self._working[j] = self._working[j], self._working[i]

    def merge_resources(self, id_a, id_b, merged_summary):
        """ Replace two resources by their concatenation

        The merged resource takes the position of `id_a`.

        Returns
        -------
        resource_id: str
            Id of the merged resource
        """
        self._check_writable()
        if id_a == id_b:
            raise ValueError("cannot merge a resource with itself")
        i, j = self._index(id_a), self._index(id_b)
        a, b = self._working[i], self._working[j]
        content = a.content + MERGE_SEPARATOR + b.content
        source = a.source if a.source == b.source else 'optimizer-authored'
        merged = Resource(self._new_resource_id(), merged_summary, content,
                          source, extract_keywords(content, merged_summary))
        self._working[i] = merged
        del self._working[j]
        return merged.resource_id

    def get_resource(self, resource_id):
        return self._working[self._index(resource_id)]

    def list_resources(self, detail='summary', limit=None,
                       preview_chars=PREVIEW_CHARS):
        """ Listing of the working state

        Parameters
        ----------
        detail: str
            ``summary`` (id, summary, length), ``preview`` (plus the first
            `preview_chars` characters of the content, followed by a
            truncation marker when cut) or ``detail`` (plus the full content)
        limit: int
            Maximum number of entries (all if None)

        Returns
        -------
        listing: list of dict
        """
        if detail not in DETAIL_LEVELS:
            raise ValueError(f"Unsupported detail level {detail!r}. "
                             f"Choose between: {' '.join(DETAIL_LEVELS)}")
        resources = self._working if limit is None else self._working[:limit]
        return [_listing_entry(r, detail, preview_chars) for r in resources]

    def set_embeddings(self, embeddings):
        """ Attach embeddings to the working resources

        `embeddings` maps resource ids to vectors. Embeddings are derived
        data: this is allowed in a detached checkout as well.
        """
        for i, r in enumerate(self._working):
            if r.resource_id in embeddings:
                self._working[i] = replace(r,
                                           embedding=embeddings[r.resource_id])

    def load_snapshot(self, snapshot):
        """ Replace the working state with the resources of `snapshot` """
        self._check_writable()
        self._reserve_ids(snapshot.ids)
        self._working = list(snapshot)

    # ---- version control -------------------------------------------------

    def _new_commit(self, parent_ids, snapshot, message):
        record = {'seq': len(self._commits), 'parents': list(parent_ids),
                  'snapshot_id': snapshot.snapshot_id, 'message': message}
        commit = Commit(_hash_text(_canonical(record))[:20], tuple(parent_ids),
                        snapshot.snapshot_id, message,
                        datetime.now(timezone.utc).isoformat())
        self._snapshots.setdefault(snapshot.snapshot_id, snapshot)
        self._commits[commit.commit_id] = commit
        if self.path is not None:
            self._persist_commit(commit)
        return commit.commit_id

    def commit(self, message=''):
        """ Freeze the working state into a new commit on the active branch

        Empty-diff commits are allowed.

        Returns
        -------
        commit_id: str
        """
        self._check_writable()
        branch = self._branches[self._active_branch]
        commit_id = self._new_commit((branch.head,), self.snapshot(), message)
        branch.head = commit_id
        self._working = list(self.head_snapshot())
        self._persist_refs()
        return commit_id

    def create_branch(self, name, description=''):
        """ Fork the current head into a new branch

        The active branch does not change.
        """
        if not name or not isinstance(name, str):
            raise ValueError("branch name must be a nonempty string")
        if name in self._branches:
            raise ValueError(f"branch {name} already exists")
        self._branches[name] = Branch(name, self.head, description)
        self._persist_refs()

    def checkout(self, target):
        """ Switch to a branch or to a commit

        Uncommitted edits are discarded. Checking out a commit id that is not
        a branch name gives a read-only detached state.
        """
        if target in self._branches:
            self._active_branch, self._detached = target, None
        elif target in self._commits:
            self._active_branch, self._detached = None, target
        else:
            raise KeyError(f"no such branch or commit: {target}")
        self._working = list(self.head_snapshot())
        self._persist_refs()

    def merge_branch(self, source, target):
        """ Merge the resources of `source` into `target`

        The merged snapshot holds the resources of `target` in order, then
        those of `source` whose id is not in `target`. On an id present in
        both with different records, the version of `target` is kept and the
        conflict is recorded in the commit message.

        Returns
        -------
        commit_id: str
            The merge commit, now head of `target`
        """
        if source == target:
            raise ValueError("cannot merge a branch into itself")
        src, tgt = self.get_branch(source), self.get_branch(target)
        src_snap, tgt_snap = self.snapshot_at(source), self.snapshot_at(target)
        tgt_ids = set(tgt_snap.ids)
        conflicts = [r.resource_id for r in src_snap
                     if r.resource_id in tgt_ids
                     and r != tgt_snap.get(r.resource_id)]
        merged = ContextSnapshot(
            list(tgt_snap) + [r for r in src_snap if r.resource_id not in tgt_ids])
        message = f"Merge branch '{source}' into '{target}'"
        if conflicts:
            message += f"\nconflicts (target kept): {', '.join(conflicts)}"
            logging.warning(f"Merge {source} -> {target}: conflicting "
                            f"resources {conflicts}, target version kept")
        commit_id = self._new_commit((tgt.head, src.head), merged, message)
        tgt.head = commit_id
        self.check_acyclic()
        if self._active_branch == target:
            self._working = list(merged)
        self._persist_refs()
        return commit_id

    def update_branch_info(self, name, key, value):
        self.get_branch(name).metadata[key] = value
        self._persist_refs()

    def list_branches(self):
        return list(self._branches.values())

    def log(self, ref=None, limit=None):
        """ Commits reachable following first parents, newest first """
        res = []
        commit_id = self.resolve(ref)
        while commit_id is not None and (limit is None or len(res) < limit):
            commit = self._commits[commit_id]
            res.append(commit)
            commit_id = commit.parent_ids[0] if commit.parent_ids else None
        return res

    def check_acyclic(self):
        graph = {c.commit_id: set(c.parent_ids) for c in self._commits.values()}
        try:
            tuple(TopologicalSorter(graph).static_order())
        except CycleError as e:
            logging.error(f"Cycle in the commit graph: {e.args[1]}")
            raise RuntimeError("commit graph is not acyclic") from e

    # ---- persistence -----------------------------------------------------

    def _persist_commit(self, commit):
        snap_file = os.path.join(self.path, 'snapshots',
                                 f"{commit.snapshot_id}.json")
        if not os.path.exists(snap_file):
            with open(snap_file, 'w', encoding='utf-8') as f:
                f.write(self._snapshots[commit.snapshot_id].serialize())
        with open(os.path.join(self.path, 'commits.jsonl'), 'a',
                  encoding='utf-8') as f:
            f.write(_canonical(commit.to_record()) + '\n')

    def _persist_refs(self):
        if self.path is None:
            return
        refs = {
            'branches': [b.to_record() for b in self._branches.values()],
            'active_branch': self._active_branch,
            'detached': self._detached,
            'next_resource': self._next_resource,
            'metadata': self.metadata,
        }
        tmp = os.path.join(self.path, 'refs.json.tmp')
        with open(tmp, 'w', encoding='utf-8') as f:
            f.write(_canonical(refs, indent=1))
        os.replace(tmp, os.path.join(self.path, 'refs.json'))

    def save(self, path):
        """ Persist into `path` and keep writing through from now on """
        if os.path.exists(os.path.join(path, 'commits.jsonl')):
            raise ValueError(f"{path} already holds a repository, "
                             "use ContextRepository.load")
        os.makedirs(os.path.join(path, 'snapshots'), exist_ok=True)
        self.path = path
        for commit in self._commits.values():
            self._persist_commit(commit)
        self._persist_refs()

    @classmethod
    def load(cls, path, provider=None):
        """ Reopen a persisted repository

        Parameters
        ----------
        path: str
            Repository directory
        provider: EmbeddingProvider
            If given, a repository whose recorded embedding provider differs
            (name or dimension) is rejected.
        """
        log_file = os.path.join(path, 'commits.jsonl')
        if not os.path.exists(log_file):
            raise FileNotFoundError(f"No repository found in {path}")
        repo = cls.__new__(cls)
        repo.path = None
        repo._commits, repo._snapshots = {}, {}
        with open(log_file, encoding='utf-8') as f:
            for line in f:
                if not line.strip():
                    continue
                commit = Commit.from_record(json.loads(line))
                snap_file = os.path.join(path, 'snapshots',
                                         f"{commit.snapshot_id}.json")
                with open(snap_file, encoding='utf-8') as fs:
                    text = fs.read()
                if _hash_text(text) != commit.snapshot_id:
                    raise ValueError(f"Corrupted snapshot file {snap_file}")
                repo._snapshots[commit.snapshot_id] = ContextSnapshot(
                    Resource.from_record(r) for r in json.loads(text))
                repo._commits[commit.commit_id] = commit
        with open(os.path.join(path, 'refs.json'), encoding='utf-8') as f:
            refs = json.load(f)
        repo._branches = {b['name']: Branch(**b) for b in refs['branches']}
        repo._active_branch = refs['active_branch']
        repo._detached = refs['detached']
        repo._next_resource = refs['next_resource']
        repo.metadata = refs['metadata']
        if provider is not None and 'embedding_provider' in repo.metadata:
            recorded = (repo.metadata['embedding_provider'],
                        repo.metadata['embedding_dim'])
            if recorded != (provider.name, provider.dim):
                raise ValueError(
                    f"Repository {path} was embedded with {recorded[0]} "
                    f"(dim {recorded[1]}), not with {provider.name} "
                    f"(dim {provider.dim})")
        repo._working = list(repo.head_snapshot())
        repo.check_acyclic()
        repo.path = path
        return repo


def _listing_entry(resource, detail, preview_chars=PREVIEW_CHARS):
    entry = {'resource_id': resource.resource_id,
             'summary': resource.summary,
             'length': resource.length}
    if detail == 'preview':
        preview = resource.content[:preview_chars]
        if resource.length > preview_chars:
            preview += TRUNCATION_MARKER
        entry['preview'] = preview
    elif detail == 'detail':
        entry['content'] = resource.content
    return entry


class ContextSession(object):
    """ Registry of contexts, one of them active

    Parameters
    ----------
    repository: ContextRepository
        Optional repository registered (and made active) as ``ctx-0``
    """

    def __init__(self, repository=None):
        self._contexts = {}
        self.active_id = None
        if repository is not None:
            self._register(repository)

    def _register(self, repository):
        context_id = f"ctx-{len(self._contexts)}"
        self._contexts[context_id] = repository
        self.active_id = context_id
        return context_id

    @property
    def context_ids(self):
        return list(self._contexts)

    @property
    def active(self):
        if self.active_id is None:
            raise RuntimeError("No active context: call create_context first")
        return self._contexts[self.active_id]

    def __getitem__(self, context_id):
        try:
            return self._contexts[context_id]
        except KeyError:
            raise KeyError(
                f"no such context: {context_id}. "
                f"Choose between: {' '.join(self._contexts)}") from None

    def create_context(self):
        """ New empty context, which becomes the active one

        Returns
        -------
        snapshot: ContextSnapshot
            The (empty) snapshot of the new context
        """
        repository = ContextRepository()
        self._register(repository)
        return repository.snapshot()

    def set_active(self, context_id):
        self[context_id]
        self.active_id = context_id


def export_snapshot(snapshot, path=None):
    """ Serialize a snapshot as a standalone JSON document

    The document is stable: equal snapshots give byte-identical files.

    Returns
    -------
    text: str
    """
    doc = {'format': SNAPSHOT_FORMAT,
           'snapshot_id': snapshot.snapshot_id,
           'resources': [r.to_record() for r in snapshot]}
    text = _canonical(doc, indent=2) + '\n'
    if path is not None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    return text


def import_snapshot(path=None, text=None):
    """ Read and validate a document written by :func:`export_snapshot`

    Raises
    ------
    ValueError
        If any resource invariant is violated, ids are duplicated or the
        declared snapshot id does not match the content.
    """
    if text is None:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"Snapshot document is not valid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get('format') != SNAPSHOT_FORMAT:
        raise ValueError(f"Not a {SNAPSHOT_FORMAT} document")
    snapshot = ContextSnapshot(
        Resource.from_record(r) for r in doc.get('resources', []))
    declared = doc.get('snapshot_id')
    if declared is not None and declared != snapshot.snapshot_id:
        raise ValueError(f"Declared snapshot id {declared} does not match the "
                         f"content ({snapshot.snapshot_id})")
    return snapshot


def context_stats(snapshot):
    lengths = np.array([r.length for r in snapshot], dtype=float)
    return {'n_resources': len(snapshot),
            'total_length': int(lengths.sum()),
            'mean_length': float(lengths.mean()) if len(lengths) else 0.0}
