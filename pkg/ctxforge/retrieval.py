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

""" Search over the resources of a context

Three flavours, all returning :class:`SearchHit` s sorted by descending score
with ties broken by resource position:

- :func:`keyword_search`: Jaccard overlap between query tokens and keywords
- :func:`embedding_search`: cosine similarity, mapped to [0, 1]
- :func:`agent_search`: ranking delegated to a chat backend

Embeddings come from an :class:`EmbeddingProvider`. They are computed lazily:
stale resources are embedded right before an embedding search.
"""
import json
import re
import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .context_store import tokenize, extract_keywords
from .agents import Message, BackendError, render_template


__all__ = [
    'SearchHit',
    'EmbeddingProvider',
    'HashingEmbedder',
    'embed',
    'embed_pending',
    'keyword_search',
    'embedding_search',
    'agent_search',
]

MATCH_KINDS = ('keyword', 'embedding', 'agent')
# Scores are rounded so that float noise never overrides the position rule
SCORE_DECIMALS = 12

_JSON_LIST_RE = re.compile(r'\[[^\[\]]*\]', re.DOTALL)


@dataclass(frozen=True)
class SearchHit:
    resource_id: str
    score: float
    match_kind: str


class EmbeddingProvider(object):
    """ Abstract embedding provider

    Child classes define ``name``, ``dim`` and ``embed(text)``. Instances are
    callable: the call validates the output of ``embed``.
    """

    def __call__(self, text):
        if not isinstance(text, str) or not text.strip():
            raise ValueError("Cannot embed an empty text")
        try:
            vec = np.asarray(self.embed(text), dtype=float)
        except (ValueError, NotImplementedError):
            raise
        except Exception as e:
            raise BackendError(f"Embedding provider {self.name} failed: "
                               f"{e}") from e
        if vec.shape != (self.dim,):
            raise ValueError(f"Provider {self.name} returned shape "
                             f"{vec.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"Provider {self.name} returned non-finite "
                             "entries")
        return vec

    def __getattr__(self, attr):
        message = ("Attempt to either use a bare 'EmbeddingProvider' object "
                   "or to use an incomplete child class.")
        if attr == 'embed':
            message += (" Child classes should implement 'embed', mapping a "
                        "text to a vector of length 'dim'")
        elif attr in ('name', 'dim'):
            message += (" Child classes should store in '%s' the %s of the "
                        "provider" % (attr, 'name' if attr == 'name'
                                      else 'embedding dimension'))
        else:
            raise AttributeError("'%s' object has no attribute '%s'"
                                 % (type(self).__name__, attr))
        raise NotImplementedError(message)


class HashingEmbedder(EmbeddingProvider):
    """ Seeded feature hashing with L2 normalization

    Every token increments one of `dim` buckets, chosen by a keyed BLAKE2
    hash of the token. Counts are nonnegative, so any text with at least one
    token has a nonzero vector. Texts without alphanumeric tokens are hashed
    character by character.

    Parameters
    ----------
    dim: int
        Embedding dimension
    seed: int
        Key of the hash
    """

    def __init__(self, dim=64, seed=0):
        if dim < 1:
            raise ValueError("dim has to be positive")
        self.dim = int(dim)
        self.seed = int(seed)
        self.name = f"feature-hashing-s{self.seed}"
        self._key = str(self.seed).encode('utf-8')

    def _bucket(self, token):
        digest = hashlib.blake2b(token.encode('utf-8'), digest_size=8,
                                 key=self._key).digest()
        return int.from_bytes(digest, 'little') % self.dim

    def embed(self, text):
        tokens = tokenize(text) or list(text.strip())
        vec = np.zeros(self.dim)
        for token in tokens:
            vec[self._bucket(token)] += 1.
        return vec / np.linalg.norm(vec)


DEFAULT_PROVIDER = HashingEmbedder()


def embed(text, provider=None):
    """ Embedding of `text` with `provider` (seeded hashing by default) """
    return (provider or DEFAULT_PROVIDER)(text)


def _register_provider(repository, provider):
    recorded = (repository.metadata.get('embedding_provider'),
                repository.metadata.get('embedding_dim'))
    if recorded == (None, None):
        repository.metadata['embedding_provider'] = provider.name
        repository.metadata['embedding_dim'] = provider.dim
    elif recorded != (provider.name, provider.dim):
        raise ValueError(
            f"The context was embedded with {recorded[0]} (dim {recorded[1]}); "
            f"mixing in {provider.name} (dim {provider.dim}) is not allowed")


def embed_pending(repository, provider=None):
    """ Embed every working resource without an embedding

    Returns
    -------
    n_embedded: int
    """
    provider = provider or DEFAULT_PROVIDER
    _register_provider(repository, provider)
    pending = {r.resource_id: provider(r.content)
               for r in repository.snapshot() if not r.is_embedded}
    if pending:
        repository.set_embeddings(pending)
        logging.info(f"Embedded {len(pending)} resources with {provider.name}")
    return len(pending)


def _rank(scores, k, match_kind, resource_ids, keep_zero=True):
    scores = np.round(np.asarray(scores, dtype=float), SCORE_DECIMALS)
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = [SearchHit(resource_ids[i], float(scores[i]), match_kind)
            for i in order if keep_zero or scores[i] > 0]
    return hits[:k]


def _check_k(k):
    if int(k) < 1:
        raise ValueError("k has to be a positive integer")
    return int(k)


def keyword_search(repository, query, k=5):
    """ Top-`k` resources by Jaccard overlap with the query tokens

    Resources without any overlap are not returned.
    """
    if not isinstance(query, str) or not query.strip():
        raise ValueError("empty query")
    k = _check_k(k)
    snapshot = repository.snapshot()
    query_tokens = extract_keywords(query)
    scores = []
    for r in snapshot:
        union = query_tokens | r.keywords
        scores.append(len(query_tokens & r.keywords) / len(union)
                      if union else 0.)
    return _rank(scores, k, 'keyword', snapshot.ids, keep_zero=False)


def embedding_search(repository, query, k=5, provider=None):
    """ Top-`k` resources by cosine similarity with the query

    Stale embeddings are flushed first. Scores are ``(1 + cos) / 2``.
    """
    if not isinstance(query, str) or not query.strip():
        raise ValueError("empty query")
    k = _check_k(k)
    provider = provider or DEFAULT_PROVIDER
    embed_pending(repository, provider)
    snapshot = repository.snapshot()
    if not snapshot:
        return []
    matrix = np.stack([r.embedding for r in snapshot])
    cos = np.clip(matrix @ provider(query), -1., 1.)
    return _rank((1. + cos) / 2., k, 'embedding', snapshot.ids)


def _parse_ranking(text):
    for candidate in _JSON_LIST_RE.findall(text):
        try:
            ranking = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if ranking and all(isinstance(i, str) for i in ranking):
            return ranking
    return None


def agent_search(repository, query, k, backend):
    """ Ranking delegated to a sub-agent

    The sub-agent receives the query and the summary listing of the context
    and replies with a JSON list of resource ids. Unknown ids are dropped,
    duplicates keep their first occurrence. Scores only encode the rank.
    """
    if not isinstance(query, str) or not query.strip():
        raise ValueError("empty query")
    k = _check_k(k)
    listing = repository.list_resources('summary')
    prompt = render_template('llm_search.j2', query=query, k=k,
                             listing=listing)
    reply = backend.complete([
        Message('system', 'You are a careful retrieval assistant.'),
        Message('user', prompt)])
    ranking = _parse_ranking(reply)
    if ranking is None:
        logging.warning(f"No parseable ranking in the sub-agent reply to "
                        f"{query!r}")
        return []
    known = {entry['resource_id'] for entry in listing}
    ids = []
    for resource_id in ranking:
        if resource_id in known and resource_id not in ids:
            ids.append(resource_id)
    ids = ids[:k]
    return [SearchHit(i, float(len(ids) - rank), 'agent')
            for rank, i in enumerate(ids)]
