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

""" Provide handy access to run configurations and their components
"""
import os
import json
import types

from .agents import API_KEY_ENV, ScriptedBackend, LiveBackend
from .retrieval import HashingEmbedder
from .tools import (PAYLOAD_CAP, load_fixture, FixtureWikipedia,
                    LiveWikipedia, FixtureBrowser, LiveBrowser)
from .training import TrainConfig, Executor, PREVIEW_STRATEGIES
from .evaluation import load_dataset, get_metric
from .sim_env import FIXTURE_DIR, SCENARIOS, load_scenario


__all__ = [
    'ConfigError',
    'load_run_config',
    'standardize_run_config',
    'get_run_components',
]

# key: (accepted types, default)
RUN_CONFIG_KEYS = {
    'mode': (str, 'beam'),
    'beam_width': (int, 2),
    'branching': (int, 3),
    'steps_per_child': (int, 1),
    'epochs': (int, 2),
    'batch_size': (int, 4),
    'max_global_steps': (int, None),
    'seed': (int, 0),
    'information_seeking': (bool, False),
    'n_samples': (int, 8),
    'train': (str, None),
    'val': (str, None),
    'test': (str, None),
    'metric': (str, 'exact_match'),
    'backend': (str, 'scripted'),
    'fixtures': (str, None),
    'out': (str, 'ctxforge_run'),
    'scenario': (str, None),
    'preview_strategy': (str, 'embedding'),
    'preview_k': (int, 8),
    'preview_chars': (int, 200),
    'payload_cap': (int, PAYLOAD_CAP),
    'executor_max_steps': (int, 12),
    'optimizer_max_steps': (int, 20),
    'retries': (int, 3),
    'backoff': ((int, float), 1.0),
    'validation_mode': (str, 'inference'),
    'embedding_dim': (int, 64),
    'live': (dict, None),
}
LIVE_KEYS = ('endpoint', 'model', 'optimizer_model', 'timeout',
             'wikipedia_endpoint')
PATH_KEYS = ('train', 'val', 'test', 'fixtures', 'out')
BACKENDS = ('scripted', 'live')
WORLD_METRIC = 'world_reward'


class ConfigError(ValueError):
    """ Invalid run configuration, the message names the offending key """


def load_run_config(path, overrides=None):
    """ Read and standardize a JSON run configuration

    Relative paths in the file are resolved against its directory.
    """
    try:
        with open(path, encoding='utf-8') as f:
            config = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: {path} is not valid JSON ({e})") from None
    if not isinstance(config, dict):
        raise ConfigError(f"config: {path} must hold a JSON object")
    return standardize_run_config(config, os.path.dirname(os.path.abspath(path)),
                                  overrides)


def _check_type(key, value, types_):
    if value is None:
        return
    bad = (not isinstance(value, types_)
           or (isinstance(value, bool) and types_ is not bool))
    if bad:
        raise ConfigError(f"{key}: expected {getattr(types_, '__name__', 'a number')},"
                          f" got {value!r}")


def standardize_run_config(config, base_dir=None, overrides=None):
    """ Validate a run configuration and fill in the defaults

    Parameters
    ----------
    config: dict
        Keys of ``RUN_CONFIG_KEYS``
    base_dir: str
        Directory against which relative paths are resolved
    overrides: dict
        Values replacing those of `config` (None values are ignored)

    Returns
    -------
    run: SimpleNamespace
        One attribute per key, plus ``train_config``, the
        :class:`ctxforge.training.TrainConfig` of the run.
    """
    config = dict(config)
    config.update({k: v for k, v in (overrides or {}).items()
                   if v is not None})
    unknown = sorted(set(config) - set(RUN_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key. "
                          f"Choose between: {' '.join(RUN_CONFIG_KEYS)}")
    run = types.SimpleNamespace()
    for key, (types_, default) in RUN_CONFIG_KEYS.items():
        value = config.get(key, default)
        _check_type(key, value, types_)
        setattr(run, key, value)
    run.live = dict(run.live or {})
    for key in run.live:
        if key not in LIVE_KEYS:
            raise ConfigError(f"live.{key}: unknown key. "
                              f"Choose between: {' '.join(LIVE_KEYS)}")

    base_dir = base_dir or os.getcwd()
    for key in PATH_KEYS:
        value = getattr(run, key)
        if value is not None and not os.path.isabs(value):
            setattr(run, key, os.path.normpath(os.path.join(base_dir, value)))
    if run.scenario is not None and run.scenario not in SCENARIOS:
        if not os.path.isabs(run.scenario):
            run.scenario = os.path.normpath(os.path.join(base_dir,
                                                         run.scenario))

    if run.backend not in BACKENDS:
        raise ConfigError(f"backend: unsupported value {run.backend!r}. "
                          f"Choose between: {' '.join(BACKENDS)}")
    if run.backend == 'scripted':
        if run.fixtures is None and run.scenario in SCENARIOS:
            run.fixtures = os.path.join(FIXTURE_DIR, run.scenario)
        if run.fixtures is None and run.scenario is not None:
            run.fixtures = run.scenario
        if run.fixtures is None:
            raise ConfigError("fixtures: the scripted backend requires a "
                              "fixture directory")
    else:
        for key in ('endpoint', 'model'):
            if not run.live.get(key):
                raise ConfigError(f"live.{key}: required by the live backend")
        if not os.environ.get(API_KEY_ENV):
            raise ConfigError(f"backend: the live backend requires the "
                              f"environment variable {API_KEY_ENV}")

    if run.preview_strategy not in PREVIEW_STRATEGIES:
        raise ConfigError(f"preview_strategy: unsupported value "
                          f"{run.preview_strategy!r}. Choose between: "
                          f"{' '.join(PREVIEW_STRATEGIES)}")

    if run.metric == WORLD_METRIC:
        if run.scenario is None:
            raise ConfigError(f"metric: {WORLD_METRIC} needs a scenario")
    else:
        try:
            get_metric(run.metric)
        except (ValueError, NotImplementedError) as e:
            raise ConfigError(f"metric: {e}") from None

    try:
        run.train_config = TrainConfig(
            run.mode, run.beam_width, run.branching, run.steps_per_child,
            run.epochs, run.batch_size, run.max_global_steps, run.seed,
            run.information_seeking, run.n_samples, run.validation_mode)
    except ValueError as e:
        key = next((k for k in ('validation_mode', 'mode') if k in str(e)),
                   str(e).split()[0])
        raise ConfigError(f"{key}: {e}") from None
    return run


def _world_metric(world):
    def world_reward(output, reference=None):
        return world.metric(output, reference)
    return world_reward


def _dataset(run, key):
    path = getattr(run, key)
    if path is None:
        return None
    if not os.path.exists(path):
        raise FileNotFoundError(f"{key}: dataset not found: {path}")
    return load_dataset(path)


def get_run_components(run):
    """ Backends, adapters, datasets and metric of a standardized run

    Returns
    -------
    components: SimpleNamespace
        ``executor``, ``optimizer_backend``, ``search_backend``,
        ``provider``, ``wikipedia``, ``browser``, ``metric``, ``scenario``
        and the ``train``, ``val``, ``test`` datasets (None when not
        configured).
    """
    res = types.SimpleNamespace()
    res.scenario = load_scenario(run.scenario) if run.scenario else None
    res.metric = (_world_metric(res.scenario.world)
                  if run.metric == WORLD_METRIC else run.metric)
    res.provider = HashingEmbedder(run.embedding_dim)
    for key in ('train', 'val', 'test'):
        setattr(res, key, _dataset(run, key))

    if run.backend == 'scripted':
        if res.scenario is not None:
            executor_backend = res.scenario.executor_backend()
            res.optimizer_backend = res.scenario.optimizer_backend()
        else:
            executor_backend = ScriptedBackend(
                responses=load_fixture(run.fixtures, 'executor'))
            res.optimizer_backend = ScriptedBackend(
                responses=load_fixture(run.fixtures, 'optimizer'))
        search = load_fixture(run.fixtures, 'search')
        res.search_backend = ScriptedBackend(responses=search) if search else None
        res.wikipedia = FixtureWikipedia(load_fixture(run.fixtures,
                                                      'wikipedia'))
        res.browser = FixtureBrowser(load_fixture(run.fixtures, 'browser'))
    else:
        timeout = run.live.get('timeout', 120)
        executor_backend = LiveBackend(run.live['endpoint'],
                                       run.live['model'], timeout)
        res.optimizer_backend = LiveBackend(
            run.live['endpoint'],
            run.live.get('optimizer_model') or run.live['model'], timeout)
        res.search_backend = executor_backend
        res.wikipedia = LiveWikipedia(
            run.live.get('wikipedia_endpoint')
            or 'https://en.wikipedia.org/w/api.php', timeout)
        res.browser = LiveBrowser(timeout)

    res.executor = Executor(executor_backend, res.provider,
                            run.preview_strategy, run.preview_k,
                            run.preview_chars, run.executor_max_steps,
                            run.retries, run.backoff, res.search_backend,
                            run.payload_cap)
    return res
