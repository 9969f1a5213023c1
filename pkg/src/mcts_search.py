"""
mcts_search.py

Monte Carlo tree search over priority-function token lists.

Each iteration walks the tree with epsilon-greedy UCT, expands one unvisited
legal token, completes the list with a rollout, scores the candidate with a
simulated episode and backs the (shaped) reward up as a running maximum.
Rollouts sample tokens from parent-child frequencies of the best k policies
seen so far (the PSR table), smoothed by alpha.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from src.config import SearchConfig, SimulationConfig
from src.expr_core import (
    ALL_TOKENS, OPERATORS, ROOT, VARIABLES, VARIABLES_WITHOUT_OCCUPANCY, PriorityFunction,
    legal_actions, parent_child_pairs, parent_slot, remainder, render,
)
from src.policy import PriorityController
from src.simulator import jitter_flows, run_episode
from src.utils.hashing import derive_seed

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class SearchNode:
    """A tree node; `q` and `visits` describe the edge from its parent."""
    state: PriorityFunction
    legal: tuple
    children: dict = field(default_factory=dict)
    visits: int = 0
    q: float = 0.0
    exhausted: bool = False  # every terminal list below this node has been evaluated

    @property
    def terminal(self):
        return not self.legal

    def unexplored(self):
        return [a for a in self.legal if a not in self.children]

    @property
    def expandable(self):
        return not self.terminal and len(self.children) < len(self.legal)


class PsrTable:
    """
    Parent-child token counts harvested from the archive.

    Rows are the root pseudo-parent followed by the operators; columns are all
    tokens in canonical order.
    """
    PARENTS = (ROOT,) + OPERATORS

    def __init__(self, alpha=1.0):
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.alpha = float(alpha)
        self.counts = np.zeros((len(self.PARENTS), len(ALL_TOKENS)), dtype=np.int64)
        self._row = {p: i for i, p in enumerate(self.PARENTS)}
        self._col = {t: i for i, t in enumerate(ALL_TOKENS)}

    def count(self, parent, child):
        return int(self.counts[self._row[parent], self._col[child]])

    def add(self, parent, child, n=1):
        self.counts[self._row[parent], self._col[child]] += n

    def rebuild(self, policies):
        """Recomputes every count from scratch out of the given policies."""
        self.counts[:] = 0
        for pf in policies:
            for parent, child in parent_child_pairs(pf):
                self.add(parent, child)

    def distribution(self, parent, legal):
        """P(token | parent) over `legal`: (c + alpha) / (sum c + alpha * |legal|)."""
        row = self.counts[self._row[parent]]
        c = np.array([row[self._col[t]] for t in legal], dtype=np.float64)
        return (c + self.alpha) / (c.sum() + self.alpha * len(legal))

    def sample(self, parent, legal, rng):
        probs = self.distribution(parent, legal)
        return legal[int(rng.choice(len(legal), p=probs))]


class Archive:
    """The k best distinct policies by raw reward, best first."""

    def __init__(self, k=10):
        if k <= 0:
            raise ValueError(f"archive size must be positive, got {k}")
        self.k = k
        self.entries = []
        self.best_raw_reward = None

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pf):
        return any(existing == pf for existing, _ in self.entries)

    def offer(self, pf, raw_reward):
        """Inserts the policy if it qualifies; True when membership changed."""
        if raw_reward is None or pf in self:
            return False
        if len(self.entries) == self.k and raw_reward <= self.entries[-1][1]:
            return False
        position = len(self.entries)
        while position > 0 and self.entries[position - 1][1] < raw_reward:
            position -= 1
        self.entries.insert(position, (pf, raw_reward))
        del self.entries[self.k:]
        return True

    def policies(self):
        return [pf for pf, _ in self.entries]

    @property
    def best(self):
        return self.entries[0] if self.entries else (None, None)


def shaped_reward(raw, archive, enabled=True):
    """
    Normalises a raw reward by the best raw reward seen so far, raising the
    bar when raw beats it. With shaping disabled the raw value is returned.
    Degenerate episodes (no positive raw reward) score as the current best.
    """
    if raw is None or raw <= 0:
        logger.warning("Degenerate episode without positive reward; scoring it as the current best.")
        if enabled or archive.best_raw_reward is None:
            return 1.0
        return archive.best_raw_reward
    best = raw if archive.best_raw_reward is None else max(archive.best_raw_reward, raw)
    archive.best_raw_reward = best
    return raw / best if enabled else raw


# --- Candidate evaluation --------------------------------------------------

_WORKER = {}


def _init_worker(network, flow_sets, episode_length, sim_config):
    _WORKER.update(network=network, flow_sets=flow_sets,
                   episode_length=episode_length, sim_config=sim_config)


def _episode_travel_time(network, flows, policy, episode_length, sim_config):
    metrics = run_episode(network, flows, PriorityController(policy), episode_length,
                          config=sim_config)
    return metrics.avg_travel_time


def _worker_episode(policy_text, replica):
    return _episode_travel_time(_WORKER['network'], _WORKER['flow_sets'][replica], policy_text,
                                _WORKER['episode_length'], _WORKER['sim_config'])


class CandidateEvaluator:
    """
    Scores terminal candidates by simulated average travel time.

    With eval_replicas > 1 the score averages replicas 0..n-1, where replica
    0 is the base flow and the others are jittered copies seeded from
    (seed, replica). Results are cached per token list.
    """

    def __init__(self, scenario, config: SearchConfig, sim_config: SimulationConfig = None,
                 jobs=1, episode_length=None):
        self.scenario = scenario
        self.sim_config = sim_config or SimulationConfig()
        self.episode_length = episode_length or scenario.episode_length_s
        n_replicas = max(1, config.eval_replicas)
        self.flow_sets = [scenario.flows] + [
            jitter_flows(scenario.flows, config.noise_bound_s, derive_seed(config.seed, 'replica', r))
            for r in range(1, n_replicas)
        ]
        self.cache = {}
        self.jobs = max(1, int(jobs))
        self._pool = None
        if self.jobs > 1 and len(self.flow_sets) > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=min(self.jobs, len(self.flow_sets)), initializer=_init_worker,
                initargs=(scenario.network, self.flow_sets, self.episode_length, self.sim_config))

    def travel_time(self, pf):
        key = pf.tokens
        if key not in self.cache:
            if self._pool is not None:
                text = render(pf)
                times = list(self._pool.map(_worker_episode, [text] * len(self.flow_sets),
                                            range(len(self.flow_sets))))
            else:
                times = [_episode_travel_time(self.scenario.network, flows, pf, self.episode_length,
                                              self.sim_config)
                         for flows in self.flow_sets]
            self.cache[key] = float(np.mean(times))
        return self.cache[key]

    def __call__(self, pf):
        """Raw reward: reciprocal average travel time, None for an empty episode."""
        att = self.travel_time(pf)
        return 1.0 / att if att > 0 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


# --- Tree search -----------------------------------------------------------

class PolicySearch:
    """
    Single-writer search tree. `evaluate` maps a terminal PriorityFunction
    to its raw reward (or None for a degenerate episode).
    """

    def __init__(self, config: SearchConfig, evaluate: Callable[[PriorityFunction], Optional[float]]):
        self.config = config
        self.evaluate = evaluate
        self.variables = VARIABLES if config.lane_occupancy_features else VARIABLES_WITHOUT_OCCUPANCY
        self.rng = np.random.default_rng(config.seed)
        self.psr = PsrTable(config.alpha)
        self.archive = Archive(config.k)
        self.root = self._node(PriorityFunction())
        self.iteration = 0
        self.log = []

    def _legal(self, state):
        if remainder(state) == 0:
            return ()
        return legal_actions(state, self.config.max_operators, self.variables)

    def _node(self, state):
        return SearchNode(state=state, legal=self._legal(state))

    def uct(self, parent, child):
        if child.visits == 0:
            return math.inf
        return child.q + self.config.c_uct * math.sqrt(math.log(parent.visits) / child.visits)

    def select(self):
        """
        Path from the root to the first expandable or terminal node. Exhausted
        subtrees are never entered.
        """
        node = self.root
        path = [node]
        while not node.terminal and not node.expandable:
            children = [node.children[a] for a in node.legal if not node.children[a].exhausted]
            if self.config.epsilon > 0 and self.rng.random() < self.config.epsilon:
                node = children[int(self.rng.integers(len(children)))]
            else:
                scores = [self.uct(node, child) for child in children]
                node = children[scores.index(max(scores))]
            path.append(node)
        return path

    def expand(self, node):
        options = node.unexplored()
        action = options[int(self.rng.integers(len(options)))]
        child = self._node(node.state + (action,))
        node.children[action] = child
        return child

    def rollout(self, state):
        """Completes `state` to a terminal list, PSR-guided or uniform."""
        tokens = list(state)
        while remainder(tokens) > 0:
            legal = legal_actions(tokens, self.config.max_operators, self.variables)
            if self.config.psr_rollout:
                tokens.append(self.psr.sample(parent_slot(tokens), legal, self.rng))
            else:
                tokens.append(legal[int(self.rng.integers(len(legal)))])
        return PriorityFunction(tokens)

    @staticmethod
    def backpropagate(path, reward):
        for node in path:
            node.visits += 1
        for node in path[1:]:
            node.q = max(node.q, reward)

    @staticmethod
    def mark_exhausted(path):
        for node in reversed(path):
            node.exhausted = node.terminal or (
                not node.expandable and all(c.exhausted for c in node.children.values()))
            if not node.exhausted:
                break

    def step(self):
        """Runs one select/expand/rollout/evaluate/backpropagate cycle."""
        path = self.select()
        leaf = path[-1]
        if leaf.expandable:
            leaf = self.expand(leaf)
            path.append(leaf)
        candidate = self.rollout(leaf.state)

        raw = self.evaluate(candidate)
        reward = shaped_reward(raw, self.archive, enabled=self.config.reward_shaping)
        if self.archive.offer(candidate, raw) and self.config.psr_rollout:
            self.psr.rebuild(self.archive.policies())
        self.backpropagate(path, reward)
        self.mark_exhausted(path)

        self.iteration += 1
        best, best_raw = self.archive.best
        record = {
            'iter': self.iteration,
            'candidate': render(candidate),
            'raw_reward': raw,
            'shaped_reward': reward,
            'best_so_far': best_raw,
            'best_policy': render(best) if best is not None else None,
            'archive_size': len(self.archive),
        }
        self.log.append(record)
        return record

    def run(self, iterations=None, progress=True):
        iterations = iterations or self.config.iterations
        interval = self.config.log_interval
        for _ in tqdm(range(iterations), desc="Searching", mininterval=0.5, disable=not progress):
            if self.root.exhausted:
                logger.info("Search space exhausted after %d iterations.", self.iteration)
                break
            record = self.step()
            if interval and record['iter'] % interval == 0:
                best_raw = record['best_so_far']
                att = f"{1.0 / best_raw:.2f} s/veh" if best_raw else "n/a"
                logger.info("Iter %d: best %s (%s), archive %d", record['iter'], att,
                            record['best_policy'], record['archive_size'])
        return self.archive.best


@dataclass
class SearchResult:
    best: PriorityFunction
    best_raw_reward: Optional[float]
    archive: Archive
    log: list
    evaluations: int = 0

    @property
    def best_avg_travel_time(self):
        return 1.0 / self.best_raw_reward if self.best_raw_reward else None


def write_search_log(log, path):
    with open(path, 'w', encoding='utf-8') as f:
        for record in log:
            f.write(json.dumps(record, sort_keys=True) + '\n')


def search(scenario, config: SearchConfig, sim_config: SimulationConfig = None, jobs=1,
           log_path=None, progress=True):
    """
    Searches for the priority function with the lowest average travel time on
    `scenario`. Deterministic for a given config.seed.
    """
    evaluator = CandidateEvaluator(scenario, config, sim_config, jobs=jobs)
    try:
        searcher = PolicySearch(config, evaluator)
        best, best_raw = searcher.run(progress=progress)
    finally:
        evaluator.close()
    if log_path is not None:
        write_search_log(searcher.log, log_path)
    if best is None:
        logger.warning("Search on %s found no policy with a positive reward.", scenario.name)
    return SearchResult(best=best, best_raw_reward=best_raw, archive=searcher.archive,
                        log=searcher.log, evaluations=len(evaluator.cache))


# --- Exhaustive oracle -----------------------------------------------------

def enumerate_policies(max_operators, variables=VARIABLES):
    """Yields every valid list with at most `max_operators` operators."""
    def extend(tokens):
        if remainder(tokens) == 0:
            yield PriorityFunction(tokens)
            return
        for action in legal_actions(tokens, max_operators, variables):
            yield from extend(tokens + [action])

    yield from extend([])


def exhaustive_search(evaluate, max_operators, variables=VARIABLES, progress=False):
    """
    Evaluates every policy of the bounded space.

    Returns (best policy, best raw reward, [(policy, raw reward), ...]);
    ties keep the first policy in enumeration order.
    """
    results = []
    best, best_raw = None, None
    for pf in tqdm(list(enumerate_policies(max_operators, variables)), desc="Enumerating",
                   disable=not progress):
        raw = evaluate(pf)
        results.append((pf, raw))
        if raw is not None and (best_raw is None or raw > best_raw):
            best, best_raw = pf, raw
    return best, best_raw, results
