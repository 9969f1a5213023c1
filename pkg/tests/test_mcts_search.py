import math
from collections import Counter, deque

import numpy as np
import pytest

from src.config import SearchConfig, SimulationConfig
from src.expr_core import (
    ALL_TOKENS, ROOT, VARIABLES, VARIABLES_WITHOUT_OCCUPANCY, PriorityFunction, Token,
    is_valid, operator_count, random_policy, remainder,
)
from src.mcts_search import (
    Archive, CandidateEvaluator, PolicySearch, PsrTable, SearchNode, enumerate_policies,
    exhaustive_search, search, shaped_reward,
)
from src.scenario_generator import generate_grid_scenario
from tests.helpers import two_approach_scenario


def token_sum_reward(pf):
    """Synthetic raw reward: lists made of early-enumerated tokens score higher."""
    return 1.0 / (1 + sum(ALL_TOKENS.index(t) for t in pf))


def brute_force_tally(policies):
    tally = Counter()
    for pf in policies:
        parents = deque()
        for i, token in enumerate(pf):
            tally[(parents.popleft() if i else ROOT, token)] += 1
            parents.extend([token] * token.arity)
    return tally


# --- PSR table -------------------------------------------------------------

def test_empty_table_is_uniform():
    table = PsrTable(alpha=1.0)
    probs = table.distribution(ROOT, ALL_TOKENS)
    assert np.allclose(probs, 1 / 14)


def test_smoothed_probability_by_hand():
    table = PsrTable(alpha=1.0)
    table.add(Token.MUL, Token.DI, 10)
    probs = table.distribution(Token.MUL, ALL_TOKENS)
    assert probs[ALL_TOKENS.index(Token.DI)] == pytest.approx(11 / 24)
    assert probs[ALL_TOKENS.index(Token.WI)] == pytest.approx(1 / 24)


def test_rebuilt_counts_equal_brute_force_tally():
    rng = np.random.default_rng(2)
    table = PsrTable(alpha=1.0)
    for _ in range(1_000):
        archive = [random_policy(rng, 6) for _ in range(int(rng.integers(0, 11)))]
        table.rebuild(archive)
        tally = brute_force_tally(archive)
        for parent in PsrTable.PARENTS:
            for child in ALL_TOKENS:
                assert table.count(parent, child) == tally[(parent, child)]
        for parent in PsrTable.PARENTS:
            legal = ALL_TOKENS if rng.random() < 0.5 else VARIABLES
            probs = table.distribution(parent, legal)
            assert abs(probs.sum() - 1.0) < 1e-12
            assert np.all(probs > 0)


def test_alpha_must_be_positive():
    with pytest.raises(ValueError):
        PsrTable(alpha=0)


# --- Archive and reward shaping ---------------------------------------------

def test_archive_keeps_k_best_distinct_policies():
    archive = Archive(k=3)
    a, b, c, d = (PriorityFunction([t]) for t in (Token.WI, Token.WO, Token.CI, Token.CO))
    assert archive.offer(a, 0.2)
    assert archive.offer(b, 0.5)
    assert not archive.offer(a, 0.2)
    assert archive.offer(c, 0.5)
    assert archive.offer(d, 0.9)
    assert [pf for pf, _ in archive.entries] == [d, b, c]
    assert not archive.offer(a, 0.1)
    assert not archive.offer(a, None)
    rewards = [r for _, r in archive.entries]
    assert rewards == sorted(rewards, reverse=True)


def test_shaped_reward_normalises_by_best_seen():
    archive = Archive(k=10)
    assert shaped_reward(0.04, archive) == 1.0
    assert shaped_reward(0.02, archive) == 0.5
    assert shaped_reward(0.08, archive) == 1.0
    assert archive.best_raw_reward == 0.08
    assert shaped_reward(0.04, archive, enabled=False) == 0.04


def test_degenerate_reward_scores_as_current_best():
    archive = Archive(k=10)
    assert shaped_reward(None, archive) == 1.0
    assert archive.best_raw_reward is None
    shaped_reward(0.05, archive)
    assert shaped_reward(0.0, archive, enabled=False) == 0.05


# --- Tree operations ---------------------------------------------------------

def make_search(**overrides):
    config = SearchConfig(**{'iterations': 50, 'seed': 0, **overrides})
    return PolicySearch(config, token_sum_reward)


def test_fresh_tree_selects_the_root():
    searcher = make_search()
    assert searcher.select() == [searcher.root]
    assert len(searcher.root.legal) == 14


def test_unvisited_child_has_infinite_uct():
    searcher = make_search()
    child = searcher.expand(searcher.root)
    assert searcher.uct(searcher.root, child) == math.inf


def test_uct_prefers_the_less_visited_of_equal_children():
    searcher = make_search(epsilon=0.0)
    root = searcher.root
    for action in root.legal:
        child = searcher._node(PriorityFunction([action]))
        child.visits, child.q = 5, 0.5
        root.children[action] = child
    root.children[Token.LI].visits = 2
    root.visits = sum(c.visits for c in root.children.values())
    path = searcher.select()
    assert path[1] is root.children[Token.LI]


def test_expansion_at_the_cap_only_adds_variables():
    searcher = make_search(max_operators=6)
    node = searcher._node(PriorityFunction([Token.NEG] * 6))
    assert node.legal == VARIABLES
    for _ in range(len(VARIABLES)):
        child = searcher.expand(node)
        assert child.state[-1] in VARIABLES
    assert not node.expandable


def test_rollout_completes_within_the_token_bound():
    for psr in (True, False):
        searcher = make_search(max_operators=3, psr_rollout=psr)
        rng = np.random.default_rng(4)
        for _ in range(500):
            state = random_policy(rng, 3)[:int(rng.integers(0, 4))]
            if remainder(state) == 0:
                continue
            pf = searcher.rollout(state)
            assert is_valid(pf)
            assert pf[:len(state)] == state
            assert len(pf) <= len(state) + 2 * 3 + 1
            if operator_count(state) >= 3:
                assert all(t.is_variable for t in pf[len(state):])


def test_backpropagation_keeps_the_maximum():
    path = [SearchNode(PriorityFunction(), ()), SearchNode(PriorityFunction([Token.WI]), ())]
    PolicySearch.backpropagate(path, 0.4)
    PolicySearch.backpropagate(path, 0.9)
    PolicySearch.backpropagate(path, 0.1)
    assert path[1].q == 0.9
    assert [n.visits for n in path] == [3, 3]


def test_node_values_never_decrease_during_a_run():
    searcher = make_search(iterations=1, seed=6)
    seen = {}
    for _ in range(400):
        searcher.step()
        stack = [searcher.root]
        while stack:
            node = stack.pop()
            assert node.q >= seen.get(id(node), 0.0)
            seen[id(node)] = node.q
            stack.extend(node.children.values())


def test_exhausted_subtrees_are_not_revisited():
    # One operator: 14 first tokens, 8 under neg, 5 x 8 under the binary
    # operators and 5 x 64 complete binary lists.
    searcher = make_search(max_operators=1, iterations=2_000)
    searcher.run(progress=False)
    assert searcher.root.exhausted
    assert len(searcher.log) == 14 + 8 + 5 * 8 + 5 * 64
    evaluated = {record['candidate'] for record in searcher.log}
    assert {str(pf) for pf in enumerate_policies(1)} <= evaluated


def test_selection_skips_an_exhausted_child():
    searcher = make_search(epsilon=0.0)
    root = searcher.root
    for action in root.legal:
        root.children[action] = searcher._node(PriorityFunction([action]))
        root.children[action].visits = 1
    root.visits = len(root.legal)
    for action in root.legal:
        if action is not Token.MUL:
            root.children[action].exhausted = True
    assert searcher.select()[1] is root.children[Token.MUL]


def test_reduced_feature_set_never_emits_occupancy():
    searcher = make_search(lane_occupancy_features=False, iterations=200)
    searcher.run(progress=False)
    for record in searcher.log:
        assert 'LI' not in record['candidate'].split()
        assert 'LO' not in record['candidate'].split()


# --- Whole search ------------------------------------------------------------

def test_search_log_and_invariants():
    searcher = make_search(iterations=300, k=5)
    searcher.run(progress=False)
    assert len(searcher.log) == 300
    assert searcher.log[0]['shaped_reward'] == 1.0
    assert all(0 < r['shaped_reward'] <= 1 for r in searcher.log)
    assert all(r['archive_size'] <= 5 for r in searcher.log)
    rewards = [r for _, r in searcher.archive.entries]
    assert rewards == sorted(rewards, reverse=True)

    tally = brute_force_tally(searcher.archive.policies())
    for parent in PsrTable.PARENTS:
        for child in ALL_TOKENS:
            assert searcher.psr.count(parent, child) == tally[(parent, child)]


def test_search_is_deterministic_per_seed():
    first = make_search(iterations=200, seed=3)
    second = make_search(iterations=200, seed=3)
    first.run(progress=False)
    second.run(progress=False)
    assert first.log == second.log
    other = make_search(iterations=200, seed=4)
    other.run(progress=False)
    assert other.log != first.log


def test_enumeration_size_with_one_operator():
    policies = list(enumerate_policies(1))
    assert len(policies) == 8 + 8 + 5 * 64 == 336
    assert len(set(policies)) == 336
    assert all(is_valid(pf) for pf in policies)
    assert len(list(enumerate_policies(1, VARIABLES_WITHOUT_OCCUPANCY))) == 6 + 6 + 5 * 36


def test_search_matches_exhaustive_best_on_small_space():
    best, best_raw, results = exhaustive_search(token_sum_reward, max_operators=1)
    assert len(results) == 336
    searcher = make_search(max_operators=1, iterations=336 * 2)
    found, found_raw = searcher.run(progress=False)
    assert found_raw == best_raw
    assert found == best


def test_candidate_evaluator_caches_and_scores_episodes():
    scenario = two_approach_scenario(episode_length=200)
    evaluator = CandidateEvaluator(scenario, SearchConfig(), SimulationConfig())
    pf = PriorityFunction([Token.WI])
    raw = evaluator(pf)
    assert raw == pytest.approx(1.0 / evaluator.travel_time(pf))
    assert len(evaluator.cache) == 1

    replicated = CandidateEvaluator(scenario, SearchConfig(eval_replicas=3), SimulationConfig())
    assert len(replicated.flow_sets) == 3
    assert replicated.flow_sets[0] == scenario.flows


def test_search_on_a_scenario_writes_its_log(tmp_path):
    scenario = two_approach_scenario(episode_length=200)
    log_path = tmp_path / 'search.log.jsonl'
    result = search(scenario, SearchConfig(iterations=30, seed=1), log_path=str(log_path), progress=False)
    assert result.best is not None and is_valid(result.best)
    assert result.best_avg_travel_time > 0
    assert len(log_path.read_text().splitlines()) == 30


@pytest.mark.slow
def test_search_agrees_with_enumeration_on_a_single_intersection():
    scenario = generate_grid_scenario(1, 1, demand='medium', seed=0, episode_length=600)
    sim_config = SimulationConfig()
    space = len(list(enumerate_policies(1)))
    oracle = CandidateEvaluator(scenario, SearchConfig(), sim_config)
    _, oracle_raw, _ = exhaustive_search(oracle, max_operators=1)

    found = []
    for seed in range(5):
        result = search(scenario, SearchConfig(max_operators=1, iterations=20 * space, seed=seed),
                        sim_config, progress=False)
        found.append(result.best_avg_travel_time)
    assert np.mean(found) == pytest.approx(1.0 / oracle_raw, rel=1e-3)
