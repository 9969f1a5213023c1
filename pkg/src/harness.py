"""
harness.py

Experiment orchestration: multi-seed baseline comparisons, search-and-evaluate
runs, zero-shot transfer, ablation and parameter-sensitivity sweeps, the
edge-device deployability report, and persistence of everything a run
produces (results.csv, summary.json, search.log.jsonl, best_policy.txt,
run_config.yaml).
"""
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import yaml
from tqdm import tqdm

from src.config import CONFIG, SearchConfig, SimulationConfig
from src.expr_core import cost, parse, render
from src.mcts_search import search, write_search_log
from src.policy import BASELINE_NAMES, build_controller
from src.simulator import jitter_flows, run_episode
from src.traffic_network import ScenarioError, load_scenario
from src.utils.hashing import derive_seed, file_digest

logger = logging.getLogger(__name__)

SEARCH_CONTROLLER = 'symbolic'
POLICY_PREFIX = 'policy:'

ABLATION_MODES = {
    'FM': {},
    'M1': {'reward_shaping': False},
    'M2': {'lane_occupancy_features': False},
    'M3': {'psr_rollout': False},
    'M4': {'reward_shaping': False, 'lane_occupancy_features': False, 'psr_rollout': False},
}

SENSITIVITY_GRID = {
    'alpha': (0.5, 0.8, 1.0, 1.2, 1.5),
    'k': (5, 8, 10, 12, 15),
    'decision_interval_s': (10, 15, 20),
}


@dataclass
class ExperimentSpec:
    train_scenario: str
    transfer_scenarios: list = field(default_factory=list)
    controllers: list = field(default_factory=lambda: [SEARCH_CONTROLLER, *BASELINE_NAMES])
    seeds: list = field(default_factory=lambda: list(CONFIG['experiment']['seeds']))
    replicas: int = CONFIG['experiment']['replicas']
    noise_bound_s: int = CONFIG['experiment']['noise_bound_s']
    output_dir: str = CONFIG['experiment']['output_dir']
    search: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas <= 0:
            raise ValueError(f"replicas must be positive, got {self.replicas}")
        if not self.seeds:
            raise ValueError("an experiment needs at least one seed")
        for name in self.controllers:
            if name != SEARCH_CONTROLLER and name not in BASELINE_NAMES and not name.startswith(POLICY_PREFIX):
                raise ValueError(f"unknown controller {name!r}")

    @classmethod
    def from_dict(cls, data, base_dir='.'):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            logger.warning("Ignoring unknown experiment keys: %s", ", ".join(sorted(unknown)))
        values = {k: v for k, v in data.items() if k in known}
        if 'train_scenario' not in values:
            raise ValueError("experiment spec needs a 'train_scenario'")

        def resolve(path):
            return path if os.path.isabs(path) else os.path.join(base_dir, path)

        values['train_scenario'] = resolve(values['train_scenario'])
        values['transfer_scenarios'] = [resolve(p) for p in values.get('transfer_scenarios', [])]
        return cls(**values)

    @classmethod
    def load(cls, path):
        """Reads a YAML or JSON experiment spec; relative paths resolve against its folder."""
        with open(path, 'r', encoding='utf-8') as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ValueError(f"Error parsing {path}: {e}") from e
        if not isinstance(data, dict):
            raise ValueError(f"{path} must contain a mapping")
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))

    def search_config(self, config=CONFIG, **overrides):
        return SearchConfig.from_config(config, **{**self.search, **overrides})

    def sim_config(self, config=CONFIG, **overrides):
        return SimulationConfig.from_config(config, **{**self.simulation, **overrides})

    def validate(self):
        """Parses every referenced scenario; raises ScenarioError on the first bad one."""
        return [load_scenario(p) for p in [self.train_scenario, *self.transfer_scenarios]]


@dataclass
class ResultRow:
    scenario: str
    controller: str
    mode: str
    seed: int
    replica: int
    avg_travel_time: float
    throughput: float
    completed: int
    entered: int
    policy: str = ''
    flops: Optional[int] = None
    bytes: Optional[int] = None


RESULT_FIELDS = [f.name for f in fields(ResultRow)]


@dataclass
class EvalCell:
    """One (scenario, controller, seed, replica) episode."""
    scenario: object
    controller: str
    seed: int
    replica: int
    noise_bound_s: int
    sim_config: SimulationConfig
    label: str = ''
    mode: str = ''


def replica_flows(scenario, replica, noise_bound, seed):
    """Replica 0 is the recorded flow; replica r > 0 jitters it with seed (seed, r)."""
    if replica == 0:
        return list(scenario.flows)
    return jitter_flows(scenario.flows, noise_bound, derive_seed(seed, 'replica', replica))


def run_cell(cell: EvalCell) -> ResultRow:
    scenario = cell.scenario
    flows = replica_flows(scenario, cell.replica, cell.noise_bound_s, cell.seed)
    controller = build_controller(cell.controller, seed=derive_seed(cell.seed, 'controller', cell.replica),
                                  decision_interval=cell.sim_config.decision_interval_s)
    metrics = run_episode(scenario.network, flows, controller, scenario.episode_length_s,
                          config=cell.sim_config)
    row = ResultRow(
        scenario=cell.label or scenario.name, controller=cell.controller, mode=cell.mode,
        seed=cell.seed, replica=cell.replica, avg_travel_time=metrics.avg_travel_time,
        throughput=metrics.throughput, completed=metrics.completed, entered=metrics.entered,
    )
    if cell.controller.startswith(POLICY_PREFIX):
        pf = parse(cell.controller[len(POLICY_PREFIX):])
        policy_cost = cost(pf)
        row.controller = 'policy'
        row.policy, row.flops, row.bytes = render(pf), policy_cost.flops, policy_cost.bytes
    return row


def run_cells(cells, jobs=1, desc="Evaluating"):
    """Runs every cell; rows come back in submission order whatever `jobs` is."""
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(tqdm(pool.map(run_cell, cells), total=len(cells), desc=desc, mininterval=0.5))
    return [run_cell(cell) for cell in tqdm(cells, desc=desc, mininterval=0.5)]


def _policy_cells(scenario, policy, seed, replicas, noise_bound, sim_config, label='', mode=''):
    return [EvalCell(scenario, POLICY_PREFIX + render(policy), seed, r, noise_bound, sim_config,
                     label=label, mode=mode)
            for r in range(replicas)]


@dataclass
class ExperimentResult:
    rows: list
    best_policies: dict = field(default_factory=dict)  # label -> PriorityFunction
    search_logs: dict = field(default_factory=dict)    # label -> list of records


def train(scenario, search_config, sim_config, jobs=1, label=None):
    result = search(scenario, search_config, sim_config, jobs=jobs)
    if result.best is None:
        raise ScenarioError(f"search on {scenario.name} produced no usable policy")
    logger.info("%s: best %s at %.2f s/veh after %d unique evaluations.",
                label or f"seed {search_config.seed}", render(result.best),
                result.best_avg_travel_time, result.evaluations)
    return result


def run_experiment(spec: ExperimentSpec, config=CONFIG, jobs=1):
    """
    controllers x seeds x replicas episodes on the training scenario. The
    search controller trains once per seed, then its best policy is evaluated
    on every replica like any other controller.
    """
    scenario = load_scenario(spec.train_scenario)
    sim_config = spec.sim_config(config)
    outcome = ExperimentResult(rows=[])
    cells = []
    for name in spec.controllers:
        for seed in spec.seeds:
            if name == SEARCH_CONTROLLER:
                result = train(scenario, spec.search_config(config, seed=seed), sim_config, jobs=jobs)
                outcome.best_policies[f"seed{seed}"] = result.best
                outcome.search_logs[f"seed{seed}"] = result.log
                cells += _policy_cells(scenario, result.best, seed, spec.replicas, spec.noise_bound_s,
                                       sim_config, mode=SEARCH_CONTROLLER)
            else:
                cells += [EvalCell(scenario, name, seed, r, spec.noise_bound_s, sim_config)
                          for r in range(spec.replicas)]
    outcome.rows = run_cells(cells, jobs)
    return outcome


def transfer_eval(policy, targets, seeds, replicas=1, noise_bound=0, sim_config=None,
                  source='source', jobs=1, mode='transfer'):
    """Evaluates a frozen policy on other scenarios; rows are labelled 'source->target'."""
    policy = parse(policy) if isinstance(policy, str) else policy
    sim_config = sim_config or SimulationConfig()
    cells = []
    for target in targets:
        scenario = load_scenario(target) if isinstance(target, (str, os.PathLike)) else target
        for seed in seeds:
            cells += _policy_cells(scenario, policy, seed, replicas, noise_bound, sim_config,
                                   label=f"{source}->{scenario.name}", mode=mode)
    return run_cells(cells, jobs, desc="Transfer")


def _train_and_evaluate(spec, scenario, config, sim_config, mode, jobs, overrides):
    outcome = ExperimentResult(rows=[])
    cells = []
    for seed in spec.seeds:
        search_config = spec.search_config(config, seed=seed, **overrides)
        label = f"{mode} seed{seed}"
        result = train(scenario, search_config, sim_config, jobs=jobs, label=label)
        outcome.best_policies[label] = result.best
        outcome.search_logs[label] = result.log
        cells += _policy_cells(scenario, result.best, seed, spec.replicas, spec.noise_bound_s,
                               sim_config, mode=mode)
    outcome.rows = run_cells(cells, jobs)
    return outcome


def _merge(results):
    merged = ExperimentResult(rows=[])
    for result in results:
        merged.rows += result.rows
        merged.best_policies.update(result.best_policies)
        merged.search_logs.update(result.search_logs)
    return merged


def ablation_suite(spec: ExperimentSpec, modes=tuple(ABLATION_MODES), config=CONFIG, jobs=1):
    """Searches with each ablation mode's switches on the same seeds; the mode is the row's `mode`."""
    scenario = load_scenario(spec.train_scenario)
    sim_config = spec.sim_config(config)
    results = []
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode {mode!r}; expected one of {list(ABLATION_MODES)}")
        logger.info("Ablation %s: %s", mode, ABLATION_MODES[mode] or "all components enabled")
        results.append(_train_and_evaluate(spec, scenario, config, sim_config, mode, jobs,
                                           ABLATION_MODES[mode]))
    return _merge(results)


def sensitivity_sweep(spec: ExperimentSpec, grid=None, config=CONFIG, jobs=1):
    """
    One parameter at a time, everything else at its configured value. The
    decision interval applies to both training and evaluation episodes.
    """
    scenario = load_scenario(spec.train_scenario)
    results = []
    for parameter, values in (grid or SENSITIVITY_GRID).items():
        for value in values:
            mode = f"{parameter}={value}"
            if parameter == 'decision_interval_s':
                sim_config = spec.sim_config(config, decision_interval_s=value)
                overrides = {}
            else:
                sim_config = spec.sim_config(config)
                overrides = {parameter: value}
            results.append(_train_and_evaluate(spec, scenario, config, sim_config, mode, jobs, overrides))
    return _merge(results)


def deployability(policy_cost, movements, settings=None):
    """
    Whether a policy fits each reference device: its bytes must fit in RAM
    and scoring `movements` movements must finish within the response
    threshold at the device clock.
    """
    settings = settings or CONFIG['deployability']
    cycles = settings['cycles_per_operation']
    threshold = settings['response_threshold_s']
    report = []
    for device, spec in settings['devices'].items():
        latency = policy_cost.flops * movements * cycles / spec['clock_hz']
        fits_ram = policy_cost.bytes <= spec['ram_bytes']
        report.append({
            'device': device,
            'ram_bytes': spec['ram_bytes'],
            'policy_bytes': policy_cost.bytes,
            'fits_ram': fits_ram,
            'latency_s': latency,
            'meets_latency': latency <= threshold,
            'deployable': fits_ram and latency <= threshold,
        })
    return report


def summarize(rows):
    """Mean and (population) standard deviation per scenario, controller and mode."""
    groups = {}
    for row in rows:
        groups.setdefault((row.scenario, row.controller, row.mode, row.policy if row.mode == '' else ''),
                          []).append(row)
    summary = []
    for (scenario, controller, mode, policy), members in groups.items():
        att = np.array([r.avg_travel_time for r in members])
        thr = np.array([r.throughput for r in members])
        summary.append({
            'scenario': scenario, 'controller': controller, 'mode': mode, 'policy': policy,
            'n': len(members),
            'avg_travel_time_mean': float(att.mean()), 'avg_travel_time_std': float(att.std()),
            'throughput_mean': float(thr.mean()), 'throughput_std': float(thr.std()),
        })
    return summary


def verify_rows(rows, scenarios, noise_bound, sim_config=None):
    """
    Re-parses every policy row, replays its episode and returns the rows
    whose metrics differ. `scenarios` maps scenario names to Scenario objects;
    transfer labels resolve to their target.
    """
    sim_config = sim_config or SimulationConfig()
    mismatches = []
    for row in rows:
        if not row.policy:
            continue
        target = row.scenario.split('->')[-1]
        replay = run_cell(EvalCell(scenarios[target], POLICY_PREFIX + row.policy, row.seed, row.replica,
                                   noise_bound, sim_config, label=row.scenario, mode=row.mode))
        if (replay.avg_travel_time, replay.throughput) != (row.avg_travel_time, row.throughput):
            mismatches.append(row)
    return mismatches


# --- Persistence -----------------------------------------------------------

def write_results(rows, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_FIELDS, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ('' if v is None else v) for k, v in asdict(row).items()})


def read_results(path):
    rows = []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        for item in csv.DictReader(f):
            rows.append(ResultRow(
                scenario=item['scenario'], controller=item['controller'], mode=item['mode'],
                seed=int(item['seed']), replica=int(item['replica']),
                avg_travel_time=float(item['avg_travel_time']), throughput=float(item['throughput']),
                completed=int(item['completed']), entered=int(item['entered']), policy=item['policy'],
                flops=int(item['flops']) if item['flops'] else None,
                bytes=int(item['bytes']) if item['bytes'] else None,
            ))
    return rows


def write_summary(rows, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'groups': summarize(rows)}, f, indent=2, sort_keys=True)
        f.write('\n')


def write_best_policies(policies, path):
    """One policy per line, each preceded by a '# label' comment."""
    with open(path, 'w', encoding='utf-8') as f:
        for label, pf in policies.items():
            f.write(f"# {label}\n{render(pf)}\n")


def read_best_policies(path):
    policies = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith('#'):
                policies.append(parse(line))
    return policies


def write_search_logs(search_logs, path):
    records = [{'run': label, **record} for label, log in search_logs.items() for record in log]
    write_search_log(records, path)


def write_provenance(out_dir, invocation, config, inputs=()):
    """run_config.yaml: the exact invocation, the resolved config and input digests."""
    provenance = {
        'invocation': list(invocation),
        'config': config,
        'inputs': {str(p): file_digest(p) for p in inputs},
    }
    with open(os.path.join(out_dir, 'run_config.yaml'), 'w', encoding='utf-8') as f:
        yaml.safe_dump(provenance, f, sort_keys=True)


def save_outcome(outcome: ExperimentResult, out_dir, invocation, config, inputs=()):
    os.makedirs(out_dir, exist_ok=True)
    write_results(outcome.rows, os.path.join(out_dir, 'results.csv'))
    write_summary(outcome.rows, os.path.join(out_dir, 'summary.json'))
    if outcome.best_policies:
        write_best_policies(outcome.best_policies, os.path.join(out_dir, 'best_policy.txt'))
    if outcome.search_logs:
        write_search_logs(outcome.search_logs, os.path.join(out_dir, 'search.log.jsonl'))
    write_provenance(out_dir, invocation, config, inputs)
    logger.info("Wrote %d result rows to %s.", len(outcome.rows), out_dir)
