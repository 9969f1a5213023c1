"""
main.py

Command-line entry point: symbolic policy search, evaluation of policies and
baselines, scenario generation, ablation, transfer, sensitivity sweeps and
analysis of finished runs.
"""
import argparse
import json
import os
import sys

from src.config import CONFIG, SearchConfig, SimulationConfig, load_config
from src.expr_core import build_tree, cost, parse, render, render_infix
from src.harness import (
    ABLATION_MODES, POLICY_PREFIX, SENSITIVITY_GRID, EvalCell, ExperimentResult, ExperimentSpec,
    ablation_suite, deployability, read_best_policies, run_cells, run_experiment, save_outcome,
    sensitivity_sweep, summarize, transfer_eval,
)
from src.mcts_search import search
from src.policy import BASELINE_NAMES, feature_frequency
from src.scenario_generator import PHASE_PLANS, generate_grid_scenario
from src.traffic_network import load_scenario, save_scenario
from src.utils.logging_utils import setup_logging

DEFAULT_MOVEMENTS = 36


class CliError(ValueError):
    """Invalid command-line input detected after argument parsing."""


def resolve_jobs(jobs):
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return jobs


def _emit(args, payload, lines):
    if args.json:
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    else:
        for line in lines:
            print(line)


def _resolved_config(config, search_config=None, sim_config=None):
    resolved = dict(config)
    if search_config is not None:
        resolved['search'] = search_config.to_dict()
    if sim_config is not None:
        resolved['simulation'] = {**config['simulation'], **sim_config.__dict__}
    return resolved


def _invocation(argv):
    return ['main.py', *argv]


def _search_config(args, config):
    return SearchConfig.from_config(
        config, iterations=args.iterations, max_operators=args.max_ops, epsilon=args.epsilon,
        c_uct=args.c_uct, alpha=args.alpha, k=args.k, seed=args.seed,
        eval_replicas=args.eval_replicas,
        reward_shaping=False if args.no_reward_shaping else None,
        lane_occupancy_features=False if args.no_lane_occupancy else None,
        psr_rollout=False if args.uniform_rollout else None,
    )


def _spec_from_args(args, config, controllers=None):
    if getattr(args, 'experiment', None):
        spec = ExperimentSpec.load(args.experiment)
    else:
        if not args.scenario:
            raise CliError("either --scenario or --experiment is required")
        spec = ExperimentSpec(train_scenario=args.scenario)
    if controllers is not None:
        spec.controllers = controllers
    if args.seeds is not None:
        spec.seeds = args.seeds
    if args.replicas is not None:
        spec.replicas = args.replicas
    if args.iterations is not None:
        spec.search = {**spec.search, 'iterations': args.iterations}
    return spec


# --- Subcommands -----------------------------------------------------------

def cmd_search(args, config, argv):
    scenario = load_scenario(args.scenario)
    search_config = _search_config(args, config)
    sim_config = SimulationConfig.from_config(config)
    out_dir = args.out or os.path.join(config['experiment']['output_dir'], f"search_seed{search_config.seed}")
    os.makedirs(out_dir, exist_ok=True)

    result = search(scenario, search_config, sim_config, jobs=args.jobs,
                    log_path=os.path.join(out_dir, 'search.log.jsonl'), progress=not args.json)
    if result.best is None:
        raise CliError("search found no policy with a positive reward")
    outcome = ExperimentResult(rows=[], best_policies={f"seed{search_config.seed}": result.best})
    save_outcome(outcome, out_dir, _invocation(argv),
                 _resolved_config(config, search_config, sim_config), inputs=[args.scenario])

    policy_cost = cost(result.best)
    payload = {
        'best_policy': render(result.best),
        'infix': render_infix(build_tree(result.best)),
        'avg_travel_time': result.best_avg_travel_time,
        'evaluations': result.evaluations,
        'flops': policy_cost.flops,
        'bytes': policy_cost.bytes,
        'output_dir': out_dir,
    }
    _emit(args, payload, [
        f"Best policy: {payload['best_policy']}",
        f"  = {payload['infix']}",
        f"Average travel time: {payload['avg_travel_time']:.2f} s/veh",
        f"Results written to {out_dir}",
    ])
    return 0


def _evaluate(args, config, argv, scenario_path, controller):
    scenario = load_scenario(scenario_path)
    sim_config = SimulationConfig.from_config(config)
    cells = [EvalCell(scenario, controller, args.seed, r, args.noise_bound, sim_config)
             for r in range(args.replicas)]
    rows = run_cells(cells, args.jobs)
    if args.out:
        save_outcome(ExperimentResult(rows=rows), args.out, _invocation(argv),
                     _resolved_config(config, sim_config=sim_config), inputs=[scenario_path])
    group = summarize(rows)[0]
    payload = {'scenario': scenario.name, 'controller': controller,
               'avg_travel_time': group['avg_travel_time_mean'],
               'avg_travel_time_std': group['avg_travel_time_std'],
               'throughput': group['throughput_mean'], 'replicas': len(rows)}
    _emit(args, payload, [
        f"{controller} on {scenario.name} ({len(rows)} replica(s)):",
        f"  average travel time {payload['avg_travel_time']:.2f} s/veh",
        f"  throughput {payload['throughput']:.2f} veh/min",
    ])
    return 0


def cmd_eval(args, config, argv):
    policy = parse(args.policy)
    return _evaluate(args, config, argv, args.scenario, POLICY_PREFIX + render(policy))


def cmd_baseline(args, config, argv):
    return _evaluate(args, config, argv, args.scenario, args.name)


def cmd_gen_scenario(args, config, argv):
    demand = args.demand if args.demand in config['demand'] else float(args.demand)
    scenario = generate_grid_scenario(args.rows, args.cols, demand=demand, seed=args.seed,
                                      phase_plan=args.phase_plan, episode_length=args.episode_length)
    out = args.out or f"{scenario.name}.json"
    save_scenario(scenario, out)
    payload = {'path': out, 'intersections': len(scenario.network.intersections),
               'roads': len(scenario.network.roads), 'vehicles': len(scenario.flows)}
    _emit(args, payload, [f"Wrote {out}: {payload['intersections']} intersection(s), "
                          f"{payload['roads']} roads, {payload['vehicles']} vehicles"])
    return 0


def _finish_sweep(args, config, argv, spec, outcome, title):
    out_dir = args.out or spec.output_dir
    save_outcome(outcome, out_dir, _invocation(argv), _resolved_config(config, spec.search_config(config)),
                 inputs=[spec.train_scenario])
    summary = summarize(outcome.rows)
    lines = [title]
    for group in summary:
        label = group['mode'] or group['controller']
        lines.append(f"  {label:<24} {group['avg_travel_time_mean']:8.2f} "
                     f"+/- {group['avg_travel_time_std']:.2f} s/veh (n={group['n']})")
    _emit(args, {'output_dir': out_dir, 'groups': summary}, lines)
    return 0


def cmd_experiment(args, config, argv):
    spec = _spec_from_args(args, config, controllers=args.controllers)
    outcome = run_experiment(spec, config, jobs=args.jobs)
    if spec.transfer_scenarios:
        for label, policy in outcome.best_policies.items():
            seed = int(label.replace('seed', ''))
            outcome.rows += transfer_eval(policy, spec.transfer_scenarios, [seed], spec.replicas,
                                          spec.noise_bound_s, spec.sim_config(config),
                                          source=load_scenario(spec.train_scenario).name, jobs=args.jobs)
    return _finish_sweep(args, config, argv, spec, outcome, "Experiment summary:")


def cmd_ablate(args, config, argv):
    spec = _spec_from_args(args, config)
    modes = args.mode or list(ABLATION_MODES)
    outcome = ablation_suite(spec, modes, config, jobs=args.jobs)
    return _finish_sweep(args, config, argv, spec, outcome, "Ablation summary:")


def cmd_sensitivity(args, config, argv):
    spec = _spec_from_args(args, config)
    parameters = args.parameter or list(SENSITIVITY_GRID)
    grid = {p: SENSITIVITY_GRID[p] for p in parameters}
    outcome = sensitivity_sweep(spec, grid, config, jobs=args.jobs)
    return _finish_sweep(args, config, argv, spec, outcome, "Sensitivity summary:")


def cmd_transfer(args, config, argv):
    if args.policy_file:
        policies = read_best_policies(args.policy_file)
    elif args.policy:
        policies = [parse(args.policy)]
    else:
        raise CliError("transfer needs --policy-file or --policy")
    if not policies:
        raise CliError(f"no policies found in {args.policy_file}")
    sim_config = SimulationConfig.from_config(config)
    rows = []
    for policy in policies:
        rows += transfer_eval(policy, args.scenario, [args.seed], args.replicas, args.noise_bound,
                              sim_config, source=args.source, jobs=args.jobs)
    if args.out:
        save_outcome(ExperimentResult(rows=rows), args.out, _invocation(argv),
                     _resolved_config(config, sim_config=sim_config), inputs=args.scenario)
    summary = summarize(rows)
    lines = [f"  {g['scenario']:<32} {g['avg_travel_time_mean']:8.2f} s/veh (n={g['n']})" for g in summary]
    _emit(args, {'groups': summary}, ["Transfer summary:", *lines])
    return 0


def _load_policies(directory):
    path = os.path.join(directory, 'best_policy.txt') if os.path.isdir(directory) else directory
    return read_best_policies(path)


def cmd_analyze(args, config, argv):
    if not (args.feature_freq or args.cost or args.plot):
        raise CliError("analyze needs --feature-freq, --cost and/or --plot")
    payload, lines = {}, []

    if args.feature_freq:
        counts = feature_frequency(_load_policies(args.feature_freq))
        payload['feature_frequency'] = counts
        lines.append("Variable frequency: " + ", ".join(f"{k}={v}" for k, v in counts.items()))

    if args.cost:
        entries = []
        for policy in _load_policies(args.cost):
            policy_cost = cost(policy)
            entries.append({'policy': render(policy), 'flops': policy_cost.flops, 'bytes': policy_cost.bytes,
                            'devices': deployability(policy_cost, args.movements, config['deployability'])})
            fits = [d['device'] for d in entries[-1]['devices'] if d['deployable']]
            lines.append(f"{render(policy)}: {policy_cost.flops} FLOPs, {policy_cost.bytes} bytes, "
                         f"deployable on {', '.join(fits) or 'none'}")
        payload['cost'] = entries

    if args.plot:
        from visualization.visualizer import Visualizer

        visualizer = Visualizer(os.path.join(args.plot, 'figures'))
        figures = []
        best_path = os.path.join(args.plot, 'best_policy.txt')
        if os.path.exists(best_path):
            policies = read_best_policies(best_path)
            figures.append(visualizer.plot_feature_frequency(feature_frequency(policies)))
            figures.append(visualizer.plot_cost([cost(p) for p in policies], config['deployability'],
                                                args.movements))
        summary_path = os.path.join(args.plot, 'summary.json')
        if os.path.exists(summary_path):
            with open(summary_path, 'r', encoding='utf-8') as f:
                groups = json.load(f)['groups']
            if any(g['mode'] in ABLATION_MODES for g in groups):
                figures.append(visualizer.plot_ablation([g for g in groups if g['mode'] in ABLATION_MODES]))
        log_path = os.path.join(args.plot, 'search.log.jsonl')
        if os.path.exists(log_path):
            with open(log_path, 'r', encoding='utf-8') as f:
                records = [json.loads(line) for line in f if line.strip()]
            figures.append(visualizer.plot_search_progress(records))
        payload['figures'] = figures
        lines += [f"Wrote {p}" for p in figures] or ["No run artefacts found to plot."]

    _emit(args, payload, lines)
    return 0


# --- Parser ----------------------------------------------------------------

def _add_search_flags(parser):
    parser.add_argument('--iterations', type=int, help="MCTS iterations (one episode each)")
    parser.add_argument('--max-ops', type=int, help="maximum operators per policy")
    parser.add_argument('--epsilon', type=float, help="epsilon-greedy selection probability")
    parser.add_argument('--c-uct', help="exploration constant: sqrt2, inv-sqrt2 or a number")
    parser.add_argument('--alpha', type=float, help="PSR smoothing")
    parser.add_argument('--k', type=int, help="archive size feeding the PSR table")
    parser.add_argument('--eval-replicas', type=int, help="flow replicas averaged per candidate")
    parser.add_argument('--no-reward-shaping', action='store_true')
    parser.add_argument('--no-lane-occupancy', action='store_true', help="drop the LI/LO variables")
    parser.add_argument('--uniform-rollout', action='store_true', help="uniform instead of PSR rollout")


def _add_eval_flags(parser, config, scenario_required=True):
    parser.add_argument('--scenario', required=scenario_required,
                        help="scenario JSON, or YAML scenario or generator recipe")
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--replicas', type=int, default=1,
                        help="replica 0 is the recorded flow, the rest are jittered")
    parser.add_argument('--noise-bound', type=int, default=config['experiment']['noise_bound_s'],
                        help="entry-time jitter bound in seconds")
    parser.add_argument('--out', help="directory for results.csv and summary.json")


def _add_sweep_flags(parser):
    parser.add_argument('--scenario', help="training scenario file (JSON or YAML)")
    parser.add_argument('--experiment', help="experiment spec (YAML or JSON)")
    parser.add_argument('--seeds', type=int, nargs='+')
    parser.add_argument('--replicas', type=int)
    parser.add_argument('--iterations', type=int)
    parser.add_argument('--out', help="output directory")


def build_parser(config=CONFIG):
    parser = argparse.ArgumentParser(
        prog='main.py', description="Symbolic traffic-signal policy search and evaluation.")
    parser.add_argument('--config', help="alternative config.yaml")
    parser.add_argument('--log-level', default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument('--json', action='store_true', help="print only a JSON summary on stdout")
    parser.add_argument('--jobs', type=int, default=config['experiment']['jobs'],
                        help="concurrent episode evaluations; 0 or less uses every core")
    sub = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    p = sub.add_parser('search', help="search for a priority function on a scenario")
    p.add_argument('--scenario', required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', help="output directory")
    _add_search_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser('eval', help="evaluate a priority function")
    _add_eval_flags(p, config)
    p.add_argument('--policy', required=True, help='token list, e.g. "mul LI mul DI DI"')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('baseline', help="evaluate a baseline controller")
    _add_eval_flags(p, config)
    p.add_argument('--name', required=True, choices=BASELINE_NAMES)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser('gen-scenario', help="generate a synthetic grid scenario")
    p.add_argument('--rows', type=int, default=1)
    p.add_argument('--cols', type=int, default=1)
    p.add_argument('--demand', default='medium', help="light, medium, heavy or veh/h per entry")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--phase-plan', choices=PHASE_PLANS)
    p.add_argument('--episode-length', type=int)
    p.add_argument('--out', help="scenario JSON path")
    p.set_defaults(func=cmd_gen_scenario)

    p = sub.add_parser('experiment', help="controllers x seeds x replicas comparison")
    _add_sweep_flags(p)
    p.add_argument('--controllers', nargs='+', help="symbolic, baselines or policy:<tokens>")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser('ablate', help="ablation sweep over FM and M1-M4")
    _add_sweep_flags(p)
    p.add_argument('--mode', action='append', choices=list(ABLATION_MODES))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('sensitivity', help="parameter sensitivity sweep")
    _add_sweep_flags(p)
    p.add_argument('--parameter', action='append', choices=list(SENSITIVITY_GRID))
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser('transfer', help="evaluate frozen policies on other scenarios")
    p.add_argument('--policy-file', help="best_policy.txt from an earlier run")
    p.add_argument('--policy', help="a single token list")
    p.add_argument('--scenario', required=True, action='append', help="target scenario (repeatable)")
    p.add_argument('--source', default='source', help="label of the training scenario")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--replicas', type=int, default=1)
    p.add_argument('--noise-bound', type=int, default=config['experiment']['noise_bound_s'])
    p.add_argument('--out')
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser('analyze', help="feature frequency, policy cost and figures of a run")
    p.add_argument('--feature-freq', metavar='DIR')
    p.add_argument('--cost', metavar='DIR')
    p.add_argument('--plot', metavar='DIR')
    p.add_argument('--movements', type=int, default=DEFAULT_MOVEMENTS,
                   help="movements scored per decision on the target device")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else CONFIG
        setup_logging(args.log_level or config['logging']['level'], stream=sys.stderr)
        args.jobs = resolve_jobs(args.jobs)
        return args.func(args, config, argv)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
