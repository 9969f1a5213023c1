import json
import os

import pytest

from main import build_parser, main, resolve_jobs
from src.traffic_network import load_scenario


def run_json(capsys, argv):
    assert main(['--json', *argv]) == 0
    return json.loads(capsys.readouterr().out)


def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit) as exit_info:
        build_parser().parse_args(['--help'])
    assert exit_info.value.code == 0
    out = capsys.readouterr().out
    for command in ('search', 'eval', 'baseline', 'gen-scenario', 'ablate', 'transfer', 'analyze',
                    'sensitivity', 'experiment'):
        assert command in out


def test_unknown_flag_is_rejected():
    with pytest.raises(SystemExit) as exit_info:
        main(['eval', '--scenario', 'x.json', '--policy', 'WI', '--colour', 'blue'])
    assert exit_info.value.code == 2


def test_malformed_policy_exits_with_diagnostic(merge_scenario_file, capsys):
    assert main(['eval', '--scenario', merge_scenario_file, '--policy', 'mul LI foo']) == 2
    assert "unknown token 'foo'" in capsys.readouterr().err


def test_missing_scenario_file_exits_nonzero(tmp_path, capsys):
    assert main(['baseline', '--scenario', str(tmp_path / 'absent.json'), '--name', 'fixedtime']) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_eval_and_baseline_print_json(merge_scenario_file, capsys):
    policy = run_json(capsys, ['eval', '--scenario', merge_scenario_file, '--policy', 'mul LI mul DI DI'])
    assert policy['scenario'] == 'merge' and policy['avg_travel_time'] > 0
    baseline = run_json(capsys, ['baseline', '--scenario', merge_scenario_file, '--name', 'maxpressure',
                                 '--replicas', '2'])
    assert baseline['replicas'] == 2 and baseline['controller'] == 'maxpressure'


def test_gen_scenario_writes_a_loadable_file(tmp_path, capsys):
    out = str(tmp_path / 'grid.json')
    payload = run_json(capsys, ['gen-scenario', '--rows', '2', '--cols', '2', '--demand', 'light',
                                '--seed', '4', '--episode-length', '300', '--out', out])
    assert payload['intersections'] == 4 and payload['roads'] == 24
    assert len(load_scenario(out).flows) == payload['vehicles']


def test_search_then_analyze(merge_scenario_file, tmp_path, capsys):
    out = str(tmp_path / 'run')
    result = run_json(capsys, ['search', '--scenario', merge_scenario_file, '--iterations', '12',
                               '--max-ops', '2', '--c-uct', 'inv-sqrt2', '--seed', '1', '--out', out])
    for name in ('best_policy.txt', 'search.log.jsonl', 'run_config.yaml'):
        assert os.path.exists(os.path.join(out, name))
    assert result['flops'] <= 2

    analysis = run_json(capsys, ['analyze', '--feature-freq', out, '--cost', out, '--plot', out])
    assert sum(analysis['feature_frequency'].values()) == result['bytes'] - result['flops']
    assert analysis['cost'][0]['policy'] == result['best_policy']
    assert all(os.path.exists(p) for p in analysis['figures'])


def test_transfer_from_policy_file(merge_scenario_file, tmp_path, capsys):
    policy_file = tmp_path / 'best_policy.txt'
    policy_file.write_text("# seed0\nneg WO\n")
    payload = run_json(capsys, ['transfer', '--policy-file', str(policy_file), '--scenario',
                                merge_scenario_file, '--source', 'grid1x1'])
    assert payload['groups'][0]['scenario'] == 'grid1x1->merge'


def test_analyze_without_a_mode_fails(tmp_path):
    assert main(['analyze']) == 2


def test_jobs_default_to_every_core():
    args = build_parser().parse_args(['eval', '--scenario', 'x.json', '--policy', 'WI'])
    assert resolve_jobs(args.jobs) == (os.cpu_count() or 1)
    assert resolve_jobs(3) == 3


def test_parallel_and_serial_evaluation_agree(merge_scenario_file, capsys):
    serial = run_json(capsys, ['--jobs', '1', 'baseline', '--scenario', merge_scenario_file,
                               '--name', 'random', '--replicas', '3'])
    parallel = run_json(capsys, ['--jobs', '2', 'baseline', '--scenario', merge_scenario_file,
                                 '--name', 'random', '--replicas', '3'])
    assert serial == parallel
