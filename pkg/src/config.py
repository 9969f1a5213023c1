"""
config.py

Loads the search, simulation and experiment parameters from config.yaml and
makes them available as a global Python object. Keys missing from the file
fall back to DEFAULTS, so a partial config.yaml is always completed.
"""

import copy
import logging
import math
import os
from dataclasses import dataclass

import yaml

logger = logging.getLogger(__name__)

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG_PATH = os.path.join(PROJECT_ROOT, 'config.yaml')

DEFAULTS = {
    'search': {
        'iterations': 500,
        'max_operators': 6,
        'epsilon': 0.2,
        'c_uct': 'sqrt2',
        'alpha': 1.0,
        'k': 10,
        'seed': 0,
        'reward_shaping': True,
        'lane_occupancy_features': True,
        'psr_rollout': True,
        'eval_replicas': 0,
        'log_interval': 50,
    },
    'simulation': {
        'tick_s': 1,
        'decision_interval_s': 20,
        'all_red_s': 3,
        'saturation_rate': 0.5,
        'episode_length_s': 3600,
    },
    'experiment': {
        'seeds': [0, 1, 2, 3, 4],
        'replicas': 10,
        'noise_bound_s': 60,
        'jobs': 0,
        'output_dir': 'results',
    },
    'scenario': {
        'lane_length_m': 100.0,
        'boundary_length_m': 100.0,
        'speed_mps': 10.0,
        'vehicle_spacing_m': 7.5,
        'phase_plan': '4',
    },
    'demand': {
        'light': 400,
        'medium': 750,
        'heavy': 1100,
    },
    'deployability': {
        'cycles_per_operation': 400,
        'response_threshold_s': 0.1,
        'devices': {
            'ATmega328P': {'ram_bytes': 2048, 'clock_hz': 16_000_000},
            'MSP430G2553': {'ram_bytes': 512, 'clock_hz': 16_000_000},
        },
    },
    'logging': {
        'level': 'INFO',
    },
}


def _deep_merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(config_path=DEFAULT_CONFIG_PATH):
    """
    Loads the YAML configuration file and completes it from DEFAULTS.

    Args:
        config_path (str): The path to the config.yaml file.

    Returns:
        dict: A dictionary containing the configuration parameters.
    """
    try:
        with open(config_path, 'r') as f:
            config_data = yaml.safe_load(f) or {}
        logger.debug("Configuration loaded from %s.", config_path)
    except FileNotFoundError:
        logger.warning("Configuration file not found at '%s', using defaults.", config_path)
        config_data = {}
    except yaml.YAMLError as e:
        raise ValueError(f"Error parsing {config_path}: {e}") from e

    if not isinstance(config_data, dict):
        raise ValueError(f"{config_path} must contain a mapping at the top level")
    return _deep_merge(DEFAULTS, config_data)


def parse_exploration_constant(value):
    """Accepts 'sqrt2', 'inv-sqrt2' or anything float() understands."""
    if isinstance(value, str):
        name = value.strip().lower()
        if name == 'sqrt2':
            return math.sqrt(2.0)
        if name in ('inv-sqrt2', '1/sqrt2'):
            return 1.0 / math.sqrt(2.0)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"Invalid exploration constant: {value!r}") from None


@dataclass(frozen=True)
class SearchConfig:
    max_operators: int = 6
    epsilon: float = 0.2
    c_uct: float = math.sqrt(2.0)
    alpha: float = 1.0
    k: int = 10
    iterations: int = 500
    seed: int = 0
    # Ablation switches: M1 turns off reward_shaping, M2 lane_occupancy_features,
    # M3 psr_rollout.
    reward_shaping: bool = True
    lane_occupancy_features: bool = True
    psr_rollout: bool = True
    eval_replicas: int = 0
    noise_bound_s: int = 60
    log_interval: int = 50

    def __post_init__(self):
        for name in ('max_operators', 'c_uct', 'alpha', 'k', 'iterations'):
            if getattr(self, name) <= 0:
                raise ValueError(f"search.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"search.epsilon must lie in [0, 1], got {self.epsilon}")
        if self.seed < 0 or self.eval_replicas < 0 or self.noise_bound_s < 0:
            raise ValueError("search.seed, eval_replicas and noise_bound_s must be nonnegative")

    @classmethod
    def from_config(cls, config, **overrides):
        section = dict(config.get('search', {}))
        section.update({k: v for k, v in overrides.items() if v is not None})
        return cls(
            max_operators=int(section['max_operators']),
            epsilon=float(section['epsilon']),
            c_uct=parse_exploration_constant(section['c_uct']),
            alpha=float(section['alpha']),
            k=int(section['k']),
            iterations=int(section['iterations']),
            seed=int(section['seed']),
            reward_shaping=bool(section['reward_shaping']),
            lane_occupancy_features=bool(section['lane_occupancy_features']),
            psr_rollout=bool(section['psr_rollout']),
            eval_replicas=int(section['eval_replicas']),
            noise_bound_s=int(section.get('noise_bound_s',
                                          config.get('experiment', {}).get('noise_bound_s', 60))),
            log_interval=int(section['log_interval']),
        )

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class SimulationConfig:
    tick_s: int = 1
    decision_interval_s: int = 20
    all_red_s: int = 3
    saturation_rate: float = 0.5

    def __post_init__(self):
        if self.tick_s != 1:
            raise ValueError("simulation.tick_s is fixed at 1 second")
        if self.decision_interval_s <= 0 or self.saturation_rate <= 0:
            raise ValueError("simulation.decision_interval_s and saturation_rate must be positive")
        if self.all_red_s < 0 or self.all_red_s >= self.decision_interval_s:
            raise ValueError("simulation.all_red_s must lie in [0, decision_interval_s)")

    @classmethod
    def from_config(cls, config, **overrides):
        section = dict(config.get('simulation', {}))
        section.update({k: v for k, v in overrides.items() if v is not None})
        return cls(
            tick_s=int(section['tick_s']),
            decision_interval_s=int(section['decision_interval_s']),
            all_red_s=int(section['all_red_s']),
            saturation_rate=float(section['saturation_rate']),
        )


# Load the configuration once when the module is imported.
CONFIG = load_config()
