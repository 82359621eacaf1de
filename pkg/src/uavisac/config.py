"""INI-style run configuration mirroring the dataclass schemas.

Sections map to components: [scenario], [propulsion], [reward], [pso], [ga],
[mappo]. Keys mirror the dataclass field names and use linear SI units; the
two human-facing exceptions are ``sensing_angles_deg`` (degrees in the file,
radians internally) and the ``*_db``/``*_dbm`` convenience keys, which
override their linear counterparts when present.
"""

import configparser
from dataclasses import dataclass, fields, replace
from importlib import resources

from .drl_mappo import MappoConfig
from .energy import PropulsionParams
from .mdp_env import RewardConfig
from .planners import GaConfig, PsoConfig
from .scenario import ScenarioConfig, db_to_linear, dbm_to_watts

import numpy as np


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    propulsion: PropulsionParams
    reward: RewardConfig
    pso: PsoConfig
    ga: GaConfig
    mappo: MappoConfig


def default_config_text() -> str:
    return resources.files("uavisac.data").joinpath("default.cfg").read_text()


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return raw


def _apply_section(instance, section):
    updates = {}
    known = {f.name: getattr(instance, f.name) for f in fields(instance)}
    for key, raw in section.items():
        if key in known:
            updates[key] = _coerce(raw, known[key])
    return replace(instance, **updates) if updates else instance


_DB_KEYS = {
    "gamma_th_md_db": ("gamma_th_md", db_to_linear),
    "gamma_th_uav_db": ("gamma_th_uav", db_to_linear),
    "tbp_threshold_db": ("tbp_threshold", db_to_linear),
    "noise_md_dbm": ("noise_md", dbm_to_watts),
    "noise_uav_dbm": ("noise_uav", dbm_to_watts),
    "p_md_dbm": ("p_md", dbm_to_watts),
    "p_max_dbm": ("p_max", dbm_to_watts),
}


def _apply_scenario_section(scenario: ScenarioConfig, section) -> ScenarioConfig:
    raw = dict(section)
    scenario = _apply_section(scenario, section)
    # db/deg convenience keys override the linear fields set in the same file
    for key, (target, conv) in _DB_KEYS.items():
        if key in raw:
            scenario = replace(scenario, **{target: conv(float(raw[key]))})
    if "sensing_angles_deg" in raw:
        degs = tuple(float(x) for x in raw["sensing_angles_deg"]
                     .replace(",", " ").split())
        scenario = replace(scenario, sensing_angles=tuple(
            float(a) for a in np.deg2rad(degs)))
    return scenario


def load_config(path=None) -> RunConfig:
    """Parse a config file as an override layer on the built-in defaults."""
    layers = []
    defaults = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    defaults.read_string(default_config_text())
    layers.append(defaults)
    if path is not None:
        user = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(path) as fh:
            user.read_file(fh)
        layers.append(user)

    scenario = ScenarioConfig()
    propulsion = PropulsionParams()
    reward = RewardConfig()
    pso = PsoConfig()
    ga = GaConfig()
    mappo = MappoConfig()
    for parser in layers:
        if parser.has_section("scenario"):
            scenario = _apply_scenario_section(scenario, parser["scenario"])
        if parser.has_section("propulsion"):
            propulsion = _apply_section(propulsion, parser["propulsion"])
        if parser.has_section("reward"):
            reward = _apply_section(reward, parser["reward"])
        if parser.has_section("pso"):
            pso = _apply_section(pso, parser["pso"])
        if parser.has_section("ga"):
            ga = _apply_section(ga, parser["ga"])
        if parser.has_section("mappo"):
            mappo = _apply_section(mappo, parser["mappo"])
    return RunConfig(scenario=scenario, propulsion=propulsion, reward=reward,
                     pso=pso, ga=ga, mappo=mappo)
