"""Experiment configuration: JSON file, strict schema, defaults, overrides."""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .channel import ChannelConfig
from .constellation import FitSchedule
from .errors import ConfigError
from .objectives import MCConfig, VibWeights, beta_transform
from .task_env import AgentSchedule, DatasetSpec

OUTPUT_ROOT_ENV = "TASKJSCC_OUTPUT_ROOT"


def _resource(name: str) -> dict:
    return json.loads(resources.files("taskjscc").joinpath(name).read_text())


SCHEMA = _resource("config_schema.json")


def default_config() -> dict:
    return _resource("default_config.json")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _snr(v) -> float:
    return math.inf if v == "inf" else float(v)


def _validate(tree: dict) -> None:
    try:
        jsonschema.validate(tree, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}") from None


@dataclass
class ExperimentConfig:
    tree: dict

    def __post_init__(self):
        _validate(self.tree)
        w = self.tree["weights"]
        if ("beta1" in w) != ("beta2" in w):
            raise ConfigError("weights: beta1 and beta2 must be given together")
        if "beta1" in w and ("beta1_hat" in w or "beta2_hat" in w):
            raise ConfigError("weights: give either (beta1, beta2) or (beta1_hat, beta2_hat), not both")
        dims = self.tree["dims"]
        if not self.tree["dataset"]["latent_dim"] <= dims["d"] <= dims["l"]:
            raise ConfigError("need dataset.latent_dim <= dims.d <= dims.l")
        try:
            self.dataset_spec()
            self.weights()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def __getitem__(self, key):
        return self.tree[key]

    # -- typed views ---------------------------------------------------------
    @property
    def seeds(self) -> tuple[int, int, int]:
        s = self.tree["seeds"]
        return s["dataset"], s["init"], s["channel"]

    @property
    def seed_tag(self) -> str:
        return "-".join(str(s) for s in self.seeds)

    @property
    def mode(self) -> str:
        return self.tree["objective_mode"]

    def dataset_spec(self) -> DatasetSpec:
        d = self.tree["dataset"]
        return DatasetSpec(seed=self.seeds[0], l=self.tree["dims"]["l"], d=self.tree["dims"]["d"], **d)

    def agent_schedule(self) -> AgentSchedule:
        return AgentSchedule(hidden=self.tree["networks"]["agent_hidden"], seed=self.seeds[1],
                             **self.tree["agent"])

    def fit_schedule(self) -> FitSchedule:
        c = {k: v for k, v in self.tree["constellation"].items() if k not in ("u", "r_init", "batch")}
        return FitSchedule(**c)

    def train_channel(self) -> ChannelConfig:
        c = self.tree["channel"]
        return ChannelConfig(c["kind"], _snr(c["train_snr_db"]), c["p_target"])

    def eval_snrs(self) -> list[float]:
        return [_snr(v) for v in self.tree["channel"]["eval_snr_db"]]

    def weights(self) -> VibWeights:
        w = self.tree["weights"]
        bq = w.get("beta_q", 10.0)
        if "beta1" in w:
            return beta_transform(w["beta1"], w["beta2"], bq)
        return VibWeights(w.get("beta1_hat", 1.0), w.get("beta2_hat", 8192.0), bq)

    def mc(self) -> MCConfig:
        return MCConfig(**self.tree["mc"])

    def output_dir(self) -> Path:
        p = Path(self.tree["output"]["dir"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p

    def to_json(self) -> str:
        return json.dumps(self.tree, indent=2, sort_keys=True) + "\n"

    def replace(self, **over) -> "ExperimentConfig":
        """Copy with a nested override tree, e.g. ``replace(mc={"omega": 8})``."""
        return ExperimentConfig(_merge(self.tree, over))


def load_config(source=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from a file path, a dict, or nothing (defaults).

    The user tree is validated on its own first so unknown keys are rejected
    before defaults are filled in.
    """
    if source is None:
        user = {}
    elif isinstance(source, dict):
        user = source
    else:
        try:
            user = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {source}: {e}") from None
    if not isinstance(user, dict):
        raise ConfigError("config root must be an object")
    _validate(user)
    base = default_config()
    if "beta1" in user.get("weights", {}):
        # raw multipliers replace the default transformed weights
        base["weights"].pop("beta1_hat")
        base["weights"].pop("beta2_hat")
    tree = _merge(base, user)
    if overrides:
        tree = _merge(tree, overrides)
    return ExperimentConfig(tree)
