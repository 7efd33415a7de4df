"""Experiment configuration: one JSON document with sections
{swarm, dynamics, model, data, coordinator, seeds}.

Defaults reproduce the reference hyperparameter regime: batch size 8,
20 epochs, c1 = c2 = 0.5, a 4-particle group, pairwise gradient weights of
0.2 with a heavily weighted wilder particle (10 toward the last id), fixed
learning rates 1e-2 / 1e-3 / 1e-4 for particles 0-2 and a log-uniform draw
from [1e-5, 1e-1] for the wilder particle, Gaussian noise 0.1 and dropout
0.4 in the classifier head. The augmentation block is carried as metadata
for fidelity and is not applied to synthetic feature sequences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import Dynamic, Dynamic2Form, DynamicsConfig, RMode, gradient_weight_matrix
from .data import generate_dataset, load_dataset, save_dataset, to_sequence_batch
from .errors import ConfigError
from .models import SequenceClassifier, SequenceModelConfig, benchmark_model
from .models.base import SequenceBatch

__all__ = ["ExperimentConfig", "load_config", "build_dynamics",
           "build_model_and_data", "learning_rate_for", "DEFAULTS"]

_WILD_LR_SALT = 0x5EED

DEFAULTS: dict[str, Any] = {
    "run_id": "swarm",
    "out_dir": "results",
    "seeds": [1],
    "grid": {"dynamics": ["individual", "dynamic1", "dynamic2"]},
    "swarm": {
        "num_particles": 4,
        "epochs": 20,
        "batch_size": 8,
        "learning_rates": [1e-2, 1e-3, 1e-4, "log_uniform"],
        "wild_range": [1e-5, 1e-1],
        "exchange_gradient": "full_batch",
    },
    "dynamics": {
        "c1": 0.5,
        "c2": 0.5,
        "c": 0.5,
        "beta": 1.0,
        "num_neighbors": 4,  # group size including the particle itself
        "gradient_weights": {"base": 0.2, "wild": 10.0},
        "warmup_epochs": 1,
        "r_mode": "scalar",
        "d2_form": "normalized",
        "reset_velocity_each_epoch": False,
    },
    "model": {
        "kind": "sequence",
        "arch": "transformer",
        "d_model": 16,
        "hidden_units": 16,
        "num_blocks": 2,
        "num_heads": 4,
        "ffn_dim": 64,
        "head_dim": 64,
        "noise_sigma": 0.1,
        "dropout_rate": 0.4,
    },
    "data": {
        "num_classes": 4,
        "samples_per_class": 50,
        "test_per_class": 20,
        "min_len": 16,
        "max_len": 24,
        "feature_dim": 8,
        "noise_sigma": 0.05,
        "seq_len": 16,
        "selector": "shadow",
        "seed": 1234,
        "augmentation": {"zoom_range": 0.1, "rotation_range": 8,
                         "width_shift_range": 0.2, "height_shift_range": 0.2,
                         "preprocessing": [-1, 1]},
    },
    "coordinator": {"listen": "127.0.0.1:7077", "timeout": 300.0},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key in base and isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration document."""

    raw: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULTS)))

    def __post_init__(self):
        self._validate()

    def _validate(self):
        cfg = self.raw
        swarm = cfg.get("swarm", {})
        n = swarm.get("num_particles")
        if not isinstance(n, int) or n < 1:
            raise ConfigError("must be a positive integer", key="swarm.num_particles")
        if not isinstance(swarm.get("epochs"), int) or swarm["epochs"] < 0:
            raise ConfigError("must be a nonnegative integer", key="swarm.epochs")
        if not isinstance(swarm.get("batch_size"), int) or swarm["batch_size"] < 1:
            raise ConfigError("must be a positive integer", key="swarm.batch_size")
        rates = swarm.get("learning_rates")
        if not isinstance(rates, list) or not rates:
            raise ConfigError("must be a nonempty list", key="swarm.learning_rates")
        for i, r in enumerate(rates):
            if r != "log_uniform" and not (isinstance(r, (int, float)) and r > 0):
                raise ConfigError("entries must be positive numbers or 'log_uniform'",
                                  key=f"swarm.learning_rates[{i}]")
        lo, hi = swarm.get("wild_range", [1e-5, 1e-1])
        if not (0 < lo <= hi):
            raise ConfigError("must satisfy 0 < low <= high", key="swarm.wild_range")
        dyn = cfg.get("dynamics", {})
        for key in ("c1", "c2", "c", "beta"):
            if not isinstance(dyn.get(key), (int, float)):
                raise ConfigError("must be a number", key=f"dynamics.{key}")
        if dyn.get("beta", 1.0) <= 0:
            raise ConfigError("must be positive", key="dynamics.beta")
        if dyn.get("dynamic") is not None:
            try:
                Dynamic(dyn["dynamic"])
            except ValueError:
                raise ConfigError(f"unknown dynamic {dyn['dynamic']!r}",
                                  key="dynamics.dynamic") from None
        grid = cfg.get("grid", {})
        for i, d in enumerate(grid.get("dynamics", [])):
            try:
                Dynamic(d)
            except ValueError:
                raise ConfigError(f"unknown dynamic {d!r}", key=f"grid.dynamics[{i}]") from None
        models = cfg.get("models") or [cfg.get("model", {})]
        for i, model in enumerate(models):
            where = f"models[{i}]" if "models" in cfg and cfg["models"] else "model"
            if model.get("kind") not in ("sequence", "benchmark"):
                raise ConfigError("must be 'sequence' or 'benchmark'",
                                  key=f"{where}.kind")
            if model["kind"] == "benchmark":
                if "name" not in model:
                    raise ConfigError("benchmark models need a 'name'",
                                      key=f"{where}.name")
                if not isinstance(model.get("dim"), int) or model["dim"] < 1:
                    raise ConfigError("must be a positive integer",
                                      key=f"{where}.dim")
        seeds = cfg.get("seeds")
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("must be a list of integers", key="seeds")

    # -- accessors -----------------------------------------------------------

    @property
    def run_id(self) -> str:
        return str(self.raw["run_id"])

    @property
    def out_dir(self) -> str:
        return str(self.raw["out_dir"])

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def swarm(self) -> dict:
        return self.raw["swarm"]

    @property
    def grid_dynamics(self) -> list[Dynamic]:
        return [Dynamic(d) for d in self.raw["grid"]["dynamics"]]

    @property
    def model_sections(self) -> list[dict]:
        """The model grid axis: the ``models`` list, or the single ``model``.

        Sequence models are completed with the defaults of the ``model``
        section so sparse grid entries stay terse.
        """
        models = self.raw.get("models")
        if not models:
            return [self.raw["model"]]
        base = self.raw["model"]
        return [m if m["kind"] == "benchmark" else _merge(base, m) for m in models]

    @property
    def coordinator_listen(self) -> tuple[str, int]:
        listen = str(self.raw["coordinator"]["listen"])
        host, _, port = listen.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"expected host:port, got {listen!r}",
                              key="coordinator.listen")
        return host, int(port)

    @property
    def coordinator_timeout(self) -> float:
        return float(self.raw["coordinator"]["timeout"])


def load_config(path) -> ExperimentConfig:
    """Read a JSON config, layering it over the documented defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig(_merge(json.loads(json.dumps(DEFAULTS)), user))


def build_dynamics(cfg: ExperimentConfig, dynamic: Dynamic | None = None) -> DynamicsConfig:
    """DynamicsConfig from the config document.

    ``num_neighbors`` counts the whole group (the particle plus its
    neighbors), so the neighbor count k is clamped to num_particles - 1.
    """
    dyn = cfg.raw["dynamics"]
    n = cfg.swarm["num_particles"]
    gw = dyn["gradient_weights"]
    if isinstance(gw, dict):
        matrix = gradient_weight_matrix(n, base=float(gw.get("base", 0.2)),
                                        wild=float(gw.get("wild", 10.0)))
    else:
        matrix = np.asarray(gw, dtype=float)
        if matrix.shape != (n, n):
            raise ConfigError(f"matrix must be {n}x{n}", key="dynamics.gradient_weights")
    k = min(int(dyn["num_neighbors"]) - 1, n - 1) if dyn.get("num_neighbors") else n - 1
    k = max(k, 0)
    chosen = dynamic if dynamic is not None else Dynamic(dyn.get("dynamic", "dynamic1"))
    return DynamicsConfig(
        c1=float(dyn["c1"]), c2=float(dyn["c2"]), c=float(dyn["c"]),
        beta=float(dyn["beta"]), gradient_weights=matrix, k=k, dynamic=chosen,
        warmup_epochs=int(dyn["warmup_epochs"]), r_mode=RMode(dyn["r_mode"]),
        d2_form=Dynamic2Form(dyn["d2_form"]),
        reset_velocity_each_epoch=bool(dyn["reset_velocity_each_epoch"]))


def build_model_and_data(cfg: ExperimentConfig, model: dict | None = None):
    """(model_factory, train_batch, test_batch) from the config document.

    Benchmarks have no data: both batches are None. Sequence models get a
    deterministic synthetic train/test split (the first samples of every
    class train, the rest test). ``data.load_path`` reuses a previously
    exported dataset file instead of generating; ``data.save_path`` exports
    the generated one for later runs.
    """
    if model is None:
        model = cfg.raw["model"]
    if model["kind"] == "benchmark":
        name, dim = model["name"], int(model["dim"])
        return (lambda: benchmark_model(name, dim)), None, None

    data = cfg.raw["data"]
    num_classes = int(data["num_classes"])
    train_n, test_n = int(data["samples_per_class"]), int(data["test_per_class"])
    if data.get("load_path"):
        videos = load_dataset(data["load_path"])
        if len(videos) != num_classes * (train_n + test_n):
            raise ConfigError(
                f"dataset at {data['load_path']} has {len(videos)} samples, "
                f"expected {num_classes * (train_n + test_n)}", key="data.load_path")
    else:
        videos = generate_dataset(
            num_classes=num_classes, samples_per_class=train_n + test_n,
            min_len=int(data["min_len"]), max_len=int(data["max_len"]),
            feature_dim=int(data["feature_dim"]),
            noise_sigma=float(data["noise_sigma"]), seed=int(data["seed"]))
        if data.get("save_path"):
            save_dataset(videos, data["save_path"])
    train, test = [], []
    for c in range(num_classes):
        block = videos[c * (train_n + test_n):(c + 1) * (train_n + test_n)]
        train.extend(block[:train_n])
        test.extend(block[train_n:])
    seq_len, selector = int(data["seq_len"]), str(data["selector"])
    train_batch = to_sequence_batch(train, seq_len, num_classes, selector)
    test_batch = to_sequence_batch(test, seq_len, num_classes, selector)

    mconf = SequenceModelConfig(
        arch=model["arch"], input_dim=int(data["feature_dim"]), seq_len=seq_len,
        num_classes=num_classes, d_model=int(model["d_model"]),
        hidden_units=int(model["hidden_units"]), num_blocks=int(model["num_blocks"]),
        num_heads=int(model["num_heads"]), ffn_dim=int(model["ffn_dim"]),
        head_dim=int(model["head_dim"]), noise_sigma=float(model["noise_sigma"]),
        dropout_rate=float(model["dropout_rate"]))
    return (lambda: SequenceClassifier(mconf)), train_batch, test_batch


def learning_rate_for(cfg: ExperimentConfig, base_seed: int):
    """Per-particle learning rate function.

    Fixed rates come straight from the list; 'log_uniform' entries draw once
    per run from the wild range, deterministically in (base_seed, particle id).
    """
    swarm = cfg.swarm
    rates = swarm["learning_rates"]
    lo, hi = swarm["wild_range"]

    def lr(pid: int) -> float:
        entry = rates[pid % len(rates)]
        if entry == "log_uniform":
            rng = np.random.default_rng(
                np.random.SeedSequence([_WILD_LR_SALT, base_seed, pid]))
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return float(entry)

    return lr
