"""Experiment configuration: one flat JSON document validated by a pydantic schema.

Precedence when resolving a run: built-in profile < config file < CLI flags.
Unknown keys are rejected.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..errors import ConfigError
from ..optimize import (
    AdamConfig,
    EntropySgdConfig,
    LrDecay,
    ScopingSchedule,
    SgdConfig,
    SgldBaselineConfig,
)

OPTIMIZERS = ("sgd", "adam", "sgld", "entropy-sgd", "entropy-adam")
MNIST_DIR_ENV = "ENTROPY_SGD_MNIST_DIR"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    name: str = "run"

    # objective
    dataset: Literal["mnist", "mnist5k", "csv", "blobs"] = "blobs"
    data_path: Optional[str] = Field(None, validate_default=True)
    train_size: Optional[int] = Field(None, ge=1)
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    stratified: bool = True
    data_seed: int = Field(0, ge=0)
    input_pool: bool = False
    synthetic_n: int = Field(600, ge=2)
    synthetic_dim: int = Field(8, ge=1)
    synthetic_classes: int = Field(3, ge=2)
    hidden_sizes: List[int] = Field(default_factory=lambda: [32])
    dropout: float = Field(0.0, ge=0.0, lt=1.0)

    # optimizer
    optimizer: Literal["sgd", "adam", "sgld", "entropy-sgd", "entropy-adam"] = "sgd"
    eta: float = Field(0.1, gt=0.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    nesterov: bool = True
    lr_decay_milestones: List[int] = Field(default_factory=list)
    lr_decay_factor: float = Field(1.0, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    L: int = Field(20, ge=1)
    eta_prime: float = Field(0.1, gt=0.0)
    epsilon: float = Field(1e-3, ge=0.0)
    alpha: float = Field(0.75, gt=0.0, le=1.0)
    inner_momentum: float = Field(0.0, ge=0.0, lt=1.0)
    rescale_gradient: bool = True
    schedule: Literal["constant", "exponential", "linear", "quadratic", "bounded_exponential"] = "exponential"
    gamma0: float = Field(1e-4, ge=0.0)
    gamma1: float = Field(1e-3, ge=0.0)
    tau: float = Field(1.0, gt=0.0)
    sgld_b: float = Field(0.6, ge=0.0, le=1.0)

    # run
    epochs: int = Field(5, ge=0)
    batch_size: int = Field(128, ge=1)
    steps_per_epoch: Optional[int] = Field(None, ge=1)
    stop_train_loss: Optional[float] = Field(None, gt=0.0)
    seed: int = Field(0, ge=0)
    out_dir: Optional[str] = None
    trace_inner: bool = False
    trace_angle: bool = False

    @field_validator("data_path")
    @classmethod
    def _need_path(cls, value, info):
        dataset = info.data.get("dataset")
        if value is None and dataset == "mnist":
            value = os.environ.get(MNIST_DIR_ENV)
        if value is None and dataset in ("mnist", "csv"):
            hint = f" (or set {MNIST_DIR_ENV})" if dataset == "mnist" else ""
            raise ValueError(f"dataset {dataset!r} needs data_path{hint}")
        return value

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_widths(cls, value):
        if any(h < 1 for h in value):
            raise ValueError("entries must be >= 1")
        return value

    # -- optimizer views -------------------------------------------------
    @property
    def lr_decay(self):
        return LrDecay(tuple(self.lr_decay_milestones), self.lr_decay_factor)

    @property
    def is_entropy(self):
        return self.optimizer.startswith("entropy")

    @property
    def inner_steps(self):
        """Mini-batches consumed per parameter update (L for entropy optimizers)."""
        return self.L if self.is_entropy else 1

    def optimizer_config(self):
        if self.is_entropy:
            return EntropySgdConfig(
                L=self.L, eta=self.eta, eta_prime=self.eta_prime, epsilon=self.epsilon, alpha=self.alpha,
                schedule=ScopingSchedule(self.schedule, self.gamma0, self.gamma1, self.tau),
                momentum=self.momentum, nesterov=self.nesterov, inner_momentum=self.inner_momentum,
                rescale_gradient=self.rescale_gradient, lr_decay=self.lr_decay,
                beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
            )
        if self.optimizer == "sgd":
            return SgdConfig(self.eta, self.momentum, self.nesterov, self.lr_decay)
        if self.optimizer == "adam":
            return AdamConfig(self.eta, self.beta1, self.beta2, self.adam_eps, self.lr_decay)
        return SgldBaselineConfig(self.eta, self.sgld_b, self.epsilon)

    def run_dir(self):
        return Path(self.out_dir) if self.out_dir else Path("runs") / f"{self.name}-s{self.seed}"

    # -- serialisation ---------------------------------------------------
    def to_json(self):
        return json.dumps(self.model_dump(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return validate(json.loads(text))


def validate(data):
    """Build a config from a mapping, turning schema failures into ConfigError."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        keys = sorted({".".join(str(p) for p in err["loc"]) or "<root>" for err in exc.errors()})
        lines = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines), keys) from None


def json_schema():
    return ExperimentConfig.model_json_schema()


def load_config_file(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})", ["<file>"]) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object", ["<root>"])
    return data


def resolve(profile=None, file_data=None, overrides=None):
    """Merge profile, file and CLI values (later wins) and validate."""
    merged = {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; known: {', '.join(sorted(PROFILES))}", ["profile"])
        merged.update(PROFILES[profile])
    merged.update(file_data or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(merged)


# ---------------------------------------------------------------------------
# built-in profiles
# ---------------------------------------------------------------------------

_MNISTFC = {"dataset": "mnist", "hidden_sizes": [1024, 1024], "batch_size": 128}

_ENTROPY = {
    "optimizer": "entropy-sgd",
    "L": 20,
    "eta": 1.0,
    "lr_decay_milestones": [2],
    "lr_decay_factor": 0.1,
    "eta_prime": 0.1,
    "epsilon": 1e-3,
    "alpha": 0.75,
    "schedule": "exponential",
    "gamma0": 1e-4,
    "gamma1": 1e-3,
    "momentum": 0.9,
    "nesterov": True,
    "inner_momentum": 0.9,
    "rescale_gradient": True,
    "epochs": 5,
    "dropout": 0.15,
}

_ADAM = {
    "optimizer": "adam",
    "eta": 1e-3,
    "lr_decay_milestones": [30, 60, 90],
    "lr_decay_factor": 0.2,
    "epochs": 100,
    "dropout": 0.5,
}

_SGLD = {"optimizer": "sgld", "eta": 1.0, "sgld_b": 0.6, "epsilon": 1.0, "epochs": 100, "dropout": 0.5}

_DESK = {"dataset": "mnist5k", "hidden_sizes": [256], "val_fraction": 0.2, "batch_size": 128}

PROFILES = {
    "mnistfc-adam": {"name": "mnistfc-adam", **_MNISTFC, **_ADAM},
    "mnistfc-entropy": {"name": "mnistfc-entropy", **_MNISTFC, **_ENTROPY},
    "mnistfc-sgld": {"name": "mnistfc-sgld", **_MNISTFC, **_SGLD},
    "desk-adam": {"name": "desk-adam", **_DESK, **_ADAM},
    "desk-entropy": {"name": "desk-entropy", **_DESK, **_ENTROPY},
    "desk-sgld": {"name": "desk-sgld", **_DESK, **_SGLD},
    "small-mnistfc-spectrum": {
        "name": "small-mnistfc-spectrum",
        "dataset": "mnist5k",
        "input_pool": True,
        "train_size": 1000,
        "hidden_sizes": [32],
        "optimizer": "adam",
        "eta": 1e-3,
        "epochs": 500,
        "stop_train_loss": 0.02,
        "batch_size": 100,
    },
}
