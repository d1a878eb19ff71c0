"""
config.py

Experiment configuration: defaults, environment settings, and validation of
a parsed experiment file into an ExperimentConfig.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional

from dotenv import load_dotenv

from src.core.kernels import KernelSpec
from src.core.targets import TargetSpec
from src.parsers.config_parser import apply_overrides, deep_merge, parse_config
from src.utils.errors import ConfigError, SVGDError

logger = logging.getLogger(__name__)

STEP_POLICIES = ("constant", "list", "budget")
REFERENCE_MODES = ("ensemble", "quadrature")

DEFAULTS: Dict[str, Any] = {
    "name": "reference",
    "target": {"family": "Gaussian", "mean": 0.0, "covariance": 1.0},
    "kernel": {"family": "GaussianRBF", "bandwidth": 1.0, "imq_exponent": 0.5},
    "init": {"family": "Gaussian", "mean": 0.0, "covariance": 4.0, "n": 64, "seed": 0},
    "alpha": 2.0,
    "steps": {"policy": "constant", "eps": 1.0 / 30.0, "rounds": 50, "list": [],
              "delta": 0.1, "min_rounds": 1},
    "reference": {"mode": "ensemble", "n_ref": None, "factor": 10, "seed": 1,
                  "nodes": 2001, "span_sd": 12.0},
    "moments": {"mc_samples": 50000, "seed": 11, "tolerance": 1e-2},
    "verify": {
        "kernel_grid": True,
        "kernel_box": [-5.0, 5.0],
        "stein_zero_mean": True,
        "psd_sets": 20,
        "w1_triples": 1000,
        "ksd_w1_pairs": 1000,
        "contraction_pairs": 20,
        "descent": True,
        "trajectory": True,
        "hard_tolerance": 1e-9,
        "soft_tolerance": 1e-4,
        "seed": 7,
    },
    "sweep": {"n_list": [16, 64, 256, 1024], "repeats": 1, "delta": 0.1, "min_rounds": 1},
    "output": {"dir": None, "checkpoints": False, "densities": False, "plot": False, "pdf": False},
    "workers": None,
}


def get_setting(key: str, default: Optional[str] = None) -> Optional[str]:
    """Read an ``SVGD_*`` environment setting after loading ``.env``."""
    load_dotenv()
    return os.getenv(f"SVGD_{key.upper()}", default)


def default_output_dir() -> str:
    return get_setting("output_dir", "output")


@dataclass
class ExperimentConfig:
    """A validated experiment."""
    name: str
    target: TargetSpec
    kernel: KernelSpec
    init: TargetSpec
    n: int
    seed: int
    alpha: float
    step_policy: str
    eps: float
    rounds: int
    eps_list: List[float]
    delta: float
    min_rounds: int
    reference_mode: str
    n_ref: int
    ref_seed: int
    nodes: int
    span_sd: float
    mc_samples: int
    mc_seed: int
    mc_tolerance: float
    verify: Dict[str, Any]
    sweep: Dict[str, Any]
    output_dir: str
    outputs: Dict[str, Any]
    workers: Optional[int]
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return self.target.dimension

    def fixed_steps(self) -> Optional[List[float]]:
        """The step list for the constant and list policies, None for budget."""
        if self.step_policy == "constant":
            return [self.eps] * self.rounds
        if self.step_policy == "list":
            return list(self.eps_list)
        return None


def _section(raw: Mapping[str, Any], name: str) -> Dict[str, Any]:
    value = raw.get(name)
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(value)


def validate(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Turn a merged config tree into an ExperimentConfig (ConfigError on any problem)."""
    try:
        target = TargetSpec.from_config(_section(raw, "target"))
        init_section = _section(raw, "init")
        init_section.setdefault("dimension", target.dimension)
        init = TargetSpec.from_config(init_section)
        kernel = KernelSpec.from_config(_section(raw, "kernel"))
        steps = _section(raw, "steps")
        reference = _section(raw, "reference")
        moments = _section(raw, "moments")
        output = _section(raw, "output")

        n = int(init_section.get("n", 64))
        alpha = float(raw.get("alpha", 2.0))
        policy = str(steps.get("policy", "constant"))
        eps = float(steps.get("eps", 0.0))
        rounds = int(steps.get("rounds", 0))
        eps_list = [float(e) for e in steps.get("list") or []]
        mode = str(reference.get("mode", "ensemble"))
        n_ref = reference.get("n_ref")
        n_ref = int(n_ref) if n_ref is not None else int(reference.get("factor", 10)) * n
        workers = raw.get("workers")
        workers = int(workers) if workers is not None else None
    except SVGDError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config value: {e}") from e

    if init.dimension != target.dimension:
        raise ConfigError(f"init dimension {init.dimension} differs from target dimension {target.dimension}")
    if n < 1 or n_ref < 1:
        raise ConfigError("particle counts must be positive")
    if not alpha > 1:
        raise ConfigError(f"alpha must exceed 1, got {alpha}")
    if policy not in STEP_POLICIES:
        raise ConfigError(f"steps.policy must be one of {STEP_POLICIES}, got {policy!r}")
    if rounds < 0:
        raise ConfigError(f"steps.rounds must be nonnegative, got {rounds}")
    if eps < 0 or any(e < 0 for e in eps_list):
        raise ConfigError("step sizes must be nonnegative")
    if mode not in REFERENCE_MODES:
        raise ConfigError(f"reference.mode must be one of {REFERENCE_MODES}, got {mode!r}")
    if mode == "quadrature" and target.dimension != 1:
        raise ConfigError("quadrature reference mode is one-dimensional")
    delta = float(steps.get("delta", 0.1))
    if not 0 < delta <= 1:
        raise ConfigError(f"steps.delta must lie in (0, 1], got {delta}")

    return ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        target=target, kernel=kernel, init=init, n=n,
        seed=int(init_section.get("seed", 0)),
        alpha=alpha, step_policy=policy, eps=eps, rounds=rounds, eps_list=eps_list,
        delta=delta, min_rounds=int(steps.get("min_rounds", 1)),
        reference_mode=mode, n_ref=n_ref, ref_seed=int(reference.get("seed", 1)),
        nodes=int(reference.get("nodes", 2001)), span_sd=float(reference.get("span_sd", 12.0)),
        mc_samples=int(moments.get("mc_samples", 50000)), mc_seed=int(moments.get("seed", 11)),
        mc_tolerance=float(moments.get("tolerance", 1e-2)),
        verify=_section(raw, "verify"), sweep=_section(raw, "sweep"),
        output_dir=output.get("dir") or default_output_dir(),
        outputs=output, workers=workers, raw=dict(raw),
    )


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                seed: Optional[int] = None) -> ExperimentConfig:
    """
    Load an experiment.

    Args:
        path: JSON experiment file; None uses DEFAULTS alone.
        overrides: ``key.path=value`` strings applied after the file.
        seed: Overrides ``init.seed`` when given.

    Returns:
        ExperimentConfig: The validated configuration.
    """
    load_dotenv()
    raw = deep_merge(DEFAULTS, parse_config(path) if path else {})
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["init"]["seed"] = int(seed)
    if raw.get("workers") is None and os.getenv("SVGD_WORKERS"):
        raw["workers"] = os.getenv("SVGD_WORKERS")
    config = validate(raw)
    logger.info("loaded experiment %r (d=%d, n=%d, policy=%s)", config.name, config.dimension,
                config.n, config.step_policy)
    return config
