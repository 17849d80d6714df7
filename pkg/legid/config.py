import logging
from dataclasses import dataclass, field
from pathlib import Path

from hydra import compose, initialize_config_dir
from hydra.core.config_store import ConfigStore
from hydra.core.global_hydra import GlobalHydra
from omegaconf import MISSING, DictConfig, OmegaConf

from legid.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"

METRICS = ("geodesic", "euclidean", "scaled_euclidean")
SOLVERS = ("CLARABEL", "SCS", "MOSEK")
FAMILIES = ("static", "sinusoidal", "crouch_extend")


@dataclass
class PathsConfig:
    model: str = MISSING
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    out: str = "output"


@dataclass
class FilterConfig:
    enabled: bool = False
    order: int = 5
    cutoff_hz: float = 10.0
    filter_velocity: bool = True
    filter_torque: bool = True
    derive_acceleration: bool = True


@dataclass
class IdentifyConfig:
    gamma: float = 1e-2
    metric: str = "geodesic"
    epsilon: float = 1e-6
    friction: bool = True
    solver: str = "CLARABEL"
    solver_tol: float = 1e-9
    feas_tol: float = 1e-7
    column_scaling: bool = True
    svd_cutoff: float = 1e-8
    sign_deadband: float = 1e-3
    projector_cutoff: float = 1e-8
    baseline: bool = True
    workers: int = 1


@dataclass
class SplitConfig:
    ratio: float | None = None
    holdout: list[str] = field(default_factory=list)
    seed: int = 0


@dataclass
class SimulateConfig:
    family: str = "sinusoidal"
    duration: float = 20.0
    rate_hz: float = 100.0
    seed: int = 0
    torque_noise: float = 0.0
    velocity_noise: float = 0.0
    contacts: list[str] | None = None
    viscous: float = 0.05
    coulomb: float = 0.1
    amplitude: float = 1.0
    prior_corruption: float = 0.0
    tag: str | None = None


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    identify: IdentifyConfig = field(default_factory=IdentifyConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    seed: int = 0
    sweep_sizes: list[int] = field(default_factory=lambda: [100, 300, 1000, 3000, 10000])
    wandb_project: str | None = None
    wandb_entity: str | None = None


def register_configs():
    cs = ConfigStore.instance()
    cs.store(group="paths", name="base_paths", node=PathsConfig)
    cs.store(group="identify", name="base_identify", node=IdentifyConfig)
    cs.store(group="filter", name="base_filter", node=FilterConfig)
    cs.store(group="split", name="base_split", node=SplitConfig)
    cs.store(group="simulate", name="base_simulate", node=SimulateConfig)
    cs.store(name="base_config", node=RunConfig)


def load_run_config(config_name: str = "config", overrides: list[str] | None = None) -> DictConfig:
    """Compose `legid/configs/<config_name>.yaml` with hydra overrides, on top of the structured defaults."""
    register_configs()
    GlobalHydra.instance().clear()
    try:
        with initialize_config_dir(version_base=None, config_dir=str(CONFIG_DIR)):
            cfg = compose(config_name=config_name, overrides=list(overrides or []))
    except Exception as exc:
        raise ConfigError(f"cannot compose config {config_name!r}: {exc}") from exc
    # Take defaults
    default_cfg = OmegaConf.structured(RunConfig())
    return OmegaConf.merge(default_cfg, cfg)


def validate_run_config(cfg: DictConfig) -> DictConfig:
    ident = cfg.identify
    if ident.gamma < 0:
        raise ConfigError(f"identify.gamma must be >= 0, got {ident.gamma}")
    if ident.epsilon < 0:
        raise ConfigError(f"identify.epsilon must be >= 0, got {ident.epsilon}")
    if ident.metric not in METRICS:
        raise ConfigError(f"identify.metric must be one of {METRICS}, got {ident.metric!r}")
    if ident.solver.upper() not in SOLVERS:
        raise ConfigError(f"identify.solver must be one of {SOLVERS}, got {ident.solver!r}")
    if cfg.split.ratio is not None and not 0.0 <= cfg.split.ratio <= 1.0:
        raise ConfigError(f"split.ratio must lie in [0, 1], got {cfg.split.ratio}")
    if cfg.simulate.family not in FAMILIES:
        raise ConfigError(f"simulate.family must be one of {FAMILIES}, got {cfg.simulate.family!r}")
    if ident.workers < 1:
        raise ConfigError(f"identify.workers must be >= 1, got {ident.workers}")
    if not 0.0 <= cfg.simulate.prior_corruption < 1.0:
        raise ConfigError(f"simulate.prior_corruption must lie in [0, 1), got {cfg.simulate.prior_corruption}")
    if cfg.filter.order < 1 or cfg.filter.cutoff_hz <= 0:
        raise ConfigError(f"invalid filter settings: order={cfg.filter.order}, cutoff_hz={cfg.filter.cutoff_hz}")
    return cfg
