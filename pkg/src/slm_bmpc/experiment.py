"""Experiment configuration and assembly of a complete simulation setup.

A configuration is a YAML mapping with one section per concern::

    grid:        nx, ny, dx, dy, dz, c, k_node, k_sub
    scan:        raster, velocity, ts, footprint_radius, footprint_profile, std_fraction
    reference:   power, resample, diagonal
    control:     horizon, Q, R, u_min, u_max, du_min, du_max, u_before,
                 kp, kp_grid, qp_tol, qp_max_iter, qp_method
    noise:       input_fraction, output_fraction
    estimator:   sigma_vbar, sigma_wbar, tol
    uncertainty: cc_range, ksub_range, b_range
    run:         maxit, seed, controllers, cache_dir

Every key is optional; missing keys take the defaults below.  ``k_sub`` and
``k_node`` default to ``20 * dz``, ``kp`` to a grid search over ``kp_grid``.
"""

from __future__ import annotations

import dataclasses
import logging
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import estimator as est
from .controllers import MODES, ControllerConfig, tune_kp
from .lifted_model import LiftedSystem, build_lifted
from .plant_sim import LayerTrace, TruePlant, UncertaintySpec, perturb, run_experiment
from .qp_solver import InputBounds
from .scan_path import Footprint, ScanPath, diagonal, generate_reference, spiral_in
from .thermal_model import GridGeometry, GridModel, ThermalParams, assemble_model

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class GridSection:
    nx: int = 15
    ny: int = 15
    dx: float = 2e-5
    dy: float = 2e-5
    dz: float = 5e-5
    c: float = 8.5e-8
    k_node: float | None = None
    k_sub: float | None = None


@dataclass(frozen=True)
class ScanSection:
    raster: float = 6e-5
    velocity: float = 0.5
    ts: float = 1e-5
    footprint_radius: float = 3e-5
    footprint_profile: str = "gaussian"
    std_fraction: float = 0.5


@dataclass(frozen=True)
class ReferenceSection:
    power: float = 20.0
    resample: bool = True
    diagonal: str = "corners"


@dataclass(frozen=True)
class ControlSection:
    horizon: int = 20
    Q: float = 1.0
    R: float = 0.1
    u_min: float = 0.0
    u_max: float = 20.0
    du_min: float = -2.0
    du_max: float = 2.0
    u_before: float | None = 0.0
    kp: float | None = None
    kp_grid: tuple[float, ...] = (0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05)
    qp_tol: float = 1e-8
    qp_max_iter: int = 500
    qp_method: str = "active_set"


@dataclass(frozen=True)
class NoiseSection:
    # standard deviations as fractions of the largest input and reference value
    input_fraction: float = 0.02
    output_fraction: float = 0.02


@dataclass(frozen=True)
class EstimatorSection:
    sigma_vbar: float = 0.8
    sigma_wbar: float = 70.0
    tol: float = 1e-9


@dataclass(frozen=True)
class UncertaintySection:
    cc_range: tuple[float, float] = (-0.3, 0.0)
    ksub_range: tuple[float, float] = (0.0, 0.3)
    b_range: tuple[float, float] = (0.0, 0.3)


@dataclass(frozen=True)
class RunSection:
    maxit: int = 10
    seed: int = 0
    controllers: tuple[str, ...] = ("bmpc", "proportional", "vanilla_mpc")
    cache_dir: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    scan: ScanSection = field(default_factory=ScanSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    control: ControlSection = field(default_factory=ControlSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    uncertainty: UncertaintySection = field(default_factory=UncertaintySection)
    run: RunSection = field(default_factory=RunSection)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some fields changed, e.g. ``replace(run={"seed": 3})``."""
        out = self
        for name, changes in sections.items():
            out = dataclasses.replace(out, **{name: dataclasses.replace(getattr(out, name), **changes)})
        validate(out)
        return out

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def geometry(self) -> GridGeometry:
        g = self.grid
        return GridGeometry(g.nx, g.ny, g.dx, g.dy, g.dz)

    def thermal_params(self) -> ThermalParams:
        g = self.grid
        base = ThermalParams.from_layer(g.dz, g.c, g.k_node)
        return ThermalParams(k_node=base.k_node, k_sub=base.k_sub if g.k_sub is None else g.k_sub, c=g.c)

    def footprint(self) -> Footprint:
        s = self.scan
        return Footprint(s.footprint_radius, s.footprint_profile, s.std_fraction)

    def bounds(self) -> InputBounds:
        c = self.control
        return InputBounds(c.u_min, c.u_max, c.du_min, c.du_max, c.u_before)

    def controller(self, mode: str, kp: float = 0.0) -> ControllerConfig:
        c = self.control
        return ControllerConfig(mode=mode, horizon=c.horizon, Q=c.Q, R=c.R, bounds=self.bounds(),
                                kp=kp, qp_tol=c.qp_tol, qp_max_iter=c.qp_max_iter,
                                qp_method=c.qp_method)

    def uncertainty_spec(self, seed: int | None = None) -> UncertaintySpec:
        u = self.uncertainty
        return UncertaintySpec(u.cc_range, u.ksub_range, u.b_range,
                               self.run.seed if seed is None else seed)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(value, inner, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
        if not np.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported field type {tp!r}")


def _section(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def from_dict(data: dict | None) -> ExperimentConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    hints = typing.get_type_hints(ExperimentConfig)
    unknown = sorted(set(data) - set(hints))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    cfg = ExperimentConfig(**{k: _section(hints[k], data.get(k), k) for k in hints})
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML config.  Raises FileNotFoundError or ConfigError."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return from_dict(data)


def _check(cond: bool, where: str, msg: str):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def validate(cfg: ExperimentConfig) -> None:
    """Run every module's preconditions without building anything large."""
    def wrap(where, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    geom = wrap("grid", cfg.geometry)
    wrap("grid", cfg.thermal_params)
    wrap("scan", cfg.footprint)
    s = cfg.scan
    _check(s.velocity > 0, "scan.velocity", "must be positive")
    _check(s.ts > 0, "scan.ts", "must be positive")
    wrap("scan.raster", lambda: spiral_in(geom, s.raster, s.velocity, s.ts))
    _check(cfg.reference.power >= 0, "reference.power", "must be nonnegative")
    _check(cfg.reference.diagonal in ("corners", "centers"), "reference.diagonal",
           "must be corners or centers")
    c = cfg.control
    wrap("control", cfg.bounds)
    _check(c.R > 0, "control.R", "must be positive")
    _check(c.Q >= 0, "control.Q", "must be nonnegative")
    _check(c.horizon >= 1, "control.horizon", "must be at least 1")
    _check(c.kp is None or c.kp >= 0, "control.kp", "must be nonnegative")
    _check(len(c.kp_grid) > 0 and min(c.kp_grid) >= 0, "control.kp_grid",
           "needs at least one nonnegative gain")
    _check(c.qp_tol > 0, "control.qp_tol", "must be positive")
    _check(c.qp_max_iter >= 1, "control.qp_max_iter", "must be at least 1")
    _check(c.qp_method in ("active_set", "admm"), "control.qp_method", "must be active_set or admm")
    n = cfg.noise
    _check(n.input_fraction >= 0, "noise.input_fraction", "must be nonnegative")
    _check(n.output_fraction >= 0, "noise.output_fraction", "must be nonnegative")
    e = cfg.estimator
    _check(e.sigma_vbar >= 0, "estimator.sigma_vbar", "must be nonnegative")
    _check(e.sigma_wbar > 0, "estimator.sigma_wbar", "must be positive")
    _check(e.tol > 0, "estimator.tol", "must be positive")
    wrap("uncertainty", cfg.uncertainty_spec)
    r = cfg.run
    _check(r.maxit >= 1, "run.maxit", "must be at least 1")
    _check(r.seed >= 0, "run.seed", "must be nonnegative")
    _check(len(r.controllers) > 0, "run.controllers", "must not be empty")
    for i, mode in enumerate(r.controllers):
        _check(mode in MODES, f"run.controllers[{i}]", f"unknown controller {mode!r}; choose from {MODES}")


@dataclass
class Setup:
    """Everything shared by the runs of one configuration."""

    config: ExperimentConfig
    model: GridModel
    path: ScanPath
    lifted: LiftedSystem
    yd: np.ndarray
    V: float
    W: float
    _gains: dict = field(default_factory=dict, repr=False)

    @property
    def nu(self) -> int:
        return len(self.yd)

    def gains(self, sigma_vbar: float | None = None) -> est.GainSchedule:
        e = self.config.estimator
        sigma = e.sigma_vbar if sigma_vbar is None else float(sigma_vbar)
        if sigma not in self._gains:
            noise = est.build_covariances(self.lifted.G, self.V, self.W, sigma, e.sigma_wbar)
            self._gains[sigma] = est.cached_gain_schedule(self.lifted.G, noise, self.config.run.cache_dir,
                                                         tol=e.tol)
        return self._gains[sigma]

    def plant(self, seed: int) -> TruePlant:
        return perturb(self.model, self.config.uncertainty_spec(seed), self.V, self.W)


def build_setup(cfg: ExperimentConfig, yd=None) -> Setup:
    """Model on the spiral, lifted matrix, reference and noise levels.

    ``yd`` overrides the reference generated on the diagonal scan.
    """
    geom, params, fp = cfg.geometry(), cfg.thermal_params(), cfg.footprint()
    s = cfg.scan
    path = spiral_in(geom, s.raster, s.velocity, s.ts)
    model = assemble_model(geom, params, path, s.ts, fp)
    lifted = build_lifted(model)
    if yd is None:
        diag = assemble_model(geom, params, diagonal(geom, s.velocity, s.ts, cfg.reference.diagonal),
                              s.ts, fp)
        yd = generate_reference(diag, cfg.reference.power, nu=model.nu,
                                resample_to_nu=cfg.reference.resample).yd
    yd = np.asarray(yd, dtype=float)
    if yd.shape != (model.nu,):
        raise ConfigError(f"reference: length {yd.shape} does not match the scan ({model.nu} samples)")
    V = (cfg.noise.input_fraction * cfg.control.u_max) ** 2
    W = (cfg.noise.output_fraction * float(np.max(np.abs(yd)))) ** 2
    return Setup(config=cfg, model=model, path=path, lifted=lifted, yd=yd, V=V, W=W)


def run_controller(setup: Setup, mode: str, seed: int | None = None, kp: float | None = None,
                   sigma_vbar: float | None = None, maxit: int | None = None,
                   plant: TruePlant | None = None) -> list[LayerTrace]:
    """One seeded closed-loop run; the plant and noise depend on ``seed`` only."""
    cfg = setup.config
    seed = cfg.run.seed if seed is None else seed
    maxit = cfg.run.maxit if maxit is None else maxit
    plant = setup.plant(seed) if plant is None else plant
    if mode == "proportional" and kp is None:
        kp = cfg.control.kp if cfg.control.kp is not None else select_kp(setup, seed, plant=plant)[0]
    ctrl = cfg.controller(mode, kp or 0.0)
    return run_experiment(plant, setup.yd, setup.lifted, setup.gains(sigma_vbar), ctrl,
                          maxit=maxit, seed=seed)


def select_kp(setup: Setup, seed: int | None = None, grid=None, plant: TruePlant | None = None):
    """Grid-search the proportional gain on the seeded plant; returns ``(kp, table)``."""
    cfg = setup.config
    seed = cfg.run.seed if seed is None else seed
    plant = setup.plant(seed) if plant is None else plant
    grid = cfg.control.kp_grid if grid is None else grid

    def norms(kp):
        traces = run_controller(setup, "proportional", seed, kp=kp, plant=plant)
        return [tr.err_norm for tr in traces]

    return tune_kp(norms, grid)
