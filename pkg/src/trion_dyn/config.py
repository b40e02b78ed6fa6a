"""Experiment configuration schema, presets and loading.

Configs are JSON. Unknown keys are rejected everywhere; complex numbers are
written as a number or as ``[re, im]``. A preset is a named config bundle
that a file (or command line) may override key by key.
"""

from __future__ import annotations

import copy
import json
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal, Optional

from pydantic import (BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer,
                      ValidationError, model_validator)

from . import presets as P
from .dissipation import NoiseKind
from .lindblad import HamiltonianKind
from .model import Branch, ModelError, SystemParams, Truncation
from .stochastic import Closure


class ConfigError(ValueError):
    """Config could not be parsed or validated."""


def _to_complex(v: Any) -> complex:
    if isinstance(v, complex):
        return v
    if isinstance(v, bool):
        raise ValueError("expected a number or [re, im]")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return complex(v[0], v[1])
    raise ValueError("expected a number or [re, im]")


def _complex_out(z: complex):
    return [z.real, z.imag] if z.imag else z.real


Complex = Annotated[complex, BeforeValidator(_to_complex), PlainSerializer(_complex_out)]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Kind(str, Enum):
    CLOSED = "closed"
    OPEN_ENSEMBLE = "open-ensemble"
    OPEN_DYADIC = "open-dyadic"
    LINDBLAD = "lindblad"
    SPECTRUM = "spectrum"
    CLASSICAL = "classical"
    SCAN = "scan"
    CONTROL = "control"
    VALIDATE = "validate"


class ParamsModel(Strict):
    W: float
    omega: float = Field(gt=0)
    Omega: float
    chi: Complex = 0.0
    eta: Complex = 0.0
    pump_R: Complex = 0.0
    gamma: float = Field(0.0, ge=0)
    mu_omega: float = Field(0.0, ge=0)
    mu_Omega: float = Field(0.0, ge=0)
    T_a: float = Field(0.0, ge=0)
    T_em: float = Field(0.0, ge=0)
    T_p: float = Field(0.0, ge=0)
    resonance_branch: Branch = Branch.PLUS

    def build(self) -> SystemParams:
        return SystemParams(**{k: getattr(self, k) for k in type(self).model_fields})


class TruncationModel(Strict):
    alpha_max: int = Field(1, ge=0)
    n_max: int = Field(1, ge=0)

    def build(self) -> Truncation:
        return Truncation(self.alpha_max, self.n_max)


class InitialModel(Strict):
    """Either one basis state ``[alpha, n, s]`` or labelled amplitudes
    ``{"001": 1, "110": [0, 1]}``; amplitudes are normalised."""

    state: Optional[tuple[int, int, int]] = (0, 0, 1)
    amplitudes: Optional[dict[str, Complex]] = None

    @model_validator(mode="after")
    def _labels(self):
        if self.amplitudes is not None:
            for key in self.amplitudes:
                if len(key) != 3 or not key.isdigit():
                    raise ValueError(f"amplitude label {key!r} must be three digits 'ans'")
        return self

    def mapping(self) -> dict[tuple[int, int, int], complex]:
        if self.amplitudes is not None:
            return {tuple(int(c) for c in k): v for k, v in self.amplitudes.items()}
        return {tuple(self.state): 1.0}


class TimesModel(Strict):
    t_max: float = Field(gt=0)
    n_points: int = Field(401, ge=2)
    rabi_units: bool = False  # t_max given in units of 2 pi/|Omega_R^(1,1)|


class TrajectoryModel(Strict):
    dt: float = Field(gt=0)
    t_max: float = Field(gt=0)
    n_trajectories: int = Field(ge=1)
    noise_model: NoiseKind = NoiseKind.LINDBLAD_MATCHED
    output_stride: int = Field(1, ge=1)
    closure: Closure = Closure.DYADIC
    refresh_every_step: bool = True


class DyadicModel(Strict):
    noise_model: NoiseKind = NoiseKind.LINDBLAD_MATCHED
    rtol: float = Field(1e-12, gt=0)
    atol: float = Field(1e-14, gt=0)
    compare_analytic: bool = False


class LindbladModel(Strict):
    hamiltonian_kind: HamiltonianKind = HamiltonianKind.RWA_PLUS
    trace_tol: float = Field(1e-8, gt=0)


class AnticrossingModel(Strict):
    detuning_min: float = -20.0  # units of |Omega_R^(1,1)|
    detuning_max: float = 20.0
    n_points: int = Field(401, ge=2)


class SpectrumModel(Strict):
    ratio: Optional[float] = Field(None, gt=0)  # sets |Omega_tilde| = ratio * gamma_ac
    span: float = Field(8.0, gt=0)  # half-width in units of gamma_ac
    n_points: int = Field(1601, ge=3)
    method: Literal["analytic", "numeric", "both"] = "both"
    tail_decays: float = Field(30.0, gt=0)


class ScanModel(Strict):
    n: int = Field(1, ge=1)
    x_min: float = -2.0  # omega - W, units of Omega
    x_max: float = 1.0
    n_points: int = Field(60, ge=1)
    rabi_2: Optional[float] = Field(None, ge=0)  # units of Omega
    rabi_3: Optional[float] = Field(None, ge=0)
    initial: tuple[Complex, Complex] = (0.0, 1.0)
    periods: float = Field(60.0, gt=0)
    threshold: float = Field(1e-4, gt=0)


class SegmentModel(Strict):
    duration: Optional[float] = Field(None, ge=0)
    pulse: Optional[Literal["bell", "full"]] = None
    pump_on: bool = True
    pump_R: Optional[Complex] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.duration is None) == (self.pulse is None):
            raise ValueError("give exactly one of 'duration' or 'pulse'")
        return self


class ControlModel(Strict):
    n: int = Field(1, ge=1)
    segments: list[SegmentModel] = Field(default_factory=lambda: [SegmentModel(pulse="bell")])
    samples_per_segment: int = Field(64, ge=2)
    target: Optional[dict[str, Complex]] = None
    dissipative: bool = False


class ClassicalModel(Strict):
    n_max: int = Field(1, ge=1)
    dissipative: bool = False


class ValidateModel(Strict):
    checks: list[str] = Field(default_factory=list)  # empty: all


class ExperimentConfig(Strict):
    kind: Kind
    params: Optional[ParamsModel] = None
    truncation: TruncationModel = TruncationModel()
    initial: InitialModel = InitialModel()
    times: Optional[TimesModel] = None
    trajectory: Optional[TrajectoryModel] = None
    dyadic: DyadicModel = DyadicModel()
    lindblad: LindbladModel = LindbladModel()
    anticrossing: Optional[AnticrossingModel] = None
    spectrum: SpectrumModel = SpectrumModel()
    scan: ScanModel = ScanModel()
    control: ControlModel = ControlModel()
    classical: ClassicalModel = ClassicalModel()
    validate_: ValidateModel = Field(ValidateModel(), alias="validate")
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: int = Field(1, ge=1)
    write_amplitudes: bool = True

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _needs(self):
        k = self.kind
        if k not in (Kind.VALIDATE, Kind.SPECTRUM) and self.params is None:
            raise ValueError(f"kind '{k.value}' needs a 'params' block")
        if k is Kind.OPEN_ENSEMBLE and self.trajectory is None:
            raise ValueError("kind 'open-ensemble' needs a 'trajectory' block")
        if k in (Kind.CLOSED, Kind.OPEN_DYADIC, Kind.LINDBLAD, Kind.CLASSICAL) \
                and self.times is None and self.anticrossing is None:
            raise ValueError(f"kind '{k.value}' needs a 'times' block")
        if self.params is not None:
            try:
                self.params.build()
                self.truncation.build()
            except ModelError as exc:
                raise ValueError(str(exc)) from exc
        return self

    def dump(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


# ------------------------------------------------------------------ presets

def _params_dict(p: SystemParams) -> dict:
    out = {}
    for name in ("W", "omega", "Omega", "gamma", "mu_omega", "mu_Omega", "T_a", "T_em", "T_p"):
        out[name] = getattr(p, name)
    for name in ("chi", "eta", "pump_R"):
        z = getattr(p, name)
        out[name] = [z.real, z.imag] if z.imag else z.real
    out["resonance_branch"] = p.resonance_branch.value
    return out


def _spectrum_params(ratio: float) -> dict:
    p, _ = P.fig5_system(ratio)
    return _params_dict(p)


def _presets() -> dict[str, dict]:
    return {
        "fig2": {"kind": "closed", "params": _params_dict(P.fig3_params()),
                 "anticrossing": {}, "times": {"t_max": 1.0, "rabi_units": True}},
        "fig3": {"kind": "closed", "params": _params_dict(P.fig3_params()),
                 "initial": {"state": [0, 0, 1]},
                 "times": {"t_max": 2.0, "n_points": 801, "rabi_units": True}},
        "fig4": {"kind": "open-dyadic", "params": _params_dict(P.fig4_params()),
                 "initial": {"state": [0, 0, 1]},
                 "dyadic": {"noise_model": "LINDBLAD_MATCHED", "compare_analytic": True},
                 "times": {"t_max": 8.0, "n_points": 801, "rabi_units": True}},
        "fig4-ensemble": {"kind": "open-ensemble", "params": _params_dict(P.fig4_params()),
                          "initial": {"state": [0, 0, 1]},
                          "trajectory": {"dt": 0.02, "t_max": 50.0, "n_trajectories": 1600,
                                         "output_stride": 25,
                                         "noise_model": "ZERO_T_SINK",
                                         "closure": "mean-field"}},
        "fig5": {"kind": "spectrum", "params": _spectrum_params(5.0),
                 "spectrum": {"ratio": 5.0}},
        "fig6": {"kind": "scan", "params": _params_dict(P.scan_params(0.1)),
                 "scan": {"rabi_2": 0.1, "rabi_3": 0.1}},
        "fig7": {"kind": "scan", "params": _params_dict(P.scan_params(0.5)),
                 "scan": {"rabi_2": 0.5, "rabi_3": 0.5}},
        "control": {"kind": "control", "params": _params_dict(P.control_params()),
                    "truncation": {"alpha_max": 0, "n_max": 1},
                    "initial": {"state": [0, 0, 1]},
                    "control": {"segments": [{"pulse": "bell"}, {"duration": 5.0,
                                                                 "pump_on": False}]}},
        "classical": {"kind": "classical", "params": _params_dict(P.control_params()),
                      "truncation": {"alpha_max": 0, "n_max": 3},
                      "initial": {"state": [0, 0, 1]},
                      "classical": {"n_max": 3},
                      "times": {"t_max": 20.0, "n_points": 401}},
        "lindblad": {"kind": "lindblad", "params": _params_dict(P.equivalence_params(True)),
                     "initial": {"state": [0, 0, 1]},
                     "times": {"t_max": 10.0, "n_points": 401, "rabi_units": True}},
        "determinism": {"kind": "open-ensemble",
                        "params": _params_dict(P.equivalence_params(True)),
                        "initial": {"state": [0, 0, 1]},
                        "trajectory": {"dt": 0.02, "t_max": 2.0, "n_trajectories": 64,
                                       "output_stride": 10, "closure": "dyadic"},
                        "seed": 12345},
        "acceptance": {"kind": "validate"},
    }


PRESET_NAMES = tuple(_presets())


def preset_dict(name: str) -> dict:
    table = _presets()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(table)}")
    return copy.deepcopy(table[name])


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def build_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def parse_json(text: str, source: str = "<config>") -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: JSON parse error at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    return data


def load_config(path: str | Path | None = None, preset: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Preset (if any) <- file (if any) <- explicit overrides, then validate."""
    data: dict = preset_dict(preset) if preset else {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        data = deep_merge(data, parse_json(p.read_text(), str(p)))
    if overrides:
        data = deep_merge(data, overrides)
    if not data:
        raise ConfigError("nothing to run: give --config and/or --preset")
    return build_config(data)


def load_preset(name: str) -> ExperimentConfig:
    return build_config(preset_dict(name))
