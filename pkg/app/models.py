"""
Typed schemas for configuration documents, run settings and evaluation reports.

Config documents are YAML files validated against these models; unknown keys are rejected.
Units are part of the field names.
"""
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple
import math

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------- airframe

class InertialConfig(StrictModel):
    mass_kg: float = Field(3.364, gt=0)
    ixx_kg_m2: float = 1.229
    iyy_kg_m2: float = 0.1702
    izz_kg_m2: float = 0.8808
    ixz_kg_m2: float = 0.9343
    gravity_m_s2: float = Field(9.81, gt=0)

    def inertia_matrix(self) -> List[List[float]]:
        return [
            [self.ixx_kg_m2, 0.0, -self.ixz_kg_m2],
            [0.0, self.iyy_kg_m2, 0.0],
            [-self.ixz_kg_m2, 0.0, self.izz_kg_m2],
        ]

    @model_validator(mode="after")
    def _positive_definite(self):
        xz_det = self.ixx_kg_m2 * self.izz_kg_m2 - self.ixz_kg_m2 ** 2
        if self.ixx_kg_m2 <= 0 or self.iyy_kg_m2 <= 0 or xz_det <= 0:
            raise ValueError("inertia tensor is not positive definite")
        return self


class DragCoefficients(StrictModel):
    """C_D = c0 + alpha a + alpha2 a^2 + beta b + beta2 b^2 + q q_hat + delta_e de + delta_e2 de^2"""
    c0: float = 0.0197
    alpha: float = 0.0791
    alpha2: float = 1.0555
    beta: float = -0.0058
    beta2: float = 0.1478
    q: float = 0.0
    delta_e: float = 0.0
    delta_e2: float = 0.0633


class LiftCoefficients(StrictModel):
    c0: float = 0.0867
    alpha: float = 4.0203
    q: float = 3.87
    delta_e: float = 0.2781


class PitchCoefficients(StrictModel):
    c0: float = 0.0227
    alpha: float = -0.4629
    q: float = -1.3012
    delta_e: float = -0.2292


class LateralCoefficients(StrictModel):
    """Linear lateral coefficient: c0 + beta b + p p_hat + r r_hat + delta_a da."""
    c0: float = 0.0
    beta: float = 0.0
    p: float = 0.0
    r: float = 0.0
    delta_a: float = 0.0


class BlendingConfig(StrictModel):
    steepness: float = Field(50.0, gt=0)
    cutoff_rad: float = 0.4712
    pitch_flat_plate_gain: float = -0.5

    @field_validator("cutoff_rad")
    @classmethod
    def _cutoff_in_range(cls, value: float) -> float:
        if not 0.0 < value < math.pi / 2:
            raise ValueError("cutoff_rad must lie in (0, pi/2)")
        return value


class AeroCoefficientSet(StrictModel):
    wing_area_m2: float = Field(0.75, gt=0)
    wingspan_m: float = Field(2.1, gt=0)
    chord_m: float = Field(0.3571, gt=0)
    air_density_kg_m3: float = Field(1.225, gt=0)
    blending: BlendingConfig = BlendingConfig()
    drag: DragCoefficients = DragCoefficients()
    lift: LiftCoefficients = LiftCoefficients()
    pitch: PitchCoefficients = PitchCoefficients()
    side: LateralCoefficients = LateralCoefficients(beta=-0.2239, p=-0.1374, r=0.0839, delta_a=0.0433)
    roll: LateralCoefficients = LateralCoefficients(beta=-0.0849, p=-0.4042, r=0.0555, delta_a=0.1202)
    yaw: LateralCoefficients = LateralCoefficients(beta=0.0283, p=0.0044, r=-0.072, delta_a=-0.0034)


class PropulsionConfig(StrictModel):
    motor_constant_m_s: float = Field(40.0, gt=0)
    disc_area_m2: float = Field(0.1018, gt=0)
    efficiency: float = Field(1.0, gt=0, le=2)
    k_omega: float = Field(797.1268, gt=0)
    k_q: float = Field(1.1871e-6, gt=0)
    air_density_kg_m3: float = Field(1.225, gt=0)


class ActuatorConfig(StrictModel):
    max_deflection_deg: float = Field(30.0, gt=0)
    max_rate_deg_s: float = Field(200.0, gt=0)
    natural_frequency_rad_s: float = Field(100.0, gt=0)
    damping_ratio: float = Field(1.0 / math.sqrt(2.0), gt=0)
    substeps: int = Field(10, ge=1)
    throttle_time_constant_s: float = Field(0.2, gt=0)


class AirframeConfig(StrictModel):
    """Default values describe a Skywalker-X8-class flying wing; they are not authoritative."""
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "skywalker-x8"
    inertial: InertialConfig = InertialConfig()
    aero: AeroCoefficientSet = AeroCoefficientSet()
    propulsion: PropulsionConfig = PropulsionConfig()
    actuators: ActuatorConfig = ActuatorConfig()

    @model_validator(mode="before")
    @classmethod
    def _shared_density(cls, data):
        # a top-level density is copied into the aero and propulsion sections
        if isinstance(data, dict) and "air_density_kg_m3" in data:
            data = dict(data)
            rho = data.pop("air_density_kg_m3")
            for section in ("aero", "propulsion"):
                sub = dict(data.get(section) or {})
                sub.setdefault("air_density_kg_m3", rho)
                data[section] = sub
        return data


# ---------------------------------------------------------------- wind

class TurbulenceSeverity(str, Enum):
    NONE = "none"
    LIGHT = "light"
    MODERATE = "moderate"
    SEVERE = "severe"


class DrydenConfig(StrictModel):
    altitude_m: float = Field(100.0, gt=0)
    steady_wind_m_s: Dict[TurbulenceSeverity, float] = {
        TurbulenceSeverity.NONE: 0.0,
        TurbulenceSeverity.LIGHT: 7.0,
        TurbulenceSeverity.MODERATE: 15.0,
        TurbulenceSeverity.SEVERE: 23.0,
    }
    elevation_limit_deg: float = Field(15.0, ge=0, le=90)
    nominal_airspeed_m_s: float = Field(18.0, gt=0)
    airspeed_resolution_m_s: float = Field(0.05, gt=0)
    wingspan_m: float = Field(2.1, gt=0)
    # explicit overrides for the altitude-derived values
    scale_lengths_m: Optional[Tuple[float, float, float]] = None
    intensities_m_s: Optional[Dict[TurbulenceSeverity, Tuple[float, float, float]]] = None


class WindSetting(StrictModel):
    severity: TurbulenceSeverity = TurbulenceSeverity.NONE
    steady_magnitude_m_s: float = Field(0.0, ge=0)
    scale_lengths_m: Tuple[float, float, float] = (200.0, 200.0, 50.0)
    intensities_m_s: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    elevation_limit_deg: float = 15.0
    nominal_airspeed_m_s: float = 18.0
    airspeed_resolution_m_s: float = 0.05
    wingspan_m: float = 2.1
    seed: int = 0


# ---------------------------------------------------------------- environment

class InitialConditionRanges(StrictModel):
    roll_deg: float = 150.0
    pitch_deg: float = 45.0
    yaw_deg: float = 60.0
    rate_deg_s: float = 60.0
    alpha_deg: float = 26.0
    beta_deg: float = 26.0
    airspeed_m_s: Tuple[float, float] = (12.0, 30.0)


class TargetRanges(StrictModel):
    roll_deg: float = 60.0
    pitch_deg: float = 30.0
    airspeed_m_s: Tuple[float, float] = (12.0, 30.0)


class ObservationConfig(StrictModel):
    history_length: int = Field(5, ge=1)
    command_average_window: int = Field(5, ge=1)
    include_aero_angles: bool = False
    use_target_values: bool = False
    normalize: bool = True
    clip: float = Field(10.0, gt=0)


class RewardConfig(StrictModel):
    roll_scale: float = 3.3
    pitch_scale: float = 2.25
    airspeed_scale: float = 25.0
    command_scale: float = 60.0
    roll_weight: float = 0.3
    pitch_weight: float = 0.3
    airspeed_weight: float = 0.3
    command_weight: float = 0.1
    command_window: int = Field(5, ge=1)


class EnvironmentConfig(StrictModel):
    step_dt_s: float = Field(0.01, gt=0)
    max_steps: int = Field(2000, ge=1)
    initial_altitude_m: float = Field(500.0, gt=0)
    initial_throttle: float = Field(0.2, ge=0, le=1)
    divergence_speed_m_s: float = Field(120.0, gt=0)
    min_range_fraction: float = Field(0.1, gt=0, le=1)
    initial_ranges: InitialConditionRanges = InitialConditionRanges()
    target_ranges: TargetRanges = TargetRanges()
    observation: ObservationConfig = ObservationConfig()
    reward: RewardConfig = RewardConfig()
    wind_severity: TurbulenceSeverity = TurbulenceSeverity.NONE


class CurriculumConfig(StrictModel):
    enabled: bool = True
    initial_difficulty: float = Field(0.0, ge=0, le=1)
    increment: float = Field(0.1, gt=0, le=1)
    promotion_threshold: float = -0.1
    window: int = Field(100, ge=1)


# ---------------------------------------------------------------- learning

class NetworkSpec(StrictModel):
    n_components: int = Field(12, ge=1)
    history_length: int = Field(5, ge=1)
    conv_filters: int = Field(3, ge=1)
    hidden_sizes: Tuple[int, ...] = (64, 64)
    action_dim: int = Field(3, ge=1)
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    initial_log_std: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.n_components * self.history_length

    @property
    def feature_dim(self) -> int:
        return self.n_components * self.conv_filters


class PpoHyperparams(StrictModel):
    n_actors: int = Field(6, ge=1)
    n_steps: int = Field(128, ge=1)
    gamma: float = Field(0.99, gt=0, le=1)
    gae_lambda: float = Field(0.95, gt=0, le=1)
    clip_range: float = Field(0.2, gt=0, lt=1)
    n_epochs: int = Field(4, ge=1)
    n_minibatches: int = Field(4, ge=1)
    learning_rate: float = Field(2.5e-4, gt=0)
    linear_lr_decay: bool = True
    value_coef: float = Field(0.5, ge=0)
    entropy_coef: float = Field(0.01, ge=0)
    max_grad_norm: float = Field(0.5, gt=0)
    adam_beta1: float = Field(0.9, gt=0, lt=1)
    adam_beta2: float = Field(0.999, gt=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    total_steps: int = Field(2_000_000, ge=0)
    checkpoint_interval: int = Field(50, ge=1)
    log_interval: int = Field(10, ge=1)

    @property
    def batch_size(self) -> int:
        return self.n_actors * self.n_steps


class TrainingConfig(StrictModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    environment: EnvironmentConfig = EnvironmentConfig()
    network: NetworkSpec = NetworkSpec()
    ppo: PpoHyperparams = PpoHyperparams()
    curriculum: CurriculumConfig = CurriculumConfig()


class PidGains(StrictModel):
    kp_airspeed: float = 0.5
    ki_airspeed: float = 0.1
    kp_roll: float = 1.0
    ki_roll: float = 0.0
    kd_roll: float = 0.5
    kp_pitch: float = -4.0
    ki_pitch: float = -0.75
    kd_pitch: float = -0.1


class SuccessBounds(StrictModel):
    roll_deg: float = 5.0
    pitch_deg: float = 5.0
    airspeed_m_s: float = 2.0
    dwell_steps: int = Field(100, ge=1)


class EvaluationConfig(StrictModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    episodes_per_setting: int = Field(100, ge=1)
    horizon_steps: int = Field(1500, ge=1)
    settings: List[TurbulenceSeverity] = list(TurbulenceSeverity)
    angle_deviation_deg: Tuple[float, float] = (20.0, 30.0)
    airspeed_deviation_m_s: Tuple[float, float] = (3.0, 4.0)
    bounds: SuccessBounds = SuccessBounds()
    dryden: DrydenConfig = DrydenConfig()
    environment: EnvironmentConfig = EnvironmentConfig(max_steps=1500)
    pid: PidGains = PidGains()


# ---------------------------------------------------------------- reports

class StateMetrics(BaseModel):
    success: bool
    rise_time_s: Optional[float] = None
    rise_time_degenerate: bool = False
    settling_time_s: Optional[float] = None
    overshoot_pct: Optional[float] = None


class MetricReport(BaseModel):
    roll: StateMetrics
    pitch: StateMetrics
    airspeed: StateMetrics
    success: bool
    diverged: bool = False
    control_variation_per_s: Optional[float] = None

    def states(self) -> Dict[str, StateMetrics]:
        return {"roll": self.roll, "pitch": self.pitch, "airspeed": self.airspeed}


class AggregateRow(BaseModel):
    setting: TurbulenceSeverity
    controller: str
    episodes: int
    success_roll_pct: float
    success_pitch_pct: float
    success_airspeed_pct: float
    success_all_pct: float
    rise_time_roll_s: Optional[float] = None
    rise_time_pitch_s: Optional[float] = None
    rise_time_airspeed_s: Optional[float] = None
    settling_time_roll_s: Optional[float] = None
    settling_time_pitch_s: Optional[float] = None
    settling_time_airspeed_s: Optional[float] = None
    overshoot_roll_pct: Optional[float] = None
    overshoot_pitch_pct: Optional[float] = None
    overshoot_airspeed_pct: Optional[float] = None
    control_variation_per_s: Optional[float] = None


class RunConfig(BaseModel):
    subcommand: Literal["train", "evaluate", "simulate", "compare"]
    airframe_path: Optional[str] = None
    training_path: Optional[str] = None
    evaluation_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    schedule_path: Optional[str] = None
    controller: Literal["rl", "pid"] = "pid"
    settings: List[TurbulenceSeverity] = [TurbulenceSeverity.NONE]
    seed: int = 0
    output_dir: str = "runs"
    budget: Optional[int] = None
    episodes: Optional[int] = None
