# backend/models.py
import math
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EstimatorKind = Literal["assbl", "ssbl_fixed", "dft_ssbl", "polar_omp", "oracle_ls"]
ProfileName = Literal["desk", "paper"]


# ---------------------------------------------------------------------------
# Physical scenario and measurement configuration
# ---------------------------------------------------------------------------

class ScenarioConfig(BaseModel):
    """Array geometry, sub-array layout and path statistics of the simulated scenario"""
    model_config = ConfigDict(frozen=True)

    n_antennas: int = Field(64, ge=1, description="Number of ULA elements (N)")
    carrier_freq: float = Field(100e9, gt=0, description="Carrier frequency in Hz")
    n_subarrays: int = Field(4, ge=1, description="Number of sub-arrays (G)")
    n_paths: int = Field(2, ge=1, description="Propagation paths per channel (L)")
    angle_limit: float = Field(
        math.sqrt(3) / 2, gt=0, le=1,
        description="Angles are drawn on (-angle_limit, angle_limit)",
    )
    min_distance: float = Field(5.0, gt=0, description="Closest user distance in meters")
    max_distance: float = Field(100.0, gt=0, description="Farthest user distance in meters")
    exact_distance: bool = Field(
        False, description="Synthesize channels with exact spherical distances instead of the Fresnel approximation"
    )

    @model_validator(mode="after")
    def check_layout(self) -> "ScenarioConfig":
        if self.n_antennas % self.n_subarrays != 0:
            raise ValueError(
                f"n_subarrays={self.n_subarrays} must divide n_antennas={self.n_antennas}"
            )
        if self.min_distance > self.max_distance:
            raise ValueError("min_distance must not exceed max_distance")
        return self


class PilotConfig(BaseModel):
    """Uplink training configuration"""
    model_config = ConfigDict(frozen=True)

    n_slots: int = Field(16, ge=1, description="Pilot slots (T_p)")
    n_rf: int = Field(4, ge=1, description="RF chains (N_RF)")
    snr_db: float = Field(15.0, description="Post-combining SNR in dB; +inf means noiseless")
    phase_bits: Optional[int] = Field(
        None, ge=1, le=8, description="Quantize combiner phases to 2**phase_bits levels"
    )

    @property
    def n_measurements(self) -> int:
        return self.n_slots * self.n_rf

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.snr_db) and self.snr_db > 0


class DistanceRingRule(BaseModel):
    """Distance sampling of the polar-domain dictionary"""
    model_config = ConfigDict(frozen=True)

    beta_delta: float = Field(0.636, gt=0, description="Ring spacing factor")
    s_max: int = Field(16, ge=0, description="Largest ring index per angle")
    min_distance: float = Field(5.0, gt=0, description="Rings closer than this are dropped")
    far_field_only: bool = Field(False, description="Keep only the far-field atom per angle")


# ---------------------------------------------------------------------------
# Estimator configuration
# ---------------------------------------------------------------------------

class ArmijoConfig(BaseModel):
    """Backtracking line search used by distance refinement"""
    model_config = ConfigDict(frozen=True)

    c1: float = Field(1e-4, gt=0, lt=1)
    shrink: float = Field(0.5, gt=0, lt=1)
    step0: float = Field(1.0, gt=0, description="First trial step in 1/m, scaled by 1/|grad|")
    max_backtracks: int = Field(20, ge=0)


class AssblConfig(BaseModel):
    """Hyperparameters and loop controls of the structured SBL estimator"""
    model_config = ConfigDict(frozen=True)

    beta: float = Field(0.5, ge=0, description="Adjacent-coupling strength")
    chi: float = Field(0.9, gt=0, lt=1, description="Damping of the alpha update")
    a_lambda: float = Field(1.0, gt=0)
    b_lambda: float = Field(1e-4, gt=0)
    a_zeta: float = Field(1.0, gt=0)
    b_zeta: float = Field(1e-4, gt=0)
    a_sigma: float = Field(1.0, gt=0)
    b_sigma: float = Field(1e-4, gt=0)
    max_iter: int = Field(200, ge=1, description="Iteration cap (I)")
    tol: float = Field(1e-3, gt=0, description="Stop threshold on the alpha change")
    stop_rule: Literal["relative", "absolute"] = "relative"
    n_refine: int = Field(4, ge=0, description="Blocks refined per iteration")
    armijo: ArmijoConfig = Field(default_factory=ArmijoConfig)
    prune_threshold: float = Field(
        1e-8, ge=0, description="Blocks with gamma below this fraction of max(gamma) leave the E-step"
    )
    n_angles: Optional[int] = Field(None, ge=1, description="Angular grid size U; defaults to N")
    init_distance: float = Field(20.0, gt=0, description="Initial distance of every block in meters")
    min_distance: float = Field(1.0, gt=0, description="Refinement never moves below this distance")
    max_distance: float = Field(1000.0, gt=0, description="Refinement never moves beyond this distance")
    refine: bool = Field(True, description="Refine distances (False keeps the initial dictionary)")
    far_field: bool = Field(False, description="Start from a far-field dictionary")
    estep_method: Literal["auto", "direct", "woodbury"] = "auto"
    trace_path: Optional[Path] = Field(None, description="Write per-iteration diagnostics as CSV")

    @model_validator(mode="after")
    def check_distance_bounds(self) -> "AssblConfig":
        if self.min_distance >= self.max_distance:
            raise ValueError("min_distance must be below max_distance")
        if not self.min_distance <= self.init_distance <= self.max_distance:
            raise ValueError("init_distance must lie within [min_distance, max_distance]")
        return self


class EstimatorConfig(BaseModel):
    """One entry of a sweep's estimator list"""
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1, description="Label used in CSV rows")
    kind: EstimatorKind
    assbl: AssblConfig = Field(default_factory=AssblConfig)
    n_iters: Optional[int] = Field(None, ge=1, description="Greedy iterations for polar_omp")
    n_angles: Optional[int] = Field(None, ge=1, description="Polar dictionary angular grid size")
    polar_rule: DistanceRingRule = Field(default_factory=DistanceRingRule)


# ---------------------------------------------------------------------------
# Benchmark configuration and records
# ---------------------------------------------------------------------------

class SweepConfig(BaseModel):
    """Monte Carlo sweep over SNR or pilot length"""
    profile: ProfileName = "desk"
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    n_slots: int = Field(16, ge=1, description="Pilot length used by SNR sweeps")
    n_rf: int = Field(4, ge=1)
    phase_bits: Optional[int] = Field(None, ge=1, le=8)
    estimators: List[EstimatorConfig] = Field(default_factory=list)
    snr_grid: List[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    pilot_grid: List[int] = Field(default_factory=lambda: [8, 16, 24, 32, 40])
    fixed_snr_db: float = Field(15.0, description="SNR used by pilot sweeps")
    n_trials: int = Field(100, ge=1)
    master_seed: int = Field(2024, ge=0)
    output_dir: Path = Path("results")
    serial: bool = False
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("estimators")
    @classmethod
    def check_estimators(cls, value: List[EstimatorConfig]) -> List[EstimatorConfig]:
        if not value:
            raise ValueError("at least one estimator is required")
        names = [est.name for est in value]
        if len(set(names)) != len(names):
            raise ValueError(f"estimator names must be unique, got {names}")
        return value

    @field_validator("snr_grid", "pilot_grid")
    @classmethod
    def check_grid(cls, value: list) -> list:
        if not value:
            raise ValueError("sweep grids must not be empty")
        return value

    @field_validator("pilot_grid")
    @classmethod
    def check_pilot_grid(cls, value: List[int]) -> List[int]:
        if any(t_p < 1 for t_p in value):
            raise ValueError("pilot lengths must be positive")
        return value


class TrialRecord(BaseModel):
    """One row of the long-format trial CSV"""
    trial_id: int
    estimator: str
    snr_db: float
    t_p: int
    nmse_linear: float
    nmse_db: float
    wall_ms: float
    iters: int
    status: str = "ok"
    channel_hash: str = ""

    @property
    def flagged(self) -> bool:
        return self.status != "ok"


class IterationRecord(BaseModel):
    """Per-iteration diagnostics of the ASSBL loop"""
    iteration: int
    q_value: float
    sigma: float
    active_blocks: int
    alpha_change: float
    estep_path: str


# ---------------------------------------------------------------------------
# Service request / response bodies
# ---------------------------------------------------------------------------

class EstimateRequest(BaseModel):
    """Request model for a single simulated estimation instance"""
    profile: ProfileName = Field("desk", description="Base parameter profile")
    scenario: Optional[ScenarioConfig] = Field(None, description="Overrides the profile scenario")
    n_slots: Optional[int] = Field(None, ge=1, description="Overrides the profile pilot length")
    n_rf: Optional[int] = Field(None, ge=1)
    snr_db: float = Field(15.0, description="Post-combining SNR in dB")
    seed: int = Field(0, ge=0)
    estimators: List[EstimatorKind] = Field(
        default_factory=lambda: ["assbl", "polar_omp", "oracle_ls"],
        description="Estimators run on the shared observation",
    )
    include_diagnostics: bool = Field(True, description="Return ASSBL per-iteration records")


class EstimatorOutcome(BaseModel):
    """Per-estimator part of an estimate response"""
    name: str
    nmse_linear: Optional[float] = Field(None, description="Missing when the estimator failed")
    nmse_db: Optional[float] = None
    iterations: int
    status: str = "ok"
    wall_ms: float = 0.0
    diagnostics: List[IterationRecord] = Field(default_factory=list)
    refined_distances: List[Optional[float]] = Field(
        default_factory=list, description="Distances of the strongest blocks in meters; null for far-field blocks"
    )


class EstimateResponse(BaseModel):
    """Response model for a single estimation instance"""
    profile: str
    n_antennas: int
    n_measurements: int
    snr_db: float
    channel_hash: str
    results: List[EstimatorOutcome]


class SweepRequest(BaseModel):
    """Request model for a synchronous sweep"""
    axis: Literal["snr", "pilot"] = "snr"
    profile: ProfileName = "desk"
    n_trials: Optional[int] = Field(None, ge=1)
    snr_grid: Optional[List[float]] = None
    pilot_grid: Optional[List[int]] = None
    seed: Optional[int] = Field(None, ge=0)
    output_dir: Optional[Path] = Field(None, description="Directory under XLMIMO_OUTPUT_DIR that receives the files")
    serial: bool = True


class SweepResponse(BaseModel):
    """Response model for a finished sweep"""
    axis: str
    trials_csv: str
    summary_csv: str
    plot_script: str
    manifest: str
    summary: List[dict]
