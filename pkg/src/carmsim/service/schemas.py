"""Request/response models for the HTTP service.

The service runs next to its data: requests reference volumes, datasets,
and output directories by local filesystem path, and responses echo the
paths they wrote. A volume is referenced either by a procedural phantom
seed or by the header/raw/landmarks file triple.
"""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class VolumeRef(BaseModel):
    phantom_seed: int | None = None
    header: str | None = None
    raw: str | None = None
    landmarks: str | None = None

    @model_validator(mode="after")
    def _check_one_source(self):
        by_seed = self.phantom_seed is not None
        by_files = all(v is not None for v in (self.header, self.raw, self.landmarks))
        if by_seed == by_files:
            raise ValueError(
                "volume ref needs either phantom_seed or header+raw+landmarks"
            )
        return self


class PhantomParams(BaseModel):
    extent_mm: tuple[float, float, float] | None = None
    spacing_mm: tuple[float, float, float] | None = None
    mu_soft: float | None = None
    mu_bone: float | None = None
    mu_diaphragm: float | None = None


class SamplerParams(BaseModel):
    si_band_fraction: float = 0.70
    lr_sigma_mm: float = 285.0
    ap_sigma_mm: float = 100.0


class DetectorParams(BaseModel):
    res: int = Field(default=256, ge=1)
    sod: float = 750.0
    sdd: float = 1200.0
    extent_mm: tuple[float, float] = (300.0, 300.0)


class HealthResponse(BaseModel):
    status: str
    version: str


class PhantomGenerateRequest(BaseModel):
    seed: int = Field(ge=0)
    out_dir: str
    config: PhantomParams | None = None


class PhantomGenerateResponse(BaseModel):
    volume_header: str
    volume_raw: str
    landmarks: str
    dims: tuple[int, int, int]
    extent_mm: tuple[float, float, float]
    landmark_count: int


class SampleRequest(BaseModel):
    volume: VolumeRef
    n: int = Field(ge=1)
    seed: int = Field(ge=0)
    sampler: SamplerParams | None = None
    out_path: str | None = None


class SampleResponse(BaseModel):
    n: int
    poses: list[tuple[float, float, float]]
    out_path: str | None


class RenderRequest(BaseModel):
    volume: VolumeRef
    isocenter_mm: tuple[float, float, float]
    out_png: str
    detector: DetectorParams = DetectorParams()
    window: float = 5.0
    step_fraction: float = 0.5


class RenderResponse(BaseModel):
    out_png: str
    integral_max: float
    pixel_max: float


class DatasetBuildRequest(BaseModel):
    per_volume: int = Field(ge=1)
    seed: int = Field(ge=0)
    out_dir: str
    volumes: int | None = Field(default=None, ge=1)
    volume_refs: list[VolumeRef] | None = None
    test_volumes: int | None = Field(default=None, ge=0)
    detector: DetectorParams = DetectorParams(res=128)
    sampler: SamplerParams | None = None
    window: float = 5.0
    step_fraction: float = 0.5
    plan_only: bool = False

    @model_validator(mode="after")
    def _check_volume_source(self):
        if (self.volumes is None) == (self.volume_refs is None):
            raise ValueError("provide exactly one of volumes / volume_refs")
        return self


class DatasetBuildResponse(BaseModel):
    out_dir: str
    manifest_path: str | None
    n_total: int
    n_train: int
    n_test: int
    plan_only: bool


class NavigateRequest(BaseModel):
    volume: VolumeRef
    agent: str = "oracle"
    seed: int = Field(default=0, ge=0)
    out_dir: str
    start: str | int | None = None
    target: str | int | None = None
    episodes: int | None = Field(default=None, ge=1)
    max_steps: int = 20
    success_radius_mm: float = 25.0
    detector: DetectorParams = DetectorParams(res=128)
    window: float = 5.0
    step_fraction: float = 0.5
    timeout_s: float = 120.0
    emit_ground_truth: bool = False

    @model_validator(mode="after")
    def _check_goal(self):
        explicit = self.start is not None and self.target is not None
        if not explicit and self.episodes is None:
            raise ValueError("provide start+target, or episodes for a random batch")
        return self


class EpisodeSummary(BaseModel):
    episode_id: str
    outcome: str
    n_steps: int
    success_step: int | None
    final_distance_mm: float
    trace_path: str


class NavigateResponse(BaseModel):
    out_dir: str
    episodes: list[EpisodeSummary]
    n_success: int
    success_rate: float
    mean_steps_to_success: float | None
    mean_final_distance_mm: float
    ground_truth_path: str | None


class EvaluateRequest(BaseModel):
    manifest: str
    predictions: str
    ks: list[int] = [1, 2, 3]
    report_out: str | None = None
    heatmap_png: str | None = None
    confusion_out: str | None = None


class EvaluateResponse(BaseModel):
    n_records: int
    precision_at: dict[int, float]
    recall_at: dict[int, float]
    hit_at: dict[int, float]
    exact: dict[str, dict[int, str]]
    report_path: str | None
    heatmap_path: str | None
    confusion_path: str | None


class ProtocolCheckRequest(BaseModel):
    text: str | None = None
    file: str | None = None


class ProtocolCheckResult(BaseModel):
    case: str
    valid: bool
    detail: str


class ProtocolCheckResponse(BaseModel):
    ok: bool
    n_valid: int
    n_invalid: int
    results: list[ProtocolCheckResult]


class ErrorBody(BaseModel):
    error: str
    message: str
