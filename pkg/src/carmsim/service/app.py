"""FastAPI service wrapping the simulator core.

Long-running, multi-client surface over the pipeline: phantom
generation, isocenter sampling, rendering, dataset builds, navigation
episodes, evaluation, and protocol conformance checks. The CLI is a
thin client of these endpoints.
"""

from __future__ import annotations

import contextlib
import json
import os
from importlib import resources

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__, gateway, metrics, navloop, protocol
from ..datasetgen import (
    DatasetVolume,
    build_dataset,
    expected_record_counts,
    read_manifest,
)
from ..errors import InputError, SimulatorError
from ..geometry import CArmPose, SamplerConfig, sample_isocenters
from ..phantom import (
    PhantomConfig,
    generate_phantom,
    load_landmarks,
    load_volume,
    save_landmarks,
    save_volume,
)
from ..projector import render
from ..protocol import ParseError
from ..seeds import derive_seed
from . import schemas


def _phantom_config(params: schemas.PhantomParams | None) -> PhantomConfig:
    if params is None:
        return PhantomConfig()
    defaults = PhantomConfig()
    return PhantomConfig(
        extent_mm=params.extent_mm or defaults.extent_mm,
        spacing_mm=params.spacing_mm or defaults.spacing_mm,
        mu_soft=params.mu_soft or defaults.mu_soft,
        mu_bone=params.mu_bone or defaults.mu_bone,
        mu_diaphragm=params.mu_diaphragm or defaults.mu_diaphragm,
    )


def _load_env(ref: schemas.VolumeRef):
    if ref.phantom_seed is not None:
        return generate_phantom(ref.phantom_seed)
    volume = load_volume(ref.header, ref.raw)
    landmarks = load_landmarks(ref.landmarks)
    return volume, landmarks


def _pose_template(detector: schemas.DetectorParams) -> CArmPose:
    return CArmPose(
        isocenter=(0.0, 0.0, 0.0),
        sod=detector.sod,
        sdd=detector.sdd,
        detector_extent=detector.extent_mm,
        detector_res=(detector.res, detector.res),
    )


def _sampler_config(params: schemas.SamplerParams | None, seed: int) -> SamplerConfig:
    if params is None:
        return SamplerConfig(seed=seed)
    return SamplerConfig(
        si_band_fraction=params.si_band_fraction,
        lr_sigma_mm=params.lr_sigma_mm,
        ap_sigma_mm=params.ap_sigma_mm,
        seed=seed,
    )


def _make_agent(spec: str, timeout_s: float):
    """Agent factory; wire agents come back as context managers."""
    if spec == "oracle":
        return contextlib.nullcontext(navloop.OracleAgent())
    if spec == "zero-move":
        return contextlib.nullcontext(navloop.FixedResponseAgent())
    if spec.startswith("subprocess:"):
        return gateway.serve_subprocess(spec[len("subprocess:"):], timeout=timeout_s)
    if spec.startswith("tcp:"):
        rest = spec[len("tcp:"):]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise InputError(f"bad tcp agent spec {spec!r}, need tcp:host:port")
        return gateway.connect_tcp(host, int(port), timeout=timeout_s)
    raise InputError(
        f"unknown agent {spec!r} (expected oracle, zero-move, "
        "subprocess:<cmd>, or tcp:<host>:<port>)"
    )


def _builtin_vectors() -> list[dict]:
    data = resources.files("carmsim").joinpath("data/protocol_vectors.jsonl")
    return [json.loads(line) for line in data.read_text().splitlines() if line.strip()]


def run_protocol_vectors(table=None) -> list[schemas.ProtocolCheckResult]:
    """Check the built-in conformance vectors against the parser."""
    results = []
    for case in _builtin_vectors():
        outcome = protocol.parse(case["text"], table or case_table())
        if case["valid"]:
            ok = isinstance(outcome, protocol.AgentResponse)
            detail = "parsed" if ok else f"unexpected parse failure: {outcome}"
            if ok and "expect" in case:
                expect = case["expect"]
                got = {
                    "landmark_index": outcome.landmark_index,
                    "x_dir": outcome.command.d_x.value,
                    "x_mag": outcome.command.e_x.value,
                    "y_dir": outcome.command.d_y.value,
                    "y_mag": outcome.command.e_y.value,
                }
                mismatched = {
                    k: (got[k], v) for k, v in expect.items() if got[k] != v
                }
                if mismatched:
                    ok = False
                    detail = f"field mismatch: {mismatched}"
        else:
            ok = isinstance(outcome, ParseError)
            detail = str(outcome) if ok else "parsed but expected failure"
            if ok and case.get("error_contains") and case["error_contains"] not in outcome.reason:
                ok = False
                detail = f"wrong error: {outcome.reason!r}"
        results.append(
            schemas.ProtocolCheckResult(case=case["name"], valid=ok, detail=detail)
        )
    return results


def case_table():
    from ..nametable import DEFAULT_TABLE

    return DEFAULT_TABLE


def _echo_run_config(out_dir: str, request_model) -> None:
    """Reproducibility contract: every command's config lands in its output dir.

    Output locations are excluded so that reruns into different
    directories stay byte-identical; everything that determines the
    generated content is recorded.
    """
    os.makedirs(out_dir, exist_ok=True)
    config = request_model.model_dump(exclude={"out_dir", "out_path", "out_png"})
    with open(os.path.join(out_dir, "run_config.json"), "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")


def create_app() -> FastAPI:
    app = FastAPI(title="carmsim", version=__version__)

    @app.exception_handler(SimulatorError)
    async def simulator_error(request, exc: SimulatorError):
        return JSONResponse(
            status_code=400,
            content={"error": exc.category, "message": str(exc)},
        )

    @app.exception_handler(OSError)
    async def os_error(request, exc: OSError):
        return JSONResponse(
            status_code=400,
            content={"error": "io", "message": str(exc)},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/phantom/generate", response_model=schemas.PhantomGenerateResponse)
    def phantom_generate(req: schemas.PhantomGenerateRequest):
        volume, landmarks = generate_phantom(req.seed, _phantom_config(req.config))
        _echo_run_config(req.out_dir, req)
        header = os.path.join(req.out_dir, "volume.yaml")
        raw = os.path.join(req.out_dir, "volume.raw")
        lm_path = os.path.join(req.out_dir, "landmarks.yaml")
        save_volume(volume, header, raw)
        save_landmarks(landmarks, lm_path)
        return schemas.PhantomGenerateResponse(
            volume_header=header,
            volume_raw=raw,
            landmarks=lm_path,
            dims=volume.dims,
            extent_mm=volume.extent_mm,
            landmark_count=len(landmarks.landmarks),
        )

    @app.post("/sample", response_model=schemas.SampleResponse)
    def sample(req: schemas.SampleRequest):
        volume, landmarks = _load_env(req.volume)
        config = _sampler_config(req.sampler, req.seed)
        poses = sample_isocenters(volume, landmarks, req.n, config)
        out_path = None
        if req.out_path:
            out_path = req.out_path
            os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
            with open(out_path, "w") as f:
                for pose in poses:
                    f.write(
                        json.dumps(
                            {"isocenter_mm": list(pose.isocenter)},
                            separators=(",", ":"),
                        )
                        + "\n"
                    )
        return schemas.SampleResponse(
            n=len(poses),
            poses=[pose.isocenter for pose in poses],
            out_path=out_path,
        )

    @app.post("/render", response_model=schemas.RenderResponse)
    def render_view(req: schemas.RenderRequest):
        volume, _ = _load_env(req.volume)
        pose = _pose_template(req.detector).with_isocenter(req.isocenter_mm)
        image = render(volume, pose, window=req.window, step_fraction=req.step_fraction)
        os.makedirs(os.path.dirname(req.out_png) or ".", exist_ok=True)
        image.save_png(req.out_png)
        return schemas.RenderResponse(
            out_png=req.out_png,
            integral_max=float(image.integrals.max()),
            pixel_max=float(image.pixels.max()),
        )

    @app.post("/dataset/build", response_model=schemas.DatasetBuildResponse)
    def dataset_build(req: schemas.DatasetBuildRequest):
        if req.volumes is not None:
            n_volumes = req.volumes
            n_test = req.test_volumes if req.test_volumes is not None else max(1, round(n_volumes / 6))
            if n_test >= n_volumes:
                raise InputError(
                    f"test_volumes={n_test} must leave at least one training volume"
                )
            ids = [f"vol{idx:03d}" for idx in range(n_volumes)]
            train_ids = set(ids[: n_volumes - n_test])
            test_ids = set(ids[n_volumes - n_test:])
            if req.plan_only:
                n_train_records, n_test_records = expected_record_counts(
                    len(train_ids), len(test_ids), req.per_volume
                )
                return schemas.DatasetBuildResponse(
                    out_dir=req.out_dir,
                    manifest_path=None,
                    n_total=n_train_records + n_test_records,
                    n_train=n_train_records,
                    n_test=n_test_records,
                    plan_only=True,
                )
            volumes = []
            for idx, volume_id in enumerate(ids):
                phantom_seed = derive_seed(req.seed, "phantom-volume", idx)
                volume, landmarks = generate_phantom(phantom_seed)
                volumes.append(DatasetVolume(volume_id, volume, landmarks))
        else:
            volumes = []
            for idx, ref in enumerate(req.volume_refs):
                volume, landmarks = _load_env(ref)
                volumes.append(DatasetVolume(f"vol{idx:03d}", volume, landmarks))
            ids = [dv.volume_id for dv in volumes]
            n_test = req.test_volumes if req.test_volumes is not None else max(1, round(len(ids) / 6))
            if n_test >= len(ids):
                raise InputError(
                    f"test_volumes={n_test} must leave at least one training volume"
                )
            train_ids = set(ids[: len(ids) - n_test])
            test_ids = set(ids[len(ids) - n_test:])
            if req.plan_only:
                n_train_records, n_test_records = expected_record_counts(
                    len(train_ids), len(test_ids), req.per_volume
                )
                return schemas.DatasetBuildResponse(
                    out_dir=req.out_dir,
                    manifest_path=None,
                    n_total=n_train_records + n_test_records,
                    n_train=n_train_records,
                    n_test=n_test_records,
                    plan_only=True,
                )

        _echo_run_config(req.out_dir, req)
        manifest = build_dataset(
            volumes,
            req.per_volume,
            train_ids,
            test_ids,
            req.seed,
            req.out_dir,
            sampler=_sampler_config(req.sampler, req.seed),
            pose_template=_pose_template(req.detector),
            window=req.window,
            step_fraction=req.step_fraction,
        )
        return schemas.DatasetBuildResponse(
            out_dir=req.out_dir,
            manifest_path=manifest.manifest_path,
            n_total=len(manifest.records),
            n_train=len(manifest.train_records),
            n_test=len(manifest.test_records),
            plan_only=False,
        )

    @app.post("/navigate", response_model=schemas.NavigateResponse)
    def navigate(req: schemas.NavigateRequest):
        volume, landmarks = _load_env(req.volume)
        template = _pose_template(req.detector)
        if req.episodes is not None:
            configs = navloop.random_episode_configs(
                landmarks,
                req.episodes,
                req.seed,
                max_steps=req.max_steps,
                success_radius_mm=req.success_radius_mm,
            )
        else:
            configs = [
                navloop.EpisodeConfig(
                    start=landmarks.resolve(req.start),
                    target=landmarks.resolve(req.target),
                    max_steps=req.max_steps,
                    success_radius_mm=req.success_radius_mm,
                    seed=req.seed,
                    episode_id="ep0000",
                )
            ]
        _echo_run_config(req.out_dir, req)
        ground_truth_path = None
        if req.emit_ground_truth:
            episodes = {}
            for config in configs:
                start_index = landmarks.resolve(config.start)
                start_pose = template.with_isocenter(
                    landmarks.get(start_index).position_mm
                )
                episodes[config.episode_id] = (start_pose, landmarks.resolve(config.target))
            ground_truth_path = os.path.join(req.out_dir, "oracle_ground_truth.json")
            navloop.write_oracle_ground_truth(
                ground_truth_path, landmarks, volume, episodes
            )

        traces = []
        summaries = []
        trace_dir = os.path.join(req.out_dir, "traces")
        os.makedirs(trace_dir, exist_ok=True)
        with _make_agent(req.agent, req.timeout_s) as agent:
            for config in configs:
                trace = navloop.run_episode(
                    volume,
                    landmarks,
                    agent,
                    config,
                    out_dir=req.out_dir,
                    pose_template=template,
                    window=req.window,
                    step_fraction=req.step_fraction,
                )
                trace_path = os.path.join(trace_dir, f"{config.episode_id}.jsonl")
                navloop.write_trace(trace, trace_path)
                traces.append(trace)
                summaries.append(
                    schemas.EpisodeSummary(
                        episode_id=config.episode_id,
                        outcome=trace.outcome,
                        n_steps=len(trace.steps),
                        success_step=trace.success_step,
                        final_distance_mm=trace.final_distance_mm,
                        trace_path=trace_path,
                    )
                )
        nav_summary = metrics.summarize_navigation(traces)
        return schemas.NavigateResponse(
            out_dir=req.out_dir,
            episodes=summaries,
            n_success=nav_summary.n_success,
            success_rate=nav_summary.success_rate,
            mean_steps_to_success=nav_summary.mean_steps_to_success,
            mean_final_distance_mm=nav_summary.mean_final_distance_mm,
            ground_truth_path=ground_truth_path,
        )

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        records = read_manifest(req.manifest)
        predictions = metrics.read_predictions(req.predictions)
        score, confusion = metrics.score_corpus(records, predictions, tuple(req.ks))
        floats = score.as_float_dict()
        exact = {
            "precision_at": {k: str(v) for k, v in sorted(score.precision_at.items())},
            "recall_at": {k: str(v) for k, v in sorted(score.recall_at.items())},
            "hit_at": {k: str(v) for k, v in sorted(score.hit_at.items())},
        }
        report_path = None
        if req.report_out:
            report_path = req.report_out
            report = {
                "n_records": len(records),
                **floats,
                "exact": exact,
            }
            with open(report_path, "w") as f:
                json.dump(report, f, indent=2, sort_keys=True)
                f.write("\n")
        heatmap_path = None
        if req.heatmap_png:
            confusion.save_png(req.heatmap_png)
            heatmap_path = req.heatmap_png
        confusion_path = None
        if req.confusion_out:
            with open(req.confusion_out, "w") as f:
                f.write(confusion.to_table() + "\n")
            confusion_path = req.confusion_out
        return schemas.EvaluateResponse(
            n_records=len(records),
            precision_at=floats["precision_at"],
            recall_at=floats["recall_at"],
            hit_at=floats["hit_at"],
            exact=exact,
            report_path=report_path,
            heatmap_path=heatmap_path,
            confusion_path=confusion_path,
        )

    @app.post("/protocol/check", response_model=schemas.ProtocolCheckResponse)
    def protocol_check(req: schemas.ProtocolCheckRequest):
        results: list[schemas.ProtocolCheckResult] = []
        if req.text is not None:
            outcome = protocol.parse(req.text)
            ok = isinstance(outcome, protocol.AgentResponse)
            results.append(
                schemas.ProtocolCheckResult(
                    case="text",
                    valid=ok,
                    detail="parsed" if ok else str(outcome),
                )
            )
        elif req.file is not None:
            try:
                with open(req.file) as f:
                    lines = f.read().splitlines()
            except OSError as e:
                raise InputError(f"cannot read response file: {e}") from e
            for line_no, line in enumerate(lines, 1):
                if not line.strip():
                    continue
                outcome = protocol.parse(line)
                ok = isinstance(outcome, protocol.AgentResponse)
                results.append(
                    schemas.ProtocolCheckResult(
                        case=f"line {line_no}",
                        valid=ok,
                        detail="parsed" if ok else str(outcome),
                    )
                )
        else:
            results = run_protocol_vectors()
        n_valid = sum(1 for r in results if r.valid)
        return schemas.ProtocolCheckResponse(
            ok=n_valid == len(results),
            n_valid=n_valid,
            n_invalid=len(results) - n_valid,
            results=results,
        )

    return app
