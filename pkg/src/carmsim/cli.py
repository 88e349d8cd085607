"""Operator CLI: a thin client of the HTTP service.

Every subcommand marshals its flags into one request against the
service API and prints the JSON response. With ``--server`` the request
goes to a running instance; otherwise an ephemeral in-process server is
started on a loopback port for the duration of the command, so single
commands stay scriptable while all operation logic lives server-side.

Exit codes: 0 success, 1 runtime failure (machine-readable error JSON on
stderr), 2 usage error.
"""

from __future__ import annotations

import contextlib
import json
import socket
import sys
import threading
import time

import click
import httpx

from . import __version__


@contextlib.contextmanager
def _local_server():
    import uvicorn

    from .service import create_app

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(
        create_app(), host="127.0.0.1", port=port, log_level="error"
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    while not server.started:
        if time.monotonic() > deadline or not thread.is_alive():
            raise RuntimeError("local service failed to start")
        time.sleep(0.01)
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=5.0)


def _call(ctx, endpoint: str, payload: dict) -> None:
    server = ctx.obj.get("server")
    try:
        if server:
            response = _post(server, endpoint, payload)
        else:
            with _local_server() as url:
                response = _post(url, endpoint, payload)
    except httpx.HTTPError as e:
        click.echo(
            json.dumps({"error": "transport", "message": str(e)}), err=True
        )
        sys.exit(1)
    if response.status_code != 200:
        try:
            body = response.json()
        except json.JSONDecodeError:
            body = {"error": "runtime", "message": response.text}
        click.echo(json.dumps(body, sort_keys=True), err=True)
        sys.exit(1)
    click.echo(json.dumps(response.json(), indent=2, sort_keys=True))


def _post(base_url: str, endpoint: str, payload: dict) -> httpx.Response:
    with httpx.Client(base_url=base_url, timeout=None) as client:
        return client.post(endpoint, json=payload)


def _volume_ref(phantom_seed, header, raw, landmarks) -> dict:
    if phantom_seed is not None:
        return {"phantom_seed": phantom_seed}
    if not (header and raw and landmarks):
        raise click.UsageError(
            "provide --phantom-seed, or all of --volume/--raw/--landmarks"
        )
    return {"header": header, "raw": raw, "landmarks": landmarks}


def _detector(res, sod, sdd, det_extent) -> dict:
    return {"res": res, "sod": sod, "sdd": sdd, "extent_mm": list(det_extent)}


_volume_options = [
    click.option("--phantom-seed", type=int, default=None,
                 help="Procedural phantom seed (alternative to volume files)."),
    click.option("--volume", "header", type=str, default=None,
                 help="Volume header YAML path."),
    click.option("--raw", type=str, default=None, help="Volume raw payload path."),
    click.option("--landmarks", type=str, default=None, help="Landmarks YAML path."),
]

_detector_options = [
    click.option("--res", type=int, default=128, show_default=True,
                 help="Detector resolution (pixels per side)."),
    click.option("--sod", type=float, default=750.0, show_default=True),
    click.option("--sdd", type=float, default=1200.0, show_default=True),
    click.option("--det-extent", nargs=2, type=float, default=(300.0, 300.0),
                 show_default=True, help="Detector extent (mm mm)."),
]


def _add(options):
    def wrap(f):
        for option in reversed(options):
            f = option(f)
        return f

    return wrap


@click.group()
@click.version_option(__version__)
@click.option("--server", type=str, default=None, envvar="CARMSIM_SERVER",
              help="Base URL of a running service; default is an ephemeral local one.")
@click.option("--threads", type=int, default=None,
              help="Bound internal render parallelism (defaults to available cores).")
@click.pass_context
def main(ctx, server, threads):
    """Deterministic C-arm imaging and navigation simulator."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


@main.command("gen-phantom")
@click.option("--seed", type=int, required=True, help="Master seed (mandatory).")
@click.option("--out", "out_dir", type=str, required=True, help="Output directory.")
@click.option("--extent", nargs=3, type=float, default=None,
              help="Volume extent in mm (LR AP SI).")
@click.option("--spacing", nargs=3, type=float, default=None,
              help="Voxel spacing in mm.")
@click.pass_context
def gen_phantom(ctx, seed, out_dir, extent, spacing):
    """Generate a procedural phantom volume with annotated landmarks."""
    config = {}
    if extent:
        config["extent_mm"] = list(extent)
    if spacing:
        config["spacing_mm"] = list(spacing)
    _call(ctx, "/phantom/generate", {
        "seed": seed,
        "out_dir": out_dir,
        "config": config or None,
    })


@main.command("sample")
@_add(_volume_options)
@click.option("--n", type=int, required=True, help="Number of isocenters.")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=str, default=None,
              help="Write poses to this JSONL file.")
@click.option("--sampler-config", type=str, default=None,
              help="YAML file with sampler fields; explicit flags override it.")
@click.option("--si-band", type=float, default=None,
              help="SI band fraction [default: 0.70].")
@click.option("--lr-sigma", type=float, default=None,
              help="LR Gaussian sigma in mm [default: 285].")
@click.option("--ap-sigma", type=float, default=None,
              help="AP Gaussian sigma in mm [default: 100].")
@click.pass_context
def sample(ctx, phantom_seed, header, raw, landmarks, n, seed, out_path,
           sampler_config, si_band, lr_sigma, ap_sigma):
    """Sample C-arm isocenters inside a volume."""
    sampler = {"si_band_fraction": 0.70, "lr_sigma_mm": 285.0, "ap_sigma_mm": 100.0}
    if sampler_config:
        import yaml

        try:
            with open(sampler_config) as f:
                loaded = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise click.UsageError(f"cannot read sampler config: {e}")
        sampler.update({k: v for k, v in loaded.items() if k in sampler})
    for key, flag in (("si_band_fraction", si_band), ("lr_sigma_mm", lr_sigma),
                      ("ap_sigma_mm", ap_sigma)):
        if flag is not None:
            sampler[key] = flag
    _call(ctx, "/sample", {
        "volume": _volume_ref(phantom_seed, header, raw, landmarks),
        "n": n,
        "seed": seed,
        "sampler": sampler,
        "out_path": out_path,
    })


@main.command("render")
@_add(_volume_options)
@_add(_detector_options)
@click.option("--isocenter", nargs=3, type=float, required=True,
              help="Isocenter position in mm (LR AP SI).")
@click.option("--out", "out_png", type=str, required=True, help="Output PNG path.")
@click.option("--window", type=float, default=5.0, show_default=True)
@click.option("--step-fraction", type=float, default=0.5, show_default=True)
@click.pass_context
def render_cmd(ctx, phantom_seed, header, raw, landmarks, isocenter, out_png,
               res, sod, sdd, det_extent, window, step_fraction):
    """Render one DRR at a given isocenter."""
    _call(ctx, "/render", {
        "volume": _volume_ref(phantom_seed, header, raw, landmarks),
        "isocenter_mm": list(isocenter),
        "out_png": out_png,
        "detector": _detector(res, sod, sdd, det_extent),
        "window": window,
        "step_fraction": step_fraction,
    })


@main.command("build-dataset")
@click.option("--volumes", type=int, required=True,
              help="Number of procedural phantom volumes.")
@click.option("--per-volume", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--test-volumes", type=int, default=None,
              help="How many volumes form the test split (default ~1/6).")
@click.option("--plan-only", is_flag=True,
              help="Report record counts without rendering anything.")
@_add(_detector_options)
@click.pass_context
def build_dataset_cmd(ctx, volumes, per_volume, seed, out_dir, test_volumes,
                      plan_only, res, sod, sdd, det_extent):
    """Build a nearest-3-landmark dataset: PNGs plus JSONL manifest."""
    _call(ctx, "/dataset/build", {
        "volumes": volumes,
        "per_volume": per_volume,
        "seed": seed,
        "out_dir": out_dir,
        "test_volumes": test_volumes,
        "plan_only": plan_only,
        "detector": _detector(res, sod, sdd, det_extent),
    })


@main.command("navigate")
@_add(_volume_options)
@_add(_detector_options)
@click.option("--agent", type=str, default="oracle", show_default=True,
              help="oracle | zero-move | subprocess:<cmd> | tcp:<host>:<port>")
@click.option("--start", type=str, default=None,
              help="Start landmark (index or name, e.g. right_scapula).")
@click.option("--target", type=str, default=None,
              help="Target landmark (index or name).")
@click.option("--episodes", type=int, default=None,
              help="Run this many random start/target episodes instead.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--max-steps", type=int, default=20, show_default=True)
@click.option("--success-radius", type=float, default=25.0, show_default=True)
@click.option("--timeout", "timeout_s", type=float, default=120.0, show_default=True,
              help="Wire-agent reply timeout in seconds.")
@click.option("--emit-ground-truth", is_flag=True,
              help="Write the oracle ground-truth file for external clients.")
@click.pass_context
def navigate(ctx, phantom_seed, header, raw, landmarks, res, sod, sdd, det_extent,
             agent, start, target, episodes, seed, out_dir, max_steps,
             success_radius, timeout_s, emit_ground_truth):
    """Run perception-action navigation episodes."""
    _call(ctx, "/navigate", {
        "volume": _volume_ref(phantom_seed, header, raw, landmarks),
        "agent": agent,
        "start": start,
        "target": target,
        "episodes": episodes,
        "seed": seed,
        "out_dir": out_dir,
        "max_steps": max_steps,
        "success_radius_mm": success_radius,
        "detector": _detector(res, sod, sdd, det_extent),
        "timeout_s": timeout_s,
        "emit_ground_truth": emit_ground_truth,
    })


@main.command("evaluate")
@click.option("--manifest", type=str, required=True)
@click.option("--predictions", type=str, required=True)
@click.option("--k", "ks", type=str, default="1,2,3", show_default=True,
              help="Comma-separated K values.")
@click.option("--report", "report_out", type=str, default=None)
@click.option("--heatmap", "heatmap_png", type=str, default=None)
@click.option("--confusion", "confusion_out", type=str, default=None)
@click.pass_context
def evaluate(ctx, manifest, predictions, ks, report_out, heatmap_png, confusion_out):
    """Score a predictions file against a dataset manifest."""
    try:
        k_values = [int(k) for k in ks.split(",") if k.strip()]
    except ValueError:
        raise click.UsageError(f"bad --k value {ks!r}")
    _call(ctx, "/evaluate", {
        "manifest": manifest,
        "predictions": predictions,
        "ks": k_values,
        "report_out": report_out,
        "heatmap_png": heatmap_png,
        "confusion_out": confusion_out,
    })


@main.command("protocol-check")
@click.option("--file", "file_", type=str, default=None,
              help="Validate one response per line of this file.")
@click.option("--text", type=str, default=None, help="Validate a single response.")
@click.pass_context
def protocol_check(ctx, file_, text):
    """Validate responses, or run the built-in conformance vectors."""
    _call(ctx, "/protocol/check", {"text": text, "file": file_})


@main.command("serve")
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8642, show_default=True)
def serve(host, port):
    """Run the HTTP service in the foreground."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
