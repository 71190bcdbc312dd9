"""Pipeline driver: configuration, stage orchestration, artifacts, and the
operation-count benchmark.

A run is fully determined by its config (including the mandatory seed); all
artifact files are byte-identical across repeated runs.  Stage wall times are
inherently volatile, so they are only written when ``write_timings`` is set,
to a separate timings.json outside the deterministic artifact set.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .diffusion import make_schedule, plan_windows, resolve_denoiser, reverse_sample
from .flow import FlowField, LaplacianCompleter, map_flow_to_canvas
from .grids import (
    BinaryMask,
    CanvasSpec,
    ChannelGrid,
    downscale_flow,
    downscale_mask,
    make_outpaint_mask,
    read_grid,
    write_grid,
)
from .metrics import psnr, psnr_masked, ssim_full
from .propagation import (
    BaselineAligner,
    BaselineFuser,
    FlowBank,
    propagate_sequence,
    required_flow_pairs,
)
from .refselect import build_reference_chain
from .synthetic import (
    SyntheticScene,
    TrajectorySpec,
    generate_scene,
    stand_in_decode,
    stand_in_encode,
)


class ConfigError(ValueError):
    """Bad or inconsistent pipeline configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass(frozen=True)
class SceneConfig:
    world_h: int = 96
    world_w: int = 96
    n_frames: int = 16
    kind: str = "pan"
    start_y: float = 0.0
    start_x: float = 0.0
    delta_y: float = 0.0
    delta_x: float = 0.0
    period: int = 4

    def trajectory(self) -> TrajectorySpec:
        return TrajectorySpec(
            kind=self.kind,
            start_y=self.start_y,
            start_x=self.start_x,
            delta_y=self.delta_y,
            delta_x=self.delta_x,
            period=self.period,
        )


@dataclass(frozen=True)
class InputPaths:
    frames_dir: str
    flows_dir: str
    gt_dir: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; ``seed`` is mandatory (no ambient entropy)."""

    seed: int
    canvas: CanvasSpec
    mode: str = "propagate"
    window: int = 4
    completer: str = "laplacian"
    completion_tol: float = 1e-6
    completion_max_iters: int | None = None
    complete_at_pixel: bool = False
    aligner: str = "baseline"
    fuser: str = "baseline"
    fill: float = 0.0
    denoiser: str = "zero"
    timesteps: int = 25
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampler_window: int = 25
    sampler_stride: int = 12
    noise_condition: bool = False
    scene: SceneConfig | None = None
    inputs: InputPaths | None = None
    out_dir: str = "out"
    write_timings: bool = False

    def __post_init__(self):
        if self.mode not in ("propagate", "sample"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if (self.scene is None) == (self.inputs is None):
            raise ConfigError("exactly one of scene/inputs must be given")
        resolve_completer(self.completer, self.completion_tol, self.completion_max_iters)
        resolve_aligner(self.aligner)
        resolve_fuser(self.fuser)
        if self.denoiser == "oracle":
            if self.scene is None:
                raise ConfigError("oracle denoiser needs a synthetic scene")
        else:
            try:
                resolve_denoiser(self.denoiser)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "PipelineConfig":
        try:
            data = dict(raw)
            if "seed" not in data:
                raise ConfigError("config must set a seed")
            canvas = CanvasSpec(**data.pop("canvas"))
            scene = data.pop("scene", None)
            inputs = data.pop("inputs", None)
            return cls(
                canvas=canvas,
                scene=SceneConfig(**scene) if scene else None,
                inputs=InputPaths(**inputs) if inputs else None,
                **data,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["canvas"] = asdict(self.canvas)
        data["scene"] = asdict(self.scene) if self.scene else None
        data["inputs"] = asdict(self.inputs) if self.inputs else None
        return data


def resolve_completer(name: str, tol: float, max_iters: int | None):
    if name == "laplacian":
        return LaplacianCompleter(tol=tol, max_iters=max_iters)
    if name == "identity":
        return IdentityCompleter()
    raise ConfigError(f"unknown completer {name!r}")


def resolve_aligner(name: str):
    if name == "baseline":
        return BaselineAligner()
    raise ConfigError(f"unknown aligner {name!r}")


def resolve_fuser(name: str):
    if name == "baseline":
        return BaselineFuser()
    raise ConfigError(f"unknown fuser {name!r}")


class IdentityCompleter:
    """For flows completed upstream (pixel-space completion)."""

    def complete(self, flow: FlowField, missing: BinaryMask) -> FlowField:
        if not np.all(flow.valid == 1.0):
            raise ValueError("identity completer requires already-complete flows")
        return flow


@dataclass
class BenchmarkReport:
    """Operation counts and working-set estimate for one run.

    ``wall_time_s`` is populated for humans; it never enters deterministic
    artifacts.  The ordering invariant guided <= sequential <= all-pairs is
    checked by ``verify``.
    """

    n_frames: int
    window: int
    chain_len: int
    warp_count_guided: int
    warp_count_sequential: int
    warp_count_all_pairs: int
    compose_count: int
    peak_live_bytes: int
    wall_time_s: dict[str, float] = field(default_factory=dict)

    def verify(self) -> None:
        if not (
            self.warp_count_guided
            <= self.warp_count_sequential
            <= self.warp_count_all_pairs
        ):
            raise AssertionError(
                f"warp-count ordering violated: guided {self.warp_count_guided}, "
                f"sequential {self.warp_count_sequential}, all-pairs {self.warp_count_all_pairs}"
            )

    def to_dict(self, include_timings: bool = False) -> dict[str, Any]:
        data = {
            "n_frames": self.n_frames,
            "window": self.window,
            "chain_len": self.chain_len,
            "warp_count_guided": self.warp_count_guided,
            "warp_count_sequential": self.warp_count_sequential,
            "warp_count_all_pairs": self.warp_count_all_pairs,
            "compose_count": self.compose_count,
            "peak_live_bytes": self.peak_live_bytes,
        }
        if include_timings:
            data["wall_time_s"] = dict(self.wall_time_s)
        return data


def _grid_bytes(obj) -> int:
    if isinstance(obj, FlowField):
        return obj.u.nbytes + obj.v.nbytes + obj.valid.nbytes
    if hasattr(obj, "data"):
        return obj.data.nbytes
    return 0


def _live_bytes(*collections) -> int:
    total = 0
    for coll in collections:
        if coll is None:
            continue
        values = coll.values() if hasattr(coll, "values") else coll
        for item in values:
            total += _grid_bytes(item)
    return total


def _json_sanitize(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, dict):
        return {k: _json_sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_sanitize(v) for v in value]
    return value


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_json_sanitize(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


def _load_frames_from_dir(frames_dir: Path) -> list[ChannelGrid]:
    paths = sorted(frames_dir.glob("frame_*.s2sg"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.s2sg files in {frames_dir}")
    frames = []
    for p in paths:
        grid = read_grid(p)
        if not isinstance(grid, ChannelGrid):
            raise ValueError(f"{p} is not a channel grid")
        frames.append(grid)
    return frames


def _pixel_flow_provider(config: PipelineConfig, scene: SyntheticScene | None):
    if scene is not None:
        return lambda a, b: scene.gt_flow(a, b)
    flows_dir = Path(config.inputs.flows_dir)

    def load(a: int, b: int) -> FlowField:
        path = flows_dir / f"flow_{a:04d}_to_{b:04d}.s2sg"
        if not path.exists():
            raise FileNotFoundError(f"missing flow file {path}")
        grid = read_grid(path)
        if not isinstance(grid, FlowField):
            raise ValueError(f"{path} is not a flow grid")
        return grid

    return load


class _StageClock:
    def __init__(self):
        self.times: dict[str, float] = {}

    def run(self, name: str, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.times[name] = time.perf_counter() - start
        return result


def run_pipeline(config: PipelineConfig) -> dict[str, Any]:
    """Execute the configured pipeline and write artifacts under out_dir.

    Returns the summary dict (also written to summary.json).  On stage
    failure a summary with status "incomplete" is written before the
    StageError propagates.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _StageClock()
    spec = config.canvas
    s = spec.downsample
    peak_bytes = 0

    write_json(out / "config.json", config.to_dict())
    try:
        # inputs
        def load_inputs():
            if config.scene is not None:
                scene = generate_scene(
                    seed=config.seed,
                    world_h=config.scene.world_h,
                    world_w=config.scene.world_w,
                    crop_h=spec.orig_h,
                    crop_w=spec.orig_w,
                    n_frames=config.scene.n_frames,
                    trajectory=config.scene.trajectory(),
                    spec=spec,
                )
                return scene, scene.frames(), [scene.gt_expanded(i) for i in range(scene.num_frames)]
            frames = _load_frames_from_dir(Path(config.inputs.frames_dir))
            gt = None
            if config.inputs.gt_dir:
                gt = [read_grid(p) for p in sorted(Path(config.inputs.gt_dir).glob("gt_*.s2sg"))]
                if len(gt) != len(frames):
                    raise ValueError("ground-truth frame count does not match inputs")
            return None, frames, gt

        scene, frames, gt_expanded = clock.run("inputs", load_inputs)
        n = len(frames)
        for f in frames:
            if (f.height, f.width) != (spec.orig_h, spec.orig_w):
                raise StageError(
                    "inputs",
                    ValueError(
                        f"frame is {f.height}x{f.width}, expected {spec.orig_h}x{spec.orig_w}"
                    ),
                )
        peak_bytes = max(peak_bytes, _live_bytes(frames, gt_expanded))

        # reference chain
        chain = clock.run("chain", lambda: build_reference_chain(frames, config.window))
        write_json(
            out / "chain.json",
            {"indices": list(chain.indices), "window": chain.window, "num_frames": n},
        )

        # flows on the latent canvas
        def build_flows():
            provider = _pixel_flow_provider(config, scene)
            pixel_mask = make_outpaint_mask(spec)
            completer = resolve_completer(
                config.completer, config.completion_tol, config.completion_max_iters
            )
            bank = FlowBank()
            for a, b in sorted(required_flow_pairs(chain, n)):
                on_canvas = map_flow_to_canvas(provider(a, b), spec)
                if config.complete_at_pixel:
                    on_canvas = completer.complete(on_canvas, pixel_mask)
                bank.add(a, b, downscale_flow(on_canvas, s))
            return bank

        bank = clock.run("flows", build_flows)
        peak_bytes = max(peak_bytes, _live_bytes(frames, gt_expanded, dict(bank.items())))

        # encode to latents + latent masks
        def encode():
            latents = [stand_in_encode(f, s) for f in frames]
            mask = downscale_mask(make_outpaint_mask(spec), s)
            return latents, [mask] * n

        latents, masks = clock.run("encode", encode)
        peak_bytes = max(
            peak_bytes, _live_bytes(frames, gt_expanded, dict(bank.items()), latents, masks[:1])
        )

        # propagation
        def propagate():
            completer = (
                IdentityCompleter()
                if config.complete_at_pixel
                else resolve_completer(
                    config.completer, config.completion_tol, config.completion_max_iters
                )
            )
            return propagate_sequence(
                latents,
                masks,
                spec,
                chain,
                bank,
                completer,
                resolve_aligner(config.aligner),
                resolve_fuser(config.fuser),
                fill=config.fill,
            )

        prop = clock.run("propagate", propagate)
        results = prop.results
        peak_bytes = max(
            peak_bytes,
            _live_bytes(
                frames, gt_expanded, dict(bank.items()), latents,
                [r.latent for r in results], [r.coverage for r in results],
            ),
        )

        prop_dir = out / "propagated"
        for i, res in enumerate(results):
            write_grid(prop_dir / f"latent_{i:04d}.s2sg", res.latent)
            write_grid(prop_dir / f"coverage_{i:04d}.s2sg", res.coverage)
            write_json(
                prop_dir / f"provenance_{i:04d}.json",
                {
                    "frame": i,
                    "warp_count": res.warp_count,
                    "compose_count": res.compose_count,
                    "chain": list(chain.indices),
                    "provenance": res.provenance.tolist(),
                },
            )

        # optional diffusion sampling
        sampled = None
        if config.mode == "sample":
            def sample():
                schedule = make_schedule(config.timesteps, config.beta_start, config.beta_end)
                plan = plan_windows(n, config.sampler_window, config.sampler_stride)
                condition = [r.latent for r in results]
                if config.denoiser == "oracle":
                    clean = [stand_in_encode(g, s) for g in gt_expanded]
                    denoiser = resolve_denoiser("oracle", clean=clean, schedule=schedule)
                else:
                    denoiser = resolve_denoiser(config.denoiser)
                return reverse_sample(denoiser, condition, schedule, config.seed, plan=plan)

            sampled = clock.run("sample", sample)
            for i, grid in enumerate(sampled):
                write_grid(out / "sampled" / f"latent_{i:04d}.s2sg", grid)
            peak_bytes = max(
                peak_bytes,
                _live_bytes(
                    frames, gt_expanded, dict(bank.items()), latents,
                    [r.latent for r in results], sampled,
                ),
            )

        # decode
        decode_src = sampled if sampled is not None else [r.latent for r in results]
        decoded = clock.run("decode", lambda: [stand_in_decode(z, s) for z in decode_src])
        for i, grid in enumerate(decoded):
            write_grid(out / "decoded" / f"frame_{i:04d}.s2sg", grid)
        peak_bytes = max(
            peak_bytes,
            _live_bytes(
                frames, gt_expanded, dict(bank.items()), latents,
                [r.latent for r in results], sampled, decoded,
            ),
        )

        # metrics against ground truth, when available
        metrics = None
        if gt_expanded is not None:
            def compute_metrics():
                per_frame = []
                for i, res in enumerate(results):
                    gt_latent = stand_in_encode(gt_expanded[i], s)
                    entry = {
                        "frame": i,
                        "coverage_fraction": float(res.coverage.data.mean()),
                        "covered_psnr": psnr_masked(res.latent, gt_latent, res.coverage),
                        "decoded_psnr": psnr(decoded[i], gt_expanded[i]),
                        "decoded_ssim": ssim_full(decoded[i], gt_expanded[i]),
                    }
                    per_frame.append(entry)
                finite = [e["decoded_psnr"] for e in per_frame if math.isfinite(e["decoded_psnr"])]
                return {
                    "per_frame": per_frame,
                    "mean_decoded_ssim": float(
                        np.mean([e["decoded_ssim"] for e in per_frame])
                    ),
                    "mean_decoded_psnr": float(np.mean(finite)) if finite else "inf",
                }

            metrics = clock.run("metrics", compute_metrics)
            write_json(out / "metrics.json", metrics)

        report = BenchmarkReport(
            n_frames=n,
            window=config.window,
            chain_len=len(chain),
            warp_count_guided=prop.warp_count,
            warp_count_sequential=prop.sequential_warp_count,
            warp_count_all_pairs=n * (n - 1),
            compose_count=sum(r.compose_count for r in results),
            peak_live_bytes=peak_bytes,
            wall_time_s=dict(clock.times),
        )
        report.verify()
        write_json(out / "report.json", report.to_dict(include_timings=False))
        if config.write_timings:
            write_json(out / "timings.json", {"wall_time_s": clock.times})

        summary = {
            "status": "complete",
            "mode": config.mode,
            "n_frames": n,
            "chain": list(chain.indices),
            "warp_count": prop.warp_count,
            "artifacts": sorted(
                str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
                and p.name not in ("summary.json", "timings.json")
            ),
        }
        write_json(out / "summary.json", summary)
        return summary
    except StageError as exc:
        write_json(
            out / "summary.json",
            {"status": "incomplete", "failed_stage": exc.stage, "error": str(exc.cause)},
        )
        raise


BENCH_N_VALUES = (16, 32, 48, 64)
BENCH_M_VALUES = (2, 3, 4, 5, 6, 7)


def run_benchmark(
    seed: int,
    n_values=BENCH_N_VALUES,
    m_values=BENCH_M_VALUES,
    scene_kind: str = "static",
    out_csv: str | Path | None = None,
) -> list[BenchmarkReport]:
    """Run the chain/flows/propagation stages over an (N, m) grid of small
    synthetic scenes, verifying the warp-count ordering on every cell."""
    reports = []
    for n in n_values:
        for m in m_values:
            spec = CanvasSpec(16, 16, 16, 32, 0, 8, downsample=2)
            if scene_kind == "static":
                traj = TrajectorySpec(kind="static", start_y=8.0, start_x=8.0)
                world_w = 48
            elif scene_kind == "pan":
                traj = TrajectorySpec(kind="pan", start_y=8.0, start_x=8.0, delta_x=1.0)
                world_w = 48 + n
            else:
                raise ConfigError(f"unknown benchmark scene kind {scene_kind!r}")
            scene = generate_scene(seed, 48, world_w, 16, 16, n, traj, spec)
            clock = _StageClock()
            frames = scene.frames()
            chain = clock.run("chain", lambda: build_reference_chain(frames, m))
            mask = downscale_mask(make_outpaint_mask(spec), spec.downsample)

            def build_bank():
                bank = FlowBank()
                for a, b in sorted(required_flow_pairs(chain, n)):
                    bank.add(
                        a, b, downscale_flow(map_flow_to_canvas(scene.gt_flow(a, b), spec), spec.downsample)
                    )
                return bank

            bank = clock.run("flows", build_bank)
            latents = [stand_in_encode(f, spec.downsample) for f in frames]
            prop = clock.run(
                "propagate",
                lambda: propagate_sequence(
                    latents, [mask] * n, spec, chain, bank, LaplacianCompleter(tol=1e-8)
                ),
            )
            report = BenchmarkReport(
                n_frames=n,
                window=m,
                chain_len=len(chain),
                warp_count_guided=prop.warp_count,
                warp_count_sequential=prop.sequential_warp_count,
                warp_count_all_pairs=n * (n - 1),
                compose_count=sum(r.compose_count for r in prop.results),
                peak_live_bytes=_live_bytes(
                    frames, latents, dict(bank.items()), [r.latent for r in prop.results]
                ),
                wall_time_s=dict(clock.times),
            )
            report.verify()
            reports.append(report)
    if out_csv is not None:
        write_benchmark_csv(Path(out_csv), reports)
    return reports


_CSV_COLUMNS = (
    "n_frames", "window", "chain_len", "warp_count_guided", "warp_count_sequential",
    "warp_count_all_pairs", "compose_count", "peak_live_bytes",
    "chain_s", "flows_s", "propagate_s",
)


def write_benchmark_csv(path: Path, reports: list[BenchmarkReport]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.n_frames, r.window, r.chain_len, r.warp_count_guided,
                    r.warp_count_sequential, r.warp_count_all_pairs, r.compose_count,
                    r.peak_live_bytes,
                    f"{r.wall_time_s.get('chain', 0.0):.6f}",
                    f"{r.wall_time_s.get('flows', 0.0):.6f}",
                    f"{r.wall_time_s.get('propagate', 0.0):.6f}",
                ]
            )
