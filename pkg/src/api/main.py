from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import coloredlogs
import numpy as np
import orjson
import typer
from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from tqdm import tqdm

import src.api.constants as C
from src.api.run_manifest import JobStatus, RunManifest
from src.core.camera_geometry import ExtentStats
from src.core.detection_metrics import binned_recall, default_bin_edges, write_binned_recall_csv, write_report
from src.core.errors import (
    ConfigError,
    DivergenceError,
    EmptySurfaceError,
    GeometryDomainError,
    LabelParseError,
    NonConvergenceError,
    SignAmbiguityError,
    UnsupportedGeometryError,
)
from src.core.graphs.build_evaluation_graph import build_evaluation_graph
from src.core.kitti_dataset import (
    compute_extent_stats,
    list_frame_ids,
    load_extent_stats,
    load_frame,
    load_frames,
    load_predictions,
    parse_calibration,
    parse_label_line,
    read_label_path,
    record_to_box3d,
    save_extent_stats,
    serialize_label_file,
)
from src.core.lifting_loss import COMPONENTS, OptimConfig, convergence_study, mean_trace, write_trace_csv
from src.core.nodes.detection_filter_node import filter_frame
from src.core.shape_space import Codebook, class_medians, latent_to_tsdf, marching_cubes, slerp
from src.core.state import RunConfig
from src.core.texturing_augmentation import PlacementConfig, SceneImage, augment_frame, fill_ignore_regions, load_mesh_bank
from src.core.tools.image_io import read_depth, read_png, write_depth, write_png
from src.core.tools.mesh_io import write_obj
from src.core.tools.plotting import plot_binned_recall, plot_loss_traces, plot_pr_curves

load_dotenv()

logger = logging.getLogger("roi10d")
console = Console()

app = typer.Typer(
    help="Monocular 3D lifting toolkit: evaluation, lifting-loss experiments, shape space and augmentation.",
    no_args_is_help=True,
    add_completion=False,
)


def _env(name: str) -> str:
    return f"{C.ENV_PREFIX}{name}"


# ============================================================
# Helper Functions
# ============================================================

@contextmanager
def exit_on_error():
    """Map domain failures to exit codes."""
    try:
        yield
    except (ConfigError, ValidationError) as e:
        logger.error("Configuration error: %s", e)
        raise typer.Exit(C.EXIT_CONFIG_ERROR)
    except (NonConvergenceError, DivergenceError, EmptySurfaceError, SignAmbiguityError) as e:
        logger.error("Numerical failure: %s", e)
        raise typer.Exit(C.EXIT_NUMERICAL_ERROR)
    except (LabelParseError, UnsupportedGeometryError, GeometryDomainError, OSError) as e:
        logger.error("Data error: %s", e)
        raise typer.Exit(C.EXIT_DATA_ERROR)


def save_run_config(cfg: RunConfig) -> Path:
    """Write the resolved run config next to the outputs."""
    path = cfg.out / C.RUN_CONFIG_JSON
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(cfg.model_dump(mode="json"), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return path


def print_table(title: str, columns: List[str], rows: List[List[str]]) -> None:
    table = Table(title=title)
    for col in columns:
        table.add_column(col)
    for row in rows:
        table.add_row(*row)
    console.print(table)


@app.callback()
def main(
    log_level: str = typer.Option(C.LOG_LEVEL, "--log-level", envvar=_env("LOG_LEVEL"), help="Logging level"),
):
    coloredlogs.install(level=log_level.upper(), fmt=C.LOG_FORMAT)


# ============================================================
# evaluate
# ============================================================

@app.command()
def evaluate(
    data_root: Path = typer.Option(..., "--data-root", envvar=_env("DATA_ROOT")),
    pred_dir: Path = typer.Option(..., "--pred-dir", envvar=_env("PRED_DIR")),
    split: Optional[Path] = typer.Option(None, "--split", envvar=_env("SPLIT")),
    class_name: str = typer.Option(C.DEFAULT_CLASS, "--class", envvar=_env("CLASS_NAME")),
    nms2d: float = typer.Option(C.DEFAULT_NMS_2D, "--nms2d", envvar=_env("NMS2D")),
    nms_bev: float = typer.Option(C.DEFAULT_NMS_BEV, "--nms-bev", envvar=_env("NMS_BEV")),
    iou: float = typer.Option(C.DEFAULT_IOU, "--iou", envvar=_env("IOU")),
    ap_points: int = typer.Option(C.DEFAULT_AP_POINTS, "--ap-points", envvar=_env("AP_POINTS")),
    out: Path = typer.Option(Path("out"), "--out", envvar=_env("OUT")),
    workers: int = typer.Option(1, "--workers", envvar=_env("WORKERS")),
):
    """2D / BEV / 3D average precision after 2D and BEV suppression."""
    with exit_on_error():
        cfg = RunConfig(
            subcommand="evaluate", data_root=data_root, pred_dir=pred_dir, split=split, class_name=class_name,
            nms2d=nms2d, nms_bev=nms_bev, iou=iou, ap_points=ap_points, out=out, workers=workers,
        )
        graph = build_evaluation_graph().compile()
        result = graph.invoke({"config": cfg}, config={"configurable": cfg.model_dump()})
        report = result["report"]
        cfg = result["config"]

        json_path, _ = write_report(report, cfg.out)
        save_run_config(cfg)
        for metric in ("2d", "bev", "3d"):
            curves = {
                f"{e.difficulty} @ {e.iou_threshold:.2f}": (e.recall, e.precision)
                for e in report.entries
                if e.metric == metric and e.ap is not None
            }
            plot_pr_curves(
                curves, cfg.out / f"pr_{metric}.svg", title=f"{cfg.class_name} {metric.upper()}",
                provenance=cfg.model_dump(mode="json"),
            )

        rows = [
            [e.metric, e.difficulty, f"{e.iou_threshold:.2f}", "n/a" if e.ap is None else f"{100 * e.ap:.2f}"]
            for e in report.entries
        ]
        print_table(f"AP ({report.ap_points}-point) for {report.class_name}", ["metric", "difficulty", "IoU", "AP"], rows)
        if report.missing_frames:
            logger.warning("%d frame(s) had no predictions", len(report.missing_frames))
        logger.info("Report written to %s", json_path)


# ============================================================
# optimize-demo
# ============================================================

@app.command("optimize-demo")
def optimize_demo(
    calib: Path = typer.Option(..., "--calib", help="KITTI calibration file with P2"),
    label_line: Optional[str] = typer.Option(None, "--label-line", help="Target object as a KITTI label line"),
    label_file: Optional[Path] = typer.Option(None, "--label-file", help="Use the first non-DontCare object of this file"),
    stats_path: Optional[Path] = typer.Option(None, "--stats", envvar=_env("STATS")),
    seeds: int = typer.Option(C.DEFAULT_DEMO_SEEDS, "--seeds"),
    iterations: int = typer.Option(C.DEFAULT_ITERATIONS, "--iterations"),
    warmup: int = typer.Option(C.DEFAULT_WARMUP_STEPS, "--warmup"),
    tolerance: float = typer.Option(C.DEFAULT_CONVERGENCE_TOL, "--tolerance"),
    seed: int = typer.Option(0, "--seed", envvar=_env("SEED")),
    out: Path = typer.Option(Path("out"), "--out", envvar=_env("OUT")),
):
    """Controlled lifting-loss experiment from perturbed initialisations."""
    with exit_on_error():
        if (label_line is None) == (label_file is None):
            raise ConfigError("give exactly one of --label-line or --label-file")
        cfg = RunConfig(
            subcommand="optimize-demo", seed=seed, out=out,
            options={
                "calib": str(calib), "label_line": label_line, "label_file": None if label_file is None else str(label_file),
                "stats": None if stats_path is None else str(stats_path), "seeds": seeds, "iterations": iterations,
                "warmup": warmup, "tolerance": tolerance,
            },
        )
        if label_line is not None:
            target_rec = parse_label_line(label_line)
        else:
            candidates = [r for r in read_label_path(label_file) if not r.is_dontcare]
            if not candidates:
                raise ConfigError(f"{label_file} has no object to use as target")
            target_rec = candidates[0]
        K = parse_calibration(calib.read_text(encoding="utf-8")).intrinsics
        stats = load_extent_stats(stats_path) if stats_path else ExtentStats(*C.DEFAULT_CAR_MEAN, *C.DEFAULT_CAR_STD)

        config = OptimConfig(iterations=iterations, warmup_steps=warmup)
        study = convergence_study(record_to_box3d(target_rec), stats, K, n_seeds=seeds, seed=seed, config=config, tolerance=tolerance)

        write_trace_csv(study.traces, cfg.out / C.TRACE_CSV)
        save_run_config(cfg)
        means = mean_trace(study.traces)
        magnitudes = {c: means[:, 1 + i] for i, c in enumerate(COMPONENTS)} if len(means) else None
        plot_loss_traces(
            [t.losses for t in study.traces], magnitudes, cfg.out / C.TRACE_SVG, warmup_steps=warmup,
            provenance=cfg.model_dump(mode="json"),
        )

        print_table(
            "Lifting loss experiment",
            ["seeds", "converged", "diverged", "median final loss [m]"],
            [[str(seeds), f"{100 * study.success_rate:.1f}%", str(study.diverged), f"{np.median(study.final_losses):.3g}"]],
        )


# ============================================================
# shape
# ============================================================

@app.command()
def shape(
    codebook_dir: Path = typer.Option(..., "--codebook", envvar=_env("CODEBOOK")),
    tags: List[str] = typer.Option([], "--tag", help="Class tag for medians (repeatable); default all"),
    pairs: List[str] = typer.Option([], "--pair", help="Interpolate between two entry ids, as id_a:id_b"),
    steps: int = typer.Option(C.DEFAULT_STRIP_STEPS, "--steps"),
    out: Path = typer.Option(Path("out"), "--out", envvar=_env("OUT")),
):
    """Per-class geometric medians and interpolation strips as meshes."""
    with exit_on_error():
        cfg = RunConfig(
            subcommand="shape", out=out,
            options={"codebook": str(codebook_dir), "tags": list(tags), "pairs": list(pairs), "steps": steps},
        )
        if not (codebook_dir / "index.json").is_file():
            raise ConfigError(f"no codebook index in {codebook_dir}")
        book = Codebook.load(codebook_dir)
        if not len(book):
            raise ConfigError("codebook is empty")
        try:
            medians = class_medians(book, tags or None)
        except GeometryDomainError as e:
            raise ConfigError(str(e)) from e

        (cfg.out / "medians").mkdir(parents=True, exist_ok=True)
        save_run_config(cfg)
        (cfg.out / C.MEDIANS_JSON).write_bytes(
            orjson.dumps({tag: s for tag, s in medians.items()}, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY)
        )
        for tag, s in medians.items():
            write_obj(cfg.out / "medians" / f"{tag}.obj", *_mesh_arrays(latent_to_tsdf(s, book)))

        by_id = {e.id: e for e in book.entries}
        for pair in pairs:
            a_id, _, b_id = pair.partition(":")
            if a_id not in by_id or b_id not in by_id:
                raise ConfigError(f"unknown codebook ids in pair {pair!r}")
            for i, t in enumerate(np.linspace(0.0, 1.0, steps)):
                s = slerp(by_id[a_id].latent, by_id[b_id].latent, float(t))
                write_obj(cfg.out / "strips" / f"{a_id}_{b_id}_{i:02d}.obj", *_mesh_arrays(latent_to_tsdf(s, book)))

        print_table("Medians", ["tag", "nearest entry"], [[tag, book.entries[book.nearest_index(s)].id] for tag, s in medians.items()])


def _mesh_arrays(grid):
    mesh = marching_cubes(grid)
    return mesh.vertices, mesh.triangles


# ============================================================
# augment
# ============================================================

@app.command()
def augment(
    data_root: Path = typer.Option(..., "--data-root", envvar=_env("DATA_ROOT")),
    mesh_bank: Path = typer.Option(..., "--mesh-bank", envvar=_env("MESH_BANK")),
    split: Optional[Path] = typer.Option(None, "--split", envvar=_env("SPLIT")),
    k_max: int = typer.Option(C.DEFAULT_K_MAX, "--k-max"),
    z_min: float = typer.Option(C.DEFAULT_Z_MIN, "--z-min"),
    z_max: float = typer.Option(C.DEFAULT_Z_MAX, "--z-max"),
    max_perturbation_deg: float = typer.Option(C.DEFAULT_MAX_PERTURBATION_DEG, "--max-perturbation-deg"),
    perturbation: str = typer.Option("yaw", "--perturbation", help="yaw or so3"),
    retries: int = typer.Option(C.DEFAULT_PLACEMENT_RETRIES, "--retries"),
    noise_ignore: bool = typer.Option(False, "--noise-ignore", help="Fill DontCare regions with uniform noise"),
    seed: int = typer.Option(0, "--seed", envvar=_env("SEED")),
    out: Path = typer.Option(Path("out"), "--out", envvar=_env("OUT")),
    workers: int = typer.Option(1, "--workers", envvar=_env("WORKERS")),
):
    """Write an augmented copy of a dataset with synthetic cars inserted."""
    with exit_on_error():
        cfg = RunConfig(
            subcommand="augment", data_root=data_root, split=split, seed=seed, out=out, workers=workers,
            options={
                "mesh_bank": str(mesh_bank), "k_max": k_max, "z_min": z_min, "z_max": z_max,
                "max_perturbation_deg": max_perturbation_deg, "perturbation": perturbation,
                "retries": retries, "noise_ignore": noise_ignore,
            },
        )
        cfg.validate_paths()
        if k_max < 0:
            raise ConfigError("--k-max must be >= 0")
        if perturbation not in ("yaw", "so3"):
            raise ConfigError(f"--perturbation must be yaw or so3, got {perturbation!r}")
        try:
            placement = PlacementConfig(
                z_min=z_min, z_max=z_max, max_perturbation_deg=max_perturbation_deg,
                perturbation=perturbation, retries=retries,
            )
        except GeometryDomainError as e:
            raise ConfigError(str(e)) from e

        frame_ids = list_frame_ids(cfg.data_root, cfg.split)
        copy_only = k_max == 0 and not noise_ignore
        bank = load_mesh_bank(mesh_bank) if k_max > 0 else []
        manifest = RunManifest(cfg.out / C.MANIFEST_JSON, seed, k_max, frame_ids, config=cfg.model_dump(mode="json"))

        def process(index: int, frame_id: str) -> List[str]:
            return _augment_one(cfg.data_root, cfg.out, frame_id, index, seed, bank, k_max, placement, copy_only, noise_ignore)

        try:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(process, i, fid) for i, fid in enumerate(frame_ids)]
                for fid, fut in tqdm(list(zip(frame_ids, futures)), desc="augment", unit="frame"):
                    job = manifest.get_job(fid)
                    try:
                        job.update_status(JobStatus.COMPLETED, mesh_ids=fut.result())
                    except Exception as e:
                        job.update_status(JobStatus.FAILED, error=str(e))
                        manifest.aborted = True
                        raise
        finally:
            manifest.flush()

        print_table(
            "Augmentation",
            ["frames", "placements", "manifest"],
            [[str(len(frame_ids)), str(manifest.total_placements), str(manifest.path)]],
        )


def _augment_one(
    root: Path,
    out: Path,
    frame_id: str,
    index: int,
    seed: int,
    bank,
    k_max: int,
    placement: PlacementConfig,
    copy_only: bool,
    noise_ignore: bool,
) -> List[str]:
    sources = {
        "label_2": root / "label_2" / f"{frame_id}.txt",
        "calib": root / "calib" / f"{frame_id}.txt",
        "image_2": root / "image_2" / f"{frame_id}.png",
        "depth": root / "depth" / f"{frame_id}.bin",
    }
    if copy_only:
        for sub, src in sources.items():
            if src.exists():
                (out / sub).mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, out / sub / src.name)
        return []

    frame = load_frame(root, frame_id)
    if frame.calibration is None or frame.image_path is None:
        raise OSError(f"frame {frame_id} has no calibration or image")
    rgb = read_png(frame.image_path)
    depth = read_depth(frame.depth_path, rgb.shape[:2]) if frame.depth_path else None
    scene = SceneImage(rgb, frame.calibration.intrinsics, depth)

    rng = np.random.default_rng([seed, index])
    if noise_ignore:
        scene = fill_ignore_regions(scene, [r.bbox2d for r in frame.labels if r.is_dontcare], rng)
    result = augment_frame(scene, frame.labels, bank, k_max, rng, placement)

    write_png(out / "image_2" / f"{frame_id}.png", result.image.rgb)
    if result.image.depth is not None:
        write_depth(out / "depth" / f"{frame_id}.bin", result.image.depth)
    label_path = out / "label_2" / f"{frame_id}.txt"
    label_path.parent.mkdir(parents=True, exist_ok=True)
    label_path.write_text(serialize_label_file(result.labels), encoding="utf-8")
    (out / "calib").mkdir(parents=True, exist_ok=True)
    shutil.copyfile(sources["calib"], out / "calib" / sources["calib"].name)
    return [p.mesh_id for p in result.placements]


# ============================================================
# recall-bins
# ============================================================

@app.command("recall-bins")
def recall_bins(
    data_root: Path = typer.Option(..., "--data-root", envvar=_env("DATA_ROOT")),
    pred_dir: Path = typer.Option(..., "--pred-dir", envvar=_env("PRED_DIR")),
    split: Optional[Path] = typer.Option(None, "--split", envvar=_env("SPLIT")),
    class_name: str = typer.Option(C.DEFAULT_CLASS, "--class", envvar=_env("CLASS_NAME")),
    nms2d: float = typer.Option(C.DEFAULT_NMS_2D, "--nms2d", envvar=_env("NMS2D")),
    nms_bev: float = typer.Option(C.DEFAULT_NMS_BEV, "--nms-bev", envvar=_env("NMS_BEV")),
    depth_bin_m: float = typer.Option(C.DEFAULT_DEPTH_BIN_M, "--depth-bin-m", envvar=_env("DEPTH_BIN_M")),
    azimuth_bin_deg: float = typer.Option(C.DEFAULT_AZIMUTH_BIN_DEG, "--azimuth-bin-deg", envvar=_env("AZIMUTH_BIN_DEG")),
    out: Path = typer.Option(Path("out"), "--out", envvar=_env("OUT")),
    workers: int = typer.Option(1, "--workers", envvar=_env("WORKERS")),
):
    """Recall binned by ground-truth depth and azimuth."""
    with exit_on_error():
        cfg = RunConfig(
            subcommand="recall-bins", data_root=data_root, pred_dir=pred_dir, split=split, class_name=class_name,
            nms2d=nms2d, nms_bev=nms_bev, depth_bin_m=depth_bin_m, azimuth_bin_deg=azimuth_bin_deg,
            out=out, workers=workers,
        )
        cfg.validate_paths(need_predictions=True)
        frame_ids = list_frame_ids(cfg.data_root, cfg.split)
        frames = load_frames(cfg.data_root, frame_ids, workers=cfg.workers)
        predictions, _ = load_predictions(cfg.pred_dir, frame_ids, workers=cfg.workers)
        preds = [filter_frame(predictions[fid], cfg.class_name, cfg.nms2d, cfg.nms_bev) for fid in frame_ids]
        gts = [f.labels for f in frames]

        results = []
        for bin_spec, width, label in (("depth", cfg.depth_bin_m, "depth [m]"), ("azimuth", cfg.azimuth_bin_deg, "azimuth [rad]")):
            edges = default_bin_edges(bin_spec, width, C.DEFAULT_MAX_DEPTH_M)
            res = binned_recall(preds, gts, bin_spec, edges, accept=C.RECALL_ACCEPT_IOU, class_name=cfg.class_name)
            results.append(res)
            recall = np.array([np.nan if r is None else r for r in res.recall])
            plot_binned_recall(
                res.edges, recall, res.counts, cfg.out / f"recall_{bin_spec}.svg", label,
                provenance=cfg.model_dump(mode="json"),
            )
        write_binned_recall_csv(results, cfg.out / C.RECALL_CSV)
        save_run_config(cfg)

        rows = [[r.bin_spec, str(r.total), str(int(r.matched.sum()))] for r in results]
        print_table("Binned recall", ["bins", "ground truth", "matched"], rows)


# ============================================================
# stats
# ============================================================

@app.command()
def stats(
    data_root: Path = typer.Option(..., "--data-root", envvar=_env("DATA_ROOT")),
    split: Optional[Path] = typer.Option(None, "--split", envvar=_env("SPLIT")),
    class_name: str = typer.Option(C.DEFAULT_CLASS, "--class", envvar=_env("CLASS_NAME")),
    out: Path = typer.Option(Path("out"), "--out", envvar=_env("OUT")),
    workers: int = typer.Option(1, "--workers", envvar=_env("WORKERS")),
):
    """Mean and standard deviation of object extents over a training split."""
    with exit_on_error():
        cfg = RunConfig(subcommand="stats", data_root=data_root, split=split, class_name=class_name, out=out, workers=workers)
        cfg.validate_paths()
        frames = load_frames(cfg.data_root, list_frame_ids(cfg.data_root, cfg.split), workers=cfg.workers)
        records = [r for f in frames for r in f.labels]
        extent_stats = compute_extent_stats(records, cfg.class_name)
        count = sum(1 for r in records if r.class_name == cfg.class_name)
        path = save_extent_stats(extent_stats, cfg.out / C.STATS_JSON, cfg.class_name, count)
        save_run_config(cfg)

        rows: List[List[str]] = [
            [axis, f"{m:.3f}", f"{s:.3f}"] for axis, m, s in zip(("w", "h", "l"), extent_stats.mean, extent_stats.std)
        ]
        print_table(f"Extent statistics for {cfg.class_name} ({count} objects)", ["axis", "mean [m]", "std [m]"], rows)
        logger.info("Stats written to %s", path)


if __name__ == "__main__":
    app()
