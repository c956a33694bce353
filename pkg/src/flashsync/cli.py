"""Command-line frontend: ``flashsync <command> ...``.

Commands share one JSON project file naming every camera::

    {
      "reference": "cam1",
      "threshold": 40,
      "tolerance_ms": null,
      "cameras": [
        {"id": "cam1",
         "timestamps": {"type": "csv", "path": "cam1.timestamps.csv"},
         "profiles": "cam1.profiles.csv",
         "events": "cam1.events.csv",
         "geometry": {"rows_active": 2160, "rows_before": 20, "rows_after": 420},
         "fps": 25}
      ]
    }

Relative paths are resolved against the project file's directory. Instead
of ``profiles`` a camera may give ``frames: {"path", "height", "width"}``
pointing at raw 8-bit grayscale frames.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .detect import (
    DEFAULT_MARGIN_FRACTION,
    DEFAULT_THRESHOLD,
    RowProfile,
    consecutive_diffs,
    detect_events,
    format_events_csv,
    format_profile_csv,
    load_events_csv,
    load_profile_csv,
    median_row_profiles,
    read_raw_frames,
    reject_boundary_events,
)
from .errors import DomainError, FlashSyncError, NumericalError
from .ingest import (
    TimestampTrack,
    detect_dropped_frames,
    format_timestamp_csv,
    load_rtp_records_csv,
    load_timestamp_csv,
    parse_mp4_timestamps,
    parse_rtp_timestamps,
)
from .simulate import (
    FlashSchedule,
    SimulatedCameraSpec,
    render_profiles,
    simulate_capture,
    spaced_flash_times,
    four_camera_rig,
)
from .syncsolve import SyncSolution, format_matched_csv, residual_report, synchronize
from .timebase import SensorGeometry, drift_lines_per_second, row_period

logger = logging.getLogger("flashsync")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

TIMESTAMP_TYPES = ("mp4", "rtp", "csv")


@dataclass(frozen=True)
class RawFrames:
    path: Path
    height: int
    width: int


@dataclass(frozen=True)
class CameraConfig:
    camera_id: str
    timestamp_type: str
    timestamp_path: Path
    events: Path
    profiles: Path | None = None
    frames: RawFrames | None = None
    geometry: SensorGeometry | None = None
    fps: float | None = None
    row_period_ms: float | None = None

    def frame_duration_ms(self) -> float | None:
        return None if self.fps is None else 1000.0 / self.fps


@dataclass(frozen=True)
class ProjectConfig:
    """Cameras of one synchronization project.

    Attributes:
        cameras: per-camera sources in file order
        reference: id of the reference camera
        threshold: detection threshold or ``"auto"``
        tolerance_ms: matching tolerance; half a frame when None
        margin_fraction: boundary margin for event rejection
    """

    cameras: tuple[CameraConfig, ...]
    reference: str
    threshold: float | str = DEFAULT_THRESHOLD
    tolerance_ms: float | None = None
    margin_fraction: float = DEFAULT_MARGIN_FRACTION

    def __post_init__(self) -> None:
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise DomainError("camera ids must be unique")
        if self.reference not in ids:
            raise DomainError(f"reference camera {self.reference!r} is not listed in cameras")

    def camera(self, camera_id: str) -> CameraConfig:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise DomainError(f"unknown camera {camera_id!r}")


def _camera_from_dict(data: dict, base: Path) -> CameraConfig:
    cid = str(data["id"])
    ts = data["timestamps"]
    if isinstance(ts, str):
        ts = {"type": "mp4" if ts.lower().endswith((".mp4", ".mov", ".m4v")) else "csv", "path": ts}
    if ts["type"] not in TIMESTAMP_TYPES:
        raise DomainError(f"camera {cid!r}: timestamp type must be one of {TIMESTAMP_TYPES}")
    frames = None
    if "frames" in data:
        f = data["frames"]
        frames = RawFrames(base / f["path"], int(f["height"]), int(f["width"]))
    geometry = SensorGeometry.from_dict(data["geometry"]) if data.get("geometry") else None
    fps = data.get("fps")
    if fps is not None and not float(fps) > 0:
        raise DomainError(f"camera {cid!r}: fps must be positive")
    return CameraConfig(
        cid,
        ts["type"],
        base / ts["path"],
        base / data.get("events", f"{cid}.events.csv"),
        base / data["profiles"] if data.get("profiles") else None,
        frames,
        geometry,
        None if fps is None else float(fps),
        None if data.get("row_period_ms") is None else float(data["row_period_ms"]),
    )


def load_config(path: str | Path) -> ProjectConfig:
    """Read and validate a project file.

    Raises:
        DomainError: missing keys, duplicate ids or an unknown reference
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: not valid JSON: {exc}") from None
    base = path.parent
    try:
        cameras = tuple(_camera_from_dict(c, base) for c in data["cameras"])
        reference = str(data.get("reference") or cameras[0].camera_id)
    except (KeyError, IndexError, TypeError) as exc:
        raise DomainError(f"{path}: incomplete camera entry ({exc!r})") from None
    threshold = data.get("threshold", DEFAULT_THRESHOLD)
    if threshold != "auto":
        threshold = float(threshold)
    tolerance = data.get("tolerance_ms")
    return ProjectConfig(
        cameras,
        reference,
        threshold,
        None if tolerance is None else float(tolerance),
        float(data.get("margin_fraction", DEFAULT_MARGIN_FRACTION)),
    )


def load_track(camera: CameraConfig) -> TimestampTrack:
    path = camera.timestamp_path
    if camera.timestamp_type == "mp4":
        with open(path, "rb") as fh:
            track = parse_mp4_timestamps(fh, camera.camera_id)
    elif camera.timestamp_type == "rtp":
        track = parse_rtp_timestamps(load_rtp_records_csv(path.read_text()), camera.camera_id)
    else:
        track = load_timestamp_csv(path.read_text(), camera.camera_id)
    if camera.fps is not None:
        track = TimestampTrack(track.camera_id, track.timescale, track.timestamps, 1000.0 / camera.fps)
    return track


def load_profiles(camera: CameraConfig) -> list[RowProfile]:
    if camera.profiles is not None:
        return load_profile_csv(camera.profiles.read_text())
    if camera.frames is not None:
        f = camera.frames
        stack = read_raw_frames(f.path, f.height, f.width)
        return [RowProfile(i, p) for i, p in enumerate(median_row_profiles(stack))]
    raise DomainError(f"camera {camera.camera_id!r} has neither profiles nor frames")


def _map(workers: int, fn: Callable, items: Sequence) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def cmd_extract(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.config).parent / "timestamps"
    out_dir.mkdir(parents=True, exist_ok=True)

    def extract(camera: CameraConfig) -> Path:
        track = load_track(camera)
        if camera.fps is not None:
            gaps = detect_dropped_frames(track, camera.fps)
            if gaps.total_missing:
                logger.warning(
                    "camera %s: %d dropped frames in %d gaps",
                    camera.camera_id, gaps.total_missing, len(gaps),
                )
        target = out_dir / f"{camera.camera_id}.timestamps.csv"
        target.write_text(format_timestamp_csv(track))
        return target

    for path in _map(args.workers, extract, config.cameras):
        print(path)
    return EXIT_OK


def cmd_detect(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    threshold = config.threshold if args.threshold is None else args.threshold
    if threshold != "auto":
        threshold = float(threshold)

    def detect(camera: CameraConfig) -> tuple[Path, int]:
        profiles = load_profiles(camera)
        rows = len(profiles[0]) if profiles else 0
        if camera.geometry is not None and profiles and rows != camera.geometry.rows_active:
            raise DomainError(
                f"camera {camera.camera_id!r}: profiles have {rows} rows, "
                f"geometry says {camera.geometry.rows_active}"
            )
        events = detect_events(consecutive_diffs(profiles), threshold, camera.camera_id)
        if rows:
            events = reject_boundary_events(events, rows, config.margin_fraction)
        camera.events.parent.mkdir(parents=True, exist_ok=True)
        camera.events.write_text(format_events_csv(events))
        return camera.events, len(events)

    for path, n in _map(args.workers, detect, config.cameras):
        print(f"{path}: {n} events")
    return EXIT_OK


def _parse_offsets(items: Sequence[str]) -> dict[str, float]:
    offsets = {}
    for item in items or ():
        cid, sep, value = item.partition("=")
        if not sep:
            raise DomainError(f"manual offset {item!r} is not of the form camera=ms")
        offsets[cid] = float(value)
    return offsets


def _known_row_periods(config: ProjectConfig) -> dict[str, float]:
    known = {}
    for c in config.cameras:
        if c.row_period_ms is not None:
            known[c.camera_id] = c.row_period_ms
        elif c.geometry is not None and c.fps is not None:
            known[c.camera_id] = row_period(c.geometry, 1000.0 / c.fps)
        else:
            raise DomainError(
                f"camera {c.camera_id!r} needs row_period_ms or geometry and fps "
                "for known row periods"
            )
    return known


def cmd_solve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    reference = args.reference or config.reference
    config.camera(reference)
    tracks = dict(
        zip(
            [c.camera_id for c in config.cameras],
            _map(args.workers, load_track, config.cameras),
        )
    )
    events = {c.camera_id: load_events_csv(c.events.read_text()) for c in config.cameras}
    geometries = {c.camera_id: c.geometry for c in config.cameras if c.geometry is not None}
    offsets = _parse_offsets(args.manual_offset)
    for cid in offsets:
        config.camera(cid)
    known = _known_row_periods(config) if args.row_periods == "known" else {}
    tolerance = args.tolerance_ms if args.tolerance_ms is not None else config.tolerance_ms
    solution, matched = synchronize(
        tracks,
        events,
        reference,
        geometries,
        tolerance,
        offsets,
        known,
        joint=args.mode == "joint",
    )
    base = Path(args.config).parent
    out = Path(args.output) if args.output else base / "solution.json"
    out.write_text(solution.to_json())
    matched_path = Path(args.matched) if args.matched else base / "matched.csv"
    matched_path.write_text(format_matched_csv(residual_report(solution, matched)))
    print(format_summary(solution))
    print(f"solution written to {out}")
    return EXIT_OK


def format_summary(solution: SyncSolution) -> str:
    lines = [
        f"reference {solution.reference_id}: t_row {solution.t_row_ref:.6f} ms",
        f"{'camera':<10} {'alpha':>16} {'beta_ms':>14} {'t_row_ms':>10} "
        f"{'lines/s':>8} {'std_ms':>7} {'n':>4}",
    ]
    for cid, p in solution.params.items():
        n = len(solution.residuals.get(cid, ()))
        lines.append(
            f"{cid:<10} {p.alpha:>16.10f} {p.beta:>14.4f} {p.t_row:>10.6f} "
            f"{drift_lines_per_second(p):>8.3f} {solution.camera_std.get(cid, 0.0):>7.3f} {n:>4}"
        )
    return "\n".join(lines)


def cmd_apply(args: argparse.Namespace) -> int:
    solution = SyncSolution.from_json(Path(args.solution).read_text())
    if args.camera != solution.reference_id and args.camera not in solution.params:
        raise DomainError(f"unknown camera {args.camera!r}")
    if args.timestamp_ms is not None:
        t_f = args.timestamp_ms
    else:
        if args.frame is None or args.timestamps is None:
            raise DomainError("give --timestamp-ms, or --frame together with --timestamps")
        track = load_timestamp_csv(Path(args.timestamps).read_text(), args.camera)
        t_f = track.timestamp_ms(args.frame)
    if args.row < 0:
        raise DomainError(f"row must be non-negative, got {args.row}")
    print(f"{solution.to_reference_time(args.camera, t_f, args.row):.6f}")
    return EXIT_OK


def _read_matched(path: Path) -> list[tuple[str, float, float]]:
    """(camera, reference time, residual) per matched pair of a matched CSV."""
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if lineno == 1 or not line.strip():
            continue
        f = line.split(",")
        if len(f) != 8:
            raise DomainError(f"{path}:{lineno}: expected 8 fields")
        out.append((f[0], float(f[6]), float(f[7])))
    return out


def format_timeline(
    records: Sequence[tuple[str, float, float]], solution: SyncSolution, width: int = 72
) -> str:
    """One text row per camera marking matched events along the reference time axis.

    ``o`` marks an event whose residual is within one camera std, ``x`` one
    outside it.
    """
    if not records:
        return "(no matched events)"
    times = np.array([r[1] for r in records])
    lo, hi = float(times.min()), float(times.max())
    span = max(hi - lo, 1e-9)
    left, right = f"{lo / 1000.0:.1f} s", f"{hi / 1000.0:.1f} s"
    lines = [" " * 12 + left + right.rjust(max(width - len(left), len(right) + 1))]
    for cid in solution.params:
        cells = [" "] * width
        std = solution.camera_std.get(cid, 0.0)
        for cam, t, res in records:
            if cam != cid:
                continue
            k = min(int((t - lo) / span * (width - 1) + 0.5), width - 1)
            cells[k] = "x" if std > 0 and abs(res) > std and cells[k] != "o" else "o"
        lines.append(f"{cid:<10} |{''.join(cells)}|")
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    solution = SyncSolution.from_json(Path(args.solution).read_text())
    print(format_summary(solution))
    matched = Path(args.matched) if args.matched else Path(args.solution).parent / "matched.csv"
    if matched.exists():
        records = _read_matched(matched)
        print()
        print(format_timeline(records, solution, args.width))
        if args.csv:
            with open(args.csv, "w") as fh:
                fh.write("camera,t_ref_ms,residual_ms\n")
                for cam, t, res in records:
                    fh.write(f"{cam},{t!r},{res!r}\n")
    return EXIT_OK


def default_scenario(
    row_noise: float = 0.0,
    drop_probability: float = 0.0,
    profile_noise: float = 2.0,
    exposure_ms: float = 0.0,
) -> list[SimulatedCameraSpec]:
    return four_camera_rig(row_noise, drop_probability, profile_noise, exposure_ms)


def _flash_frames(capture, camera_id: str, pad: int = 1) -> list[int]:
    cam = capture.cameras[camera_id]
    n = len(cam.track)
    frames = set()
    for e in cam.events:
        frames.update(range(max(e.frame - pad, 0), min(e.frame + pad, n - 1) + 1))
    return sorted(frames)


def cmd_simulate(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario:
        data = json.loads(Path(args.scenario).read_text())
        specs = [SimulatedCameraSpec.from_dict(s) for s in data["cameras"]]
    else:
        specs = default_scenario(
            args.row_noise, args.drop_probability, args.profile_noise, args.exposure_ms
        )
    duration = args.duration_s * 1000.0
    rng = np.random.default_rng([args.seed, 1000])
    margin = min(5000.0, duration / 10)
    times = spaced_flash_times(args.flashes, margin, duration - margin, args.min_separation_ms, rng)
    schedule = FlashSchedule(times, amplitude=args.amplitude)
    capture = simulate_capture(specs, schedule, duration, seed=args.seed)

    cameras = []
    truth = {"reference": capture.reference_id, "cameras": {}}
    for spec in specs:
        cid = spec.camera_id
        cam = capture.cameras[cid]
        (out / f"{cid}.timestamps.csv").write_text(format_timestamp_csv(cam.track))
        frames = None if args.full_profiles else _flash_frames(capture, cid)
        profiles = render_profiles(capture, cid, frames)
        (out / f"{cid}.profiles.csv").write_text(format_profile_csv(profiles))
        (out / f"{cid}.true_events.csv").write_text(
            format_events_csv(cam.observations(include_boundary=False, magnitude=schedule.amplitude))
        )
        gt = cam.ground_truth
        truth["cameras"][cid] = {
            "alpha": gt.alpha,
            "beta_ms": gt.beta,
            "t_row_ms": gt.t_row,
            "dropped_frames": [int(i) for i in cam.dropped_indices],
            "missed_flashes": list(cam.missed_flashes),
        }
        cameras.append(
            {
                "id": cid,
                "timestamps": {"type": "csv", "path": f"{cid}.timestamps.csv"},
                "profiles": f"{cid}.profiles.csv",
                "events": f"{cid}.events.csv",
                "geometry": spec.geometry.to_dict(),
                "fps": spec.fps,
            }
        )
    truth["flash_times_ms"] = list(schedule.times)
    truth["seed"] = args.seed
    config = {
        "reference": capture.reference_id,
        "threshold": DEFAULT_THRESHOLD,
        "tolerance_ms": None,
        "cameras": cameras,
    }
    scenario = {
        "cameras": [s.to_dict() for s in specs],
        "duration_s": args.duration_s,
        "flashes": args.flashes,
        "seed": args.seed,
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    (out / "scenario.json").write_text(json.dumps(scenario, indent=2) + "\n")
    print(out / "config.json")
    return EXIT_OK


def _threshold_arg(value: str) -> float | str:
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be a number or 'auto', got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flashsync",
        description="Synchronize rolling-shutter cameras from flash events.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="project JSON file")
        p.add_argument("--workers", type=int, default=1, help="cameras processed in parallel")

    p = sub.add_parser("extract", help="write per-camera frame timestamp CSVs")
    with_config(p)
    p.add_argument("--out-dir", help="output directory (default: <config dir>/timestamps)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", help="detect flash events in row profiles or raw frames")
    with_config(p)
    p.add_argument("--threshold", type=_threshold_arg, help="intensity threshold or 'auto'")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("solve", help="match events and estimate the time mappings")
    with_config(p)
    p.add_argument("--reference", help="reference camera id")
    p.add_argument("--tolerance-ms", type=float, help="matching tolerance")
    p.add_argument(
        "--manual-offset", action="append", metavar="CAMERA=MS",
        help="coarse offset t_ref - t_c for a camera (repeatable)",
    )
    p.add_argument("--mode", choices=("joint", "pairwise"), default="joint")
    p.add_argument(
        "--row-periods", choices=("free", "known"), default="free",
        help="estimate row periods or take them from the project file",
    )
    p.add_argument("-o", "--output", help="solution JSON (default: <config dir>/solution.json)")
    p.add_argument("--matched", help="matched-event CSV (default: <config dir>/matched.csv)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("apply", help="map a camera time position to reference time")
    p.add_argument("solution", help="solution JSON")
    p.add_argument("--camera", required=True)
    p.add_argument("--timestamp-ms", type=float, help="frame timestamp")
    p.add_argument("--frame", type=int, help="frame index, with --timestamps")
    p.add_argument("--timestamps", help="timestamp CSV of the camera")
    p.add_argument("--row", type=float, default=0.0)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("simulate", help="write a synthetic multi-camera dataset")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", help="JSON with a 'cameras' list of camera specs")
    p.add_argument("--flashes", type=int, default=15)
    p.add_argument("--duration-s", type=float, default=300.0)
    p.add_argument("--min-separation-ms", type=float, default=2000.0)
    p.add_argument("--amplitude", type=float, default=120.0)
    p.add_argument("--row-noise", type=float, default=0.0, help="row noise of true_events, rows")
    p.add_argument("--profile-noise", type=float, default=2.0, help="profile noise, intensity")
    p.add_argument("--drop-probability", type=float, default=0.0)
    p.add_argument("--exposure-ms", type=float, default=0.0)
    p.add_argument(
        "--full-profiles", action="store_true",
        help="render every frame instead of windows around flashes",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="print parameters and an event timeline")
    p.add_argument("solution", help="solution JSON")
    p.add_argument("--matched", help="matched-event CSV (default: next to the solution)")
    p.add_argument("--width", type=int, default=72)
    p.add_argument("--csv", help="also write the timeline as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"flashsync: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FlashSyncError, OSError, ValueError, KeyError) as exc:
        print(f"flashsync: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
