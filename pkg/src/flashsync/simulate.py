"""Synthetic rolling-shutter captures of flash events with known ground truth.

World time is the reference camera's clock. A camera with drift ``alpha`` and
shift ``beta`` stamps a world instant ``T`` with local time
``(T - beta) / alpha``; the local exposure start of row ``r`` in a frame
stamped ``t_f`` is ``t_f + (R0 + r) * T_row_local``.

Rewritten in the fitted form ``alpha * t_f + beta' + r * t_row'`` the
mapping to the reference has::

    t_row' = alpha * T_row_local
    beta'  = beta + alpha * R0 * T_row_local - R0_ref * T_row_ref

which is what :class:`GroundTruth` reports.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detect import DiffProfile, EventObservation, RowProfile
from .errors import DomainError
from .ingest.tracks import TimestampTrack
from .syncsolve import MatchedEventSet, MatchedPair
from .timebase import SensorGeometry, SyncParams

__all__ = [
    "SimulatedCameraSpec",
    "FlashSchedule",
    "GroundTruth",
    "SimulatedEvent",
    "CameraCapture",
    "Capture",
    "simulate_capture",
    "flash_response",
    "synth_flash_profile",
    "render_profiles",
    "spaced_flash_times",
    "four_camera_rig",
]

logger = logging.getLogger(__name__)

DEFAULT_DECAY_MS = 0.3
# flash light is treated as gone after this many decay constants
_DECAY_CUTOFF = 40.0


@dataclass(frozen=True)
class SimulatedCameraSpec:
    """One simulated camera.

    Attributes:
        camera_id: camera name
        fps: nominal frame rate
        geometry: sensor row counts
        true_alpha: clock drift, world = alpha * local + beta
        true_beta: clock shift in ms
        drop_probability: chance that a frame is discarded by the encoder
        row_noise_sigma: std of the event row localization error, rows
        profile_noise_sigma: std of the per-row profile noise, intensity
        exposure_ms: row exposure time
        first_timestamp_ms: local time of the first frame; random sub-frame
            phase when None
        timescale: ticks per second of the emitted timestamps
    """

    camera_id: str
    fps: float
    geometry: SensorGeometry
    true_alpha: float = 1.0
    true_beta: float = 0.0
    drop_probability: float = 0.0
    row_noise_sigma: float = 0.0
    profile_noise_sigma: float = 0.0
    exposure_ms: float = 0.0
    first_timestamp_ms: float | None = None
    timescale: int = 90_000

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise DomainError(f"{self.camera_id}: fps must be positive")
        if not 0.0 <= self.drop_probability < 1.0:
            raise DomainError(f"{self.camera_id}: drop_probability must lie in [0, 1)")
        if not self.true_alpha > 0:
            raise DomainError(f"{self.camera_id}: true_alpha must be positive")
        if self.row_noise_sigma < 0 or self.profile_noise_sigma < 0 or self.exposure_ms < 0:
            raise DomainError(f"{self.camera_id}: noise and exposure must be non-negative")

    @property
    def frame_ticks(self) -> int:
        return round(self.timescale / self.fps)

    @property
    def frame_duration_ms(self) -> float:
        return self.frame_ticks * 1000.0 / self.timescale

    @property
    def row_period_local(self) -> float:
        return self.frame_duration_ms / self.geometry.total_rows()

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "fps": self.fps,
            "geometry": self.geometry.to_dict(),
            "true_alpha": self.true_alpha,
            "true_beta": self.true_beta,
            "drop_probability": self.drop_probability,
            "row_noise_sigma": self.row_noise_sigma,
            "profile_noise_sigma": self.profile_noise_sigma,
            "exposure_ms": self.exposure_ms,
            "first_timestamp_ms": self.first_timestamp_ms,
            "timescale": self.timescale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SimulatedCameraSpec:
        data = dict(data)
        data["geometry"] = SensorGeometry.from_dict(data["geometry"])
        return cls(**data)


@dataclass(frozen=True)
class FlashSchedule:
    """Flash instants in world time.

    Attributes:
        times: flash onsets in ms
        duration: light duration in ms; unlimited (pure exponential) when None
        amplitude: peak intensity change on an 8-bit scale
        decay_constant: exponential decay of the flash light, ms
    """

    times: tuple[float, ...]
    duration: float | None = None
    amplitude: float = 120.0
    decay_constant: float = DEFAULT_DECAY_MS

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if self.duration is not None and not self.duration > 0:
            raise DomainError("flash duration must be positive")
        if not self.amplitude > 0:
            raise DomainError("flash amplitude must be positive")
        if self.decay_constant < 0:
            raise DomainError("decay constant must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """True mapping of a camera to the reference, in the fitted parametrization."""

    alpha: float
    beta: float
    t_row: float

    def params(self) -> SyncParams:
        return SyncParams(self.alpha, self.beta, self.t_row)


@dataclass(frozen=True)
class SimulatedEvent:
    """Where a flash onset landed in one camera.

    Attributes:
        flash_index: index into the schedule
        frame: frame index in the emitted (drop-affected) track
        row: observed edge row, true row plus localization noise
        true_row: exact fractional row of the onset
        boundary: the edge is at or past the first/last active row
    """

    flash_index: int
    frame: int
    row: float
    true_row: float
    boundary: bool

    def observation(self, camera_id: str, magnitude: float) -> EventObservation:
        return EventObservation(camera_id, self.frame, self.row, magnitude, "leading")


@dataclass
class CameraCapture:
    spec: SimulatedCameraSpec
    track: TimestampTrack
    events: list[SimulatedEvent]
    ground_truth: GroundTruth
    kept_indices: np.ndarray
    dropped_indices: np.ndarray
    missed_flashes: list[int] = field(default_factory=list)
    first_tick: int = 0

    def observations(self, include_boundary: bool = False, magnitude: float = 1.0) -> list[EventObservation]:
        return [
            e.observation(self.spec.camera_id, magnitude)
            for e in self.events
            if include_boundary or not e.boundary
        ]


@dataclass
class Capture:
    reference_id: str
    cameras: dict[str, CameraCapture]
    schedule: FlashSchedule
    seed: int | None = None

    def tracks(self) -> dict[str, TimestampTrack]:
        return {cid: cam.track for cid, cam in self.cameras.items()}

    def observations(self, include_boundary: bool = False) -> dict[str, list[EventObservation]]:
        return {
            cid: cam.observations(include_boundary, self.schedule.amplitude)
            for cid, cam in self.cameras.items()
        }

    def ground_truth(self) -> dict[str, GroundTruth]:
        return {cid: cam.ground_truth for cid, cam in self.cameras.items()}

    def ground_truth_matches(self, camera_id: str) -> MatchedEventSet:
        """Pairs of non-boundary events that belong to the same flash."""
        cam = self.cameras[camera_id]
        ref = self.cameras[self.reference_id]
        cam_ms = cam.track.timestamps_ms()
        ref_ms = ref.track.timestamps_ms()
        ref_by_flash = {e.flash_index: e for e in ref.events if not e.boundary}
        pairs = []
        for e in cam.events:
            r = ref_by_flash.get(e.flash_index)
            if e.boundary or r is None:
                continue
            pairs.append(
                MatchedPair(
                    e.frame, e.row, float(cam_ms[e.frame]),
                    r.frame, r.row, float(ref_ms[r.frame]),
                )
            )
        return MatchedEventSet(camera_id, self.reference_id, tuple(pairs))


def spaced_flash_times(
    n: int, start: float, stop: float, min_separation: float, rng: np.random.Generator
) -> tuple[float, ...]:
    """``n`` uniformly random sorted instants in ``[start, stop]`` at least ``min_separation`` apart."""
    slack = (stop - start) - (n - 1) * min_separation
    if n < 0 or slack < 0:
        raise DomainError(f"cannot place {n} flashes {min_separation} ms apart in [{start}, {stop}]")
    if n == 0:
        return ()
    u = np.sort(rng.uniform(0.0, slack, size=n))
    return tuple(float(t) for t in start + u + np.arange(n) * min_separation)


def _reference_spec(specs: Sequence[SimulatedCameraSpec], reference_id: str | None) -> SimulatedCameraSpec:
    ids = [s.camera_id for s in specs]
    if len(set(ids)) != len(ids):
        raise DomainError("camera ids must be unique")
    if reference_id is None:
        for s in specs:
            if s.true_alpha == 1.0 and s.true_beta == 0.0:
                return s
        raise DomainError("no camera qualifies as reference (alpha=1, beta=0)")
    for s in specs:
        if s.camera_id == reference_id:
            if s.true_alpha != 1.0 or s.true_beta != 0.0:
                raise DomainError("the reference camera must have alpha=1 and beta=0")
            return s
    raise DomainError(f"unknown reference camera {reference_id!r}")


def _camera_streams(seed: int | None, index: int) -> list[np.random.Generator]:
    # independent streams: clock phase, frame drops, row noise
    ss = np.random.SeedSequence([0 if seed is None else seed, index])
    return [np.random.default_rng(child) for child in ss.spawn(3)]


def simulate_capture(
    specs: Sequence[SimulatedCameraSpec],
    schedule: FlashSchedule,
    total_duration: float,
    seed: int | None = 0,
    reference_id: str | None = None,
) -> Capture:
    """Simulate timestamps and flash edge positions for every camera.

    Each camera records ``total_duration`` ms of its own clock, starting at
    ``first_timestamp_ms`` (or a random phase within the first frame).
    Frame 0 is never dropped. Flashes outside a camera's recording, or in a
    dropped frame, are skipped for that camera and listed in
    ``missed_flashes``.
    """
    ref_spec = _reference_spec(specs, reference_id)
    for s in specs:
        if schedule.duration is not None and schedule.duration >= s.frame_duration_ms:
            raise DomainError(
                f"flash duration {schedule.duration} ms is not shorter than "
                f"the {s.frame_duration_ms} ms frames of {s.camera_id}"
            )
    cameras = {}
    flash_times = np.asarray(schedule.times, dtype=np.float64)
    for index, spec in enumerate(specs):
        phase_rng, drop_rng, noise_rng = _camera_streams(seed, index)
        ticks = spec.frame_ticks
        if spec.first_timestamp_ms is None:
            first = int(phase_rng.integers(0, ticks))
        else:
            first = round(spec.first_timestamp_ms * spec.timescale / 1000.0)
        n_frames = int(math.floor(total_duration / spec.frame_duration_ms))
        if n_frames < 1:
            raise DomainError(f"{spec.camera_id}: capture shorter than one frame")
        drops = drop_rng.random(n_frames) < spec.drop_probability
        drops[0] = False
        kept = np.flatnonzero(~drops)
        track = TimestampTrack(
            spec.camera_id,
            spec.timescale,
            tuple(int(first + k * ticks) for k in kept),
            spec.frame_duration_ms,
        )
        noise = noise_rng.standard_normal(len(flash_times)) * spec.row_noise_sigma

        first_ms = first * 1000.0 / spec.timescale
        period = spec.row_period_local
        geometry = spec.geometry
        events, missed = [], []
        for i, world in enumerate(flash_times):
            local = (world - spec.true_beta) / spec.true_alpha
            k = int(math.floor((local - first_ms) / spec.frame_duration_ms))
            if not 0 <= k < n_frames:
                logger.info("flash %d at %.3f ms outside %s recording", i, world, spec.camera_id)
                missed.append(i)
                continue
            if drops[k]:
                missed.append(i)
                continue
            t_f = (first + k * ticks) * 1000.0 / spec.timescale
            true_row = (local - t_f) / period - geometry.rows_before
            row = true_row + noise[i]
            boundary = row <= 0 or row >= geometry.rows_active - 1
            frame = int(np.searchsorted(kept, k))
            events.append(SimulatedEvent(i, frame, float(row), float(true_row), bool(boundary)))

        truth = GroundTruth(
            spec.true_alpha,
            spec.true_beta
            + spec.true_alpha * geometry.rows_before * period
            - ref_spec.geometry.rows_before * ref_spec.row_period_local,
            spec.true_alpha * period,
        )
        cameras[spec.camera_id] = CameraCapture(
            spec, track, events, truth, kept, np.flatnonzero(drops), missed, first
        )
    return Capture(ref_spec.camera_id, cameras, schedule, seed)


def flash_response(
    row_starts: np.ndarray,
    exposure: float,
    onset: float,
    amplitude: float,
    decay_constant: float = DEFAULT_DECAY_MS,
    duration: float | None = None,
) -> np.ndarray:
    """Intensity added to rows whose exposure starts at ``row_starts``.

    A row integrating over ``[s, s + exposure]`` receives the overlapped
    fraction of the flash interval (a linear ramp across partially exposed
    rows), attenuated by ``exp(-(s - onset) / decay_constant)`` once the
    row starts after the onset. With zero exposure a row samples the flash
    at its start time. A zero decay constant disables the attenuation.
    """
    s = np.asarray(row_starts, dtype=np.float64)
    end = math.inf if duration is None else onset + duration
    if exposure > 0:
        overlap = np.minimum(s + exposure, end) - np.maximum(s, onset)
        fraction = np.clip(overlap, 0.0, None) / exposure
    else:
        fraction = ((s >= onset) & (s < end)).astype(np.float64)
    if decay_constant > 0:
        lag = np.maximum(s - onset, 0.0)
        attenuation = np.exp(-np.minimum(lag / decay_constant, _DECAY_CUTOFF))
        attenuation[lag > _DECAY_CUTOFF * decay_constant] = 0.0
    else:
        attenuation = 1.0
    return amplitude * fraction * attenuation


def synth_flash_profile(
    flash_time_in_frame: float,
    exposure: float,
    geometry: SensorGeometry,
    frame_duration: float,
    amplitude: float = 120.0,
    decay_constant: float = DEFAULT_DECAY_MS,
    flash_duration: float | None = None,
    frame: int = 0,
) -> DiffProfile:
    """Difference profile of a frame hit by a single flash.

    ``flash_time_in_frame`` is the onset relative to the frame timestamp.
    The onset falls on row ``flash_time_in_frame / T_row - R0``.
    """
    if not 0.0 <= flash_time_in_frame < frame_duration:
        raise DomainError("flash time must lie within the frame")
    period = frame_duration / geometry.total_rows()
    starts = (geometry.rows_before + np.arange(geometry.rows_active)) * period
    values = flash_response(
        starts, exposure, flash_time_in_frame, amplitude, decay_constant, flash_duration
    )
    return DiffProfile(frame, values)


def _base_scene(rows: int, camera_index: int) -> np.ndarray:
    r = np.arange(rows)
    return 45.0 + 15.0 * np.sin(r / (23.0 + 7 * camera_index)) + 5.0 * np.cos(r / 5.0)


def render_profiles(
    capture: Capture,
    camera_id: str,
    frames: Sequence[int] | None = None,
    quantize: bool = True,
) -> list[RowProfile]:
    """Median row profiles of a static scene lit by the scheduled flashes.

    Noise of each frame is seeded by (capture seed, camera, nominal frame),
    so rendering a subset of frames reproduces the same values.
    """
    cam = capture.cameras[camera_id]
    spec = cam.spec
    index = list(capture.cameras).index(camera_id)
    geometry = spec.geometry
    period = spec.row_period_local
    base = _base_scene(geometry.rows_active, index)
    stamps = cam.track.timestamps_ms()
    flashes = np.asarray(capture.schedule.times, dtype=np.float64)
    sched = capture.schedule
    tail = _DECAY_CUTOFF * sched.decay_constant + (sched.duration or 0.0) + spec.exposure_ms
    if frames is None:
        frames = range(len(stamps))
    offsets = (geometry.rows_before + np.arange(geometry.rows_active)) * period
    out = []
    for f in frames:
        starts_local = stamps[f] + offsets
        # world time of each row start; exposure stretches by alpha too
        starts = spec.true_alpha * starts_local + spec.true_beta
        exposure = spec.true_alpha * spec.exposure_ms
        values = base.copy()
        lo, hi = starts[0] - tail - exposure, starts[-1] + exposure
        for onset in flashes[(flashes >= lo) & (flashes <= hi)]:
            values += flash_response(
                starts, exposure, onset, sched.amplitude, sched.decay_constant, sched.duration
            )
        if spec.profile_noise_sigma > 0:
            nominal = int(cam.kept_indices[f])
            rng = np.random.default_rng([0 if capture.seed is None else capture.seed, index, nominal, 7])
            values += rng.standard_normal(values.size) * spec.profile_noise_sigma
        if quantize:
            values = np.clip(np.rint(values), 0, 255)
        out.append(RowProfile(int(f), values))
    return out


def four_camera_rig(
    row_noise_sigma: float = 0.0,
    drop_probability: float = 0.0,
    profile_noise_sigma: float = 0.0,
    exposure_ms: float = 0.0,
) -> list[SimulatedCameraSpec]:
    """Four cameras with drifts, shifts and row periods of a sports-arena rig.

    cam1 (reference) and cam2 are 2160-row sensors at 25 fps; cam3 and cam4
    are 720-row sensors at 30 fps. Noise and drops apply to every camera.
    """
    common = dict(
        drop_probability=drop_probability,
        row_noise_sigma=row_noise_sigma,
        profile_noise_sigma=profile_noise_sigma,
        exposure_ms=exposure_ms,
    )
    return [
        SimulatedCameraSpec("cam1", 25.0, SensorGeometry(2160, 20, 420), **common),
        SimulatedCameraSpec(
            "cam2", 25.0, SensorGeometry(2160, 20, 486),
            true_alpha=1 + 8.39e-6, true_beta=6066.7, **common,
        ),
        SimulatedCameraSpec(
            "cam3", 30.0, SensorGeometry(720, 10, 116),
            true_alpha=1 - 3.12e-6, true_beta=-37500.2, **common,
        ),
        SimulatedCameraSpec(
            "cam4", 30.0, SensorGeometry(720, 10, 75),
            true_alpha=1 - 8.35e-6, true_beta=-23858.7, **common,
        ),
    ]
