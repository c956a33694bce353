"""Event matching and least-squares estimation of camera time mappings.

For every matched event pair, camera ``c`` observed at (timestamp ``t_c``,
row ``r_c``) and the reference at (``t_ref``, ``r_ref``), one equation is
added::

    alpha_c * t_c + beta_c + r_c * t_row_c = t_ref + r_ref * t_row_ref

Unknowns are ``alpha_c, beta_c, t_row_c`` per camera plus the shared
``t_row_ref``; row periods can be fixed from sensor datasheets instead.

The system is solved with column-pivoted QR. Timestamps are centered per
block (mid-range) and ``alpha`` is solved as ``alpha - 1``; both are exact
reparametrizations undone after the solve. Without them the 1e-5 drift is
lost against 1e5 ms timestamps.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .detect import EventObservation
from .errors import (
    AmbiguousOffsetError,
    DomainError,
    MatchingError,
    NumericalError,
    SingularSystemError,
)
from .ingest.tracks import TimestampTrack
from .timebase import SensorGeometry, SyncParams, apply_sync, drift_lines_per_second, row_period

__all__ = [
    "ROW_PERIODS_FREE",
    "ROW_PERIODS_KNOWN",
    "TimedEvent",
    "OffsetEstimate",
    "MatchedPair",
    "MatchedEventSet",
    "SyncSolution",
    "ResidualRow",
    "ResidualReport",
    "timed_events",
    "estimate_coarse_offset",
    "match_events",
    "solve_pairwise",
    "solve_joint",
    "residual_report",
    "synchronize",
    "format_matched_csv",
]

logger = logging.getLogger(__name__)

ROW_PERIODS_FREE = "row_periods_free"
ROW_PERIODS_KNOWN = "row_periods_known"

# relative pivot size below which a QR column counts as dependent
RANK_TOLERANCE = 1e-10
# frame timestamps closer than this to one affine relation carry no row-period information
AFFINE_TOLERANCE_MS = 1e-6


@dataclass(frozen=True)
class TimedEvent:
    """A leading-edge event with its frame timestamp.

    Attributes:
        frame: frame index in the camera stream
        row: edge row
        frame_time: frame timestamp in ms
        time: approximate camera-local time of the edge, used only for matching
    """

    frame: int
    row: float
    frame_time: float
    time: float


def timed_events(
    events: Iterable[EventObservation],
    track: TimestampTrack,
    geometry: SensorGeometry | None = None,
    frame_duration: float | None = None,
) -> list[TimedEvent]:
    """Attach frame timestamps to leading-edge events.

    With a geometry the matching time includes the row offset within the
    frame; without one it is the frame timestamp.
    """
    stamps = track.timestamps_ms()
    period = 0.0
    offset_rows = 0
    if geometry is not None:
        if frame_duration is None:
            frame_duration = track.frame_duration_ms()
        period = row_period(geometry, frame_duration)
        offset_rows = geometry.rows_before
    out = []
    for e in events:
        if e.polarity != "leading":
            continue
        if not 0 <= e.frame < len(stamps):
            raise DomainError(
                f"event in frame {e.frame} outside track {track.camera_id!r} "
                f"with {len(stamps)} frames"
            )
        t_f = float(stamps[e.frame])
        out.append(TimedEvent(e.frame, e.row, t_f, t_f + (offset_rows + e.row) * period))
    return out


@dataclass(frozen=True)
class OffsetEstimate:
    """Coarse shift such that ``t_ref ~ t_c + offset``.

    Attributes:
        offset: shift in ms
        inliers: event pairs agreeing within half a frame at that shift
    """

    offset: float
    inliers: int


def _as_times(events) -> np.ndarray:
    return np.array([e.time if isinstance(e, TimedEvent) else float(e) for e in events])


def estimate_coarse_offset(
    events_c: Sequence[TimedEvent | float],
    events_ref: Sequence[TimedEvent | float],
    nominal_frame_duration: float,
) -> OffsetEstimate:
    """Shift between two event sequences by voting over all pairwise differences.

    The candidate with most pairs within half a frame wins (ties go to the
    smallest absolute shift). The returned offset is the median difference
    of the winning inlier pairs.

    Raises:
        MatchingError: either sequence is empty
        AmbiguousOffsetError: no shift is supported by two or more pairs
    """
    if not nominal_frame_duration > 0:
        raise DomainError("nominal_frame_duration must be positive")
    tc, tr = _as_times(events_c), _as_times(events_ref)
    if tc.size == 0 or tr.size == 0:
        raise MatchingError(
            f"cannot align event sequences with {tc.size} and {tr.size} events"
        )
    tol = 0.5 * nominal_frame_duration
    flat = np.sort((tr[np.newaxis, :] - tc[:, np.newaxis]).ravel())
    candidates = np.unique(flat)
    counts = np.searchsorted(flat, candidates + tol, side="right") - np.searchsorted(
        flat, candidates - tol, side="left"
    )
    best_count = int(counts.max())
    if best_count < 2:
        raise AmbiguousOffsetError(
            "no shift aligns two or more events within half a frame; "
            "supply a manual offset for this camera"
        )
    winners = candidates[counts == best_count]
    best = float(winners[np.argmin(np.abs(winners))])
    inlier_diffs = flat[np.abs(flat - best) <= tol]
    return OffsetEstimate(float(np.median(inlier_diffs)), best_count)


@dataclass(frozen=True)
class MatchedPair:
    frame_c: int
    row_c: float
    t_c: float
    frame_ref: int
    row_ref: float
    t_ref: float


@dataclass(frozen=True)
class MatchedEventSet:
    """Event correspondences between one camera and the reference.

    Attributes:
        camera_id: camera being synchronized
        reference_id: reference camera
        pairs: matched events with frame timestamps in ms
        unmatched_camera: indices of camera events left without a partner
        unmatched_reference: indices of reference events left without a partner
    """

    camera_id: str
    reference_id: str
    pairs: tuple[MatchedPair, ...]
    unmatched_camera: tuple[int, ...] = ()
    unmatched_reference: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))
        cam = [(p.frame_c, p.row_c) for p in self.pairs]
        ref = [(p.frame_ref, p.row_ref) for p in self.pairs]
        if len(set(cam)) != len(cam) or len(set(ref)) != len(ref):
            raise DomainError("an event participates in more than one pair")

    def __len__(self) -> int:
        return len(self.pairs)


def match_events(
    events_c: Sequence[TimedEvent],
    events_ref: Sequence[TimedEvent],
    coarse_offset: float,
    tolerance: float,
    camera_id: str = "camera",
    reference_id: str = "reference",
) -> MatchedEventSet:
    """Greedy nearest-neighbour matching after applying the coarse offset.

    Candidate pairs within ``tolerance`` ms are taken in order of increasing
    distance; each event is used at most once.

    Raises:
        MatchingError: no pair falls within tolerance
    """
    if not tolerance > 0:
        raise DomainError(f"tolerance must be positive, got {tolerance}")
    tc, tr = _as_times(events_c), _as_times(events_ref)
    dist = np.abs(tr[np.newaxis, :] - (tc[:, np.newaxis] + coarse_offset))
    ii, jj = np.nonzero(dist <= tolerance)
    order = np.lexsort((jj, ii, dist[ii, jj]))
    used_c: set[int] = set()
    used_r: set[int] = set()
    chosen = []
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i in used_c or j in used_r:
            continue
        used_c.add(i)
        used_r.add(j)
        chosen.append((i, j))
    if not chosen:
        raise MatchingError(
            f"no events of {camera_id!r} match {reference_id!r} within {tolerance:g} ms; "
            "review the detection threshold or the coarse offset"
        )
    chosen.sort(key=lambda ij: (tr[ij[1]], ij[0]))
    pairs = tuple(
        MatchedPair(
            events_c[i].frame,
            events_c[i].row,
            events_c[i].frame_time,
            events_ref[j].frame,
            events_ref[j].row,
            events_ref[j].frame_time,
        )
        for i, j in chosen
    )
    return MatchedEventSet(
        camera_id,
        reference_id,
        pairs,
        tuple(i for i in range(len(tc)) if i not in used_c),
        tuple(j for j in range(len(tr)) if j not in used_r),
    )


def _finite_or_none(values: Mapping[str, float]) -> dict:
    # strict JSON has no NaN; an exactly determined fit has no error estimate
    return {k: (float(v) if np.isfinite(v) else None) for k, v in values.items()}


def _none_to_nan(values: Mapping) -> dict[str, float]:
    return {k: (float("nan") if v is None else float(v)) for k, v in values.items()}


@dataclass
class SyncSolution:
    """Estimated mappings of all cameras to the reference clock.

    Attributes:
        reference_id: reference camera
        params: per-camera alpha, beta (ms) and t_row (ms)
        t_row_ref: reference row period in ms
        residuals: per-camera signed errors ``s_c - t_ref`` in ms, in pair order
        std_error: standard deviation (ddof=0) of all residuals, ms
        camera_std: per-camera residual standard deviation, ms
        standard_errors: 1-sigma parameter uncertainties from the fit
            (keys ``alpha``, ``beta``, ``t_row``; reference under its own id)
    """

    reference_id: str
    params: dict[str, SyncParams]
    t_row_ref: float
    residuals: dict[str, np.ndarray] = field(default_factory=dict)
    std_error: float = 0.0
    camera_std: dict[str, float] = field(default_factory=dict)
    standard_errors: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_reference_time(self, camera_id: str, frame_timestamp: float, row: float) -> float:
        """Reference time of a (timestamp, row) position in any camera."""
        if camera_id == self.reference_id:
            return frame_timestamp + row * self.t_row_ref
        if camera_id not in self.params:
            raise DomainError(f"unknown camera {camera_id!r}")
        return apply_sync(self.params[camera_id], frame_timestamp, row)

    def to_dict(self) -> dict:
        cameras = {}
        for cid, p in self.params.items():
            res = self.residuals.get(cid, np.empty(0))
            block = {
                "alpha": p.alpha,
                "beta_ms": p.beta,
                "t_row_ms": p.t_row,
                "drift_lines_per_s": drift_lines_per_second(p),
                "std_error_ms": self.camera_std.get(cid, 0.0),
                "n_events": int(len(res)),
                "residuals_ms": [float(r) for r in res],
            }
            se = self.standard_errors.get(cid)
            if se:
                block["standard_errors"] = _finite_or_none(se)
            cameras[cid] = block
        reference = {"camera": self.reference_id, "t_row_ms": self.t_row_ref}
        if self.reference_id in self.standard_errors:
            reference["standard_errors"] = _finite_or_none(self.standard_errors[self.reference_id])
        return {
            "reference": reference,
            "cameras": cameras,
            "residuals_ms": [float(r) for cid in self.params for r in self.residuals.get(cid, [])],
            "std_error_ms": self.std_error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> SyncSolution:
        try:
            ref = data["reference"]
            params, residuals, camera_std, se = {}, {}, {}, {}
            for cid, block in data["cameras"].items():
                params[cid] = SyncParams(
                    float(block["alpha"]), float(block["beta_ms"]), float(block["t_row_ms"])
                )
                residuals[cid] = np.asarray(block.get("residuals_ms", []), dtype=np.float64)
                camera_std[cid] = float(block.get("std_error_ms", 0.0))
                if "standard_errors" in block:
                    se[cid] = _none_to_nan(block["standard_errors"])
            if "standard_errors" in ref:
                se[ref["camera"]] = _none_to_nan(ref["standard_errors"])
            return cls(
                str(ref["camera"]),
                params,
                float(ref["t_row_ms"]),
                residuals,
                float(data.get("std_error_ms", 0.0)),
                camera_std,
                se,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed solution document: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> SyncSolution:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError(f"solution is not valid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass
class _System:
    matrix: np.ndarray
    rhs: np.ndarray
    names: list[str]
    # per block: (camera id, row slice, column of alpha, beta, t_row or None, m_c, m_ref)
    blocks: list[tuple]
    ref_column: int | None


def _build_system(
    sets: Sequence[MatchedEventSet], known: Mapping[str, float]
) -> _System:
    reference_id = sets[0].reference_id
    names: list[str] = []
    layout = []
    for s in sets:
        a = len(names)
        names += [f"alpha[{s.camera_id}]", f"beta[{s.camera_id}]"]
        t = None
        if s.camera_id not in known:
            t = len(names)
            names.append(f"t_row[{s.camera_id}]")
        layout.append((a, t))
    ref_col = None
    if reference_id not in known:
        ref_col = len(names)
        names.append(f"t_row[{reference_id}]")

    n_rows = sum(len(s) for s in sets)
    A = np.zeros((n_rows, len(names)))
    b = np.zeros(n_rows)
    blocks = []
    start = 0
    for s, (a, t) in zip(sets, layout):
        tc = np.array([p.t_c for p in s.pairs])
        tr = np.array([p.t_ref for p in s.pairs])
        rc = np.array([p.row_c for p in s.pairs], dtype=np.float64)
        rr = np.array([p.row_ref for p in s.pairs], dtype=np.float64)
        m_c = 0.5 * (tc.min() + tc.max())
        m_ref = 0.5 * (tr.min() + tr.max())
        u = tc - m_c
        rows = slice(start, start + len(s))
        A[rows, a] = u
        A[rows, a + 1] = 1.0
        rhs = (tr - m_ref) - u
        if t is not None:
            A[rows, t] = rc
        else:
            rhs = rhs - rc * known[s.camera_id]
        if ref_col is not None:
            A[rows, ref_col] = -rr
        else:
            rhs = rhs + rr * known[reference_id]
        b[rows] = rhs
        blocks.append((s.camera_id, rows, a, t, m_c, m_ref))
        start += len(s)
    return _System(A, b, names, blocks, ref_col)


def _lstsq_qr(A: np.ndarray, b: np.ndarray, names: Sequence[str]):
    """Column-scaled, column-pivoted QR least squares.

    Returns the solution and the unscaled ``(A^T A)^-1``.
    """
    m, n = A.shape
    if m < n:
        raise SingularSystemError(
            f"under-determined system: {m} equations for {n} unknowns", tuple(names)
        )
    norms = np.linalg.norm(A, axis=0)
    zero = [names[k] for k in np.flatnonzero(norms == 0.0)]
    if zero:
        raise SingularSystemError(
            f"rank-deficient system: data do not constrain {', '.join(zero)}", tuple(zero)
        )
    scaled = A / norms
    Q, R, perm = scipy.linalg.qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOLERANCE * diag[0]))
    if rank < n:
        deficient = tuple(names[k] for k in perm[rank:])
        raise SingularSystemError(
            f"rank-deficient system: cannot separate {', '.join(deficient)} "
            "(are all matched events in one frame, or on one row?)",
            deficient,
        )
    z = scipy.linalg.solve_triangular(R, Q.T @ b)
    x = np.empty(n)
    x[perm] = z
    x /= norms
    r_inv = scipy.linalg.solve_triangular(R, np.eye(n))
    cov_perm = r_inv @ r_inv.T
    cov = np.empty((n, n))
    cov[np.ix_(perm, perm)] = cov_perm
    cov /= np.outer(norms, norms)
    return x, cov


def _check_sets(sets: Sequence[MatchedEventSet]) -> None:
    if not sets:
        raise DomainError("no matched event sets")
    reference_id = sets[0].reference_id
    ids = [s.camera_id for s in sets]
    if any(s.reference_id != reference_id for s in sets):
        raise DomainError(
            "matched sets use different reference cameras: "
            + ", ".join(sorted({s.reference_id for s in sets}))
        )
    if len(set(ids)) != len(ids):
        raise DomainError("a camera appears in more than one matched set")
    if reference_id in ids:
        raise DomainError(f"reference camera {reference_id!r} cannot be synchronized to itself")
    for s in sets:
        if len(s) == 0:
            raise MatchingError(f"camera {s.camera_id!r} has no matched events")


def _frame_times_affine(s: MatchedEventSet) -> bool:
    """True when the paired frame timestamps satisfy ``t_ref = a * t_c + b`` exactly.

    That happens when no event pair falls across a frame boundary differently
    from the others, e.g. two cameras at one frame rate whose frames start at
    nearly the same time. Such pairs fit with any common scaling of the row
    periods.
    """
    tc = np.array([p.t_c for p in s.pairs])
    tr = np.array([p.t_ref for p in s.pairs])
    if len(s) < 3:
        return True
    X = np.column_stack([tc - tc.mean(), np.ones_like(tc)])
    coef, *_ = np.linalg.lstsq(X, tr - tr.mean(), rcond=None)
    return bool(np.max(np.abs(X @ coef - (tr - tr.mean()))) < AFFINE_TOLERANCE_MS)


def _check_identifiable(sets: Sequence[MatchedEventSet], known: Mapping[str, float]) -> None:
    reference_id = sets[0].reference_id
    if reference_id in known:
        return
    if any(s.camera_id in known or not _frame_times_affine(s) for s in sets):
        return
    names = tuple(f"t_row[{s.camera_id}]" for s in sets) + (f"t_row[{reference_id}]",)
    raise SingularSystemError(
        "row periods are not identifiable: in every camera the matched frame "
        "timestamps follow a single affine relation to the reference, so all "
        "row periods can be scaled together; fix a row period or record events "
        "that fall in differently aligned frames",
        names,
    )


def _solve(sets: Sequence[MatchedEventSet], known: Mapping[str, float]) -> SyncSolution:
    _check_sets(sets)
    for cid, value in known.items():
        if not value > 0:
            raise DomainError(f"known row period of {cid!r} must be positive, got {value}")
    _check_identifiable(sets, known)
    system = _build_system(sets, known)
    x, cov = _lstsq_qr(system.matrix, system.rhs, system.names)
    residuals_all = system.matrix @ x - system.rhs
    n_obs, n_par = system.matrix.shape
    dof = n_obs - n_par
    sigma2 = float(residuals_all @ residuals_all) / dof if dof > 0 else float("nan")
    cov = cov * sigma2

    reference_id = sets[0].reference_id
    t_row_ref = float(x[system.ref_column]) if system.ref_column is not None else known[reference_id]
    if not t_row_ref > 0:
        raise NumericalError(f"estimated reference row period {t_row_ref:g} ms is not positive")
    params: dict[str, SyncParams] = {}
    residuals: dict[str, np.ndarray] = {}
    camera_std: dict[str, float] = {}
    errors: dict[str, dict[str, float]] = {}
    for cid, rows, a, t, m_c, m_ref in system.blocks:
        alpha = 1.0 + float(x[a])
        beta = float(x[a + 1]) - alpha * m_c + m_ref
        t_row = float(x[t]) if t is not None else known[cid]
        if not t_row > 0:
            raise NumericalError(f"estimated row period of {cid!r} ({t_row:g} ms) is not positive")
        params[cid] = SyncParams(alpha, beta, t_row)
        residuals[cid] = residuals_all[rows].copy()
        camera_std[cid] = float(np.std(residuals[cid]))
        # beta = gamma - (1 + delta) m_c + m_ref
        var_beta = cov[a + 1, a + 1] + m_c**2 * cov[a, a] - 2.0 * m_c * cov[a, a + 1]
        errors[cid] = {
            "alpha": float(np.sqrt(cov[a, a])),
            "beta": float(np.sqrt(max(var_beta, 0.0))),
            "t_row": float(np.sqrt(cov[t, t])) if t is not None else 0.0,
        }
    if system.ref_column is not None:
        k = system.ref_column
        errors[reference_id] = {"t_row": float(np.sqrt(cov[k, k]))}
    return SyncSolution(
        reference_id,
        params,
        t_row_ref,
        residuals,
        float(np.std(residuals_all)),
        camera_std,
        errors,
    )


def solve_pairwise(
    matched: MatchedEventSet,
    mode: str = ROW_PERIODS_FREE,
    t_row_c: float | None = None,
    t_row_ref: float | None = None,
) -> SyncSolution:
    """Least-squares mapping of one camera to the reference.

    In ``row_periods_known`` mode both row periods must be given and only
    alpha and beta are estimated; in ``row_periods_free`` mode all four
    unknowns are.

    Raises:
        SingularSystemError: too few pairs or degenerate event layout
    """
    if mode == ROW_PERIODS_KNOWN:
        if t_row_c is None or t_row_ref is None:
            raise DomainError("row_periods_known mode needs t_row_c and t_row_ref")
        known = {matched.camera_id: t_row_c, matched.reference_id: t_row_ref}
    elif mode == ROW_PERIODS_FREE:
        known = {}
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return _solve([matched], known)


def solve_joint(
    all_matched: Sequence[MatchedEventSet],
    known_row_periods: Mapping[str, float] | None = None,
) -> SyncSolution:
    """One least-squares system for all cameras sharing the reference row period.

    ``known_row_periods`` fixes the row period of any camera (the reference
    included) to a datasheet value.
    """
    return _solve(list(all_matched), dict(known_row_periods or {}))


@dataclass(frozen=True)
class ResidualRow:
    camera: str
    frame_c: int
    row_c: float
    t_c: float
    frame_ref: int
    row_ref: float
    t_ref: float
    residual: float


@dataclass
class ResidualReport:
    rows: list[ResidualRow]
    camera_std: dict[str, float]

    def residuals(self, camera_id: str) -> np.ndarray:
        return np.array([r.residual for r in self.rows if r.camera == camera_id])


def residual_report(
    solution: SyncSolution, matched_sets: Iterable[MatchedEventSet]
) -> ResidualReport:
    """Per-event synchronization errors recomputed from the solved mappings."""
    rows = []
    stds = {}
    for s in matched_sets:
        params = solution.params[s.camera_id]
        cam_rows = [
            ResidualRow(
                s.camera_id,
                p.frame_c,
                p.row_c,
                p.t_c,
                p.frame_ref,
                p.row_ref,
                p.t_ref,
                apply_sync(params, p.t_c, p.row_c) - (p.t_ref + p.row_ref * solution.t_row_ref),
            )
            for p in s.pairs
        ]
        rows.extend(cam_rows)
        stds[s.camera_id] = float(np.std([r.residual for r in cam_rows])) if cam_rows else 0.0
    return ResidualReport(rows, stds)


MATCHED_HEADER = "camera,frame_c,row_c,t_c_ms,frame_ref,row_ref,t_ref_ms,residual_ms"


def _num(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() and abs(value) < 2**53 else repr(value)


def format_matched_csv(report: ResidualReport) -> str:
    buf = io.StringIO()
    buf.write(MATCHED_HEADER + "\n")
    for r in report.rows:
        buf.write(
            ",".join(
                [
                    r.camera,
                    str(r.frame_c),
                    _num(r.row_c),
                    repr(float(r.t_c)),
                    str(r.frame_ref),
                    _num(r.row_ref),
                    repr(float(r.t_ref)),
                    repr(float(r.residual)),
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def synchronize(
    tracks: Mapping[str, TimestampTrack],
    events: Mapping[str, Sequence[EventObservation]],
    reference_id: str,
    geometries: Mapping[str, SensorGeometry] | None = None,
    tolerance_ms: float | None = None,
    manual_offsets: Mapping[str, float] | None = None,
    known_row_periods: Mapping[str, float] | None = None,
    joint: bool = True,
) -> tuple[SyncSolution, list[MatchedEventSet]]:
    """Match every camera against the reference and solve.

    ``manual_offsets`` replaces the automatic coarse alignment of a camera
    (``t_ref ~ t_c + offset``). With ``joint=False`` each camera is solved on
    its own and the reported reference row period is the mean of the
    pairwise estimates.
    """
    if reference_id not in tracks:
        raise DomainError(f"reference camera {reference_id!r} has no timestamp track")
    geometries = dict(geometries or {})
    manual_offsets = dict(manual_offsets or {})
    known = dict(known_row_periods or {})

    def _timed(cid: str) -> list[TimedEvent]:
        return timed_events(events.get(cid, ()), tracks[cid], geometries.get(cid))

    ref_events = _timed(reference_id)
    ref_frame = tracks[reference_id].frame_duration_ms()
    matched_sets = []
    for cid in tracks:
        if cid == reference_id:
            continue
        cam_events = _timed(cid)
        cam_frame = tracks[cid].frame_duration_ms()
        frame = min(cam_frame, ref_frame)
        if cid in manual_offsets:
            offset = float(manual_offsets[cid])
        else:
            estimate = estimate_coarse_offset(cam_events, ref_events, frame)
            offset = estimate.offset
            logger.info("camera %s: coarse offset %.3f ms (%d inliers)", cid, offset, estimate.inliers)
        tol = tolerance_ms if tolerance_ms is not None else 0.5 * frame
        matched = match_events(cam_events, ref_events, offset, tol, cid, reference_id)
        logger.info(
            "camera %s: %d pairs, %d/%d unmatched",
            cid,
            len(matched),
            len(matched.unmatched_camera),
            len(matched.unmatched_reference),
        )
        matched_sets.append(matched)
    if not matched_sets:
        raise DomainError("need at least one camera besides the reference")
    if joint:
        return solve_joint(matched_sets, known), matched_sets

    solutions = []
    for s in matched_sets:
        sub_known = {k: v for k, v in known.items() if k in (s.camera_id, reference_id)}
        solutions.append(_solve([s], sub_known))
    merged = SyncSolution(
        reference_id,
        {cid: p for sol in solutions for cid, p in sol.params.items()},
        float(np.mean([sol.t_row_ref for sol in solutions])),
        {cid: r for sol in solutions for cid, r in sol.residuals.items()},
        float(np.std(np.concatenate([r for sol in solutions for r in sol.residuals.values()]))),
        {cid: v for sol in solutions for cid, v in sol.camera_std.items()},
        {cid: v for sol in solutions for cid, v in sol.standard_errors.items() if cid != reference_id},
    )
    return merged, matched_sets
