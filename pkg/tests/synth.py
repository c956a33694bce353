"""Exact matched-pair fixtures built straight from the fitted mapping.

A world instant ``W`` is observed by the reference in the frame stamped
``floor(W / T_ref_frame) * T_ref_frame`` at row ``(W - t_ref) / t_row_ref``,
and by camera ``c`` in the frame whose stamp ``t_c`` satisfies
``alpha * t_c + beta <= W`` at row ``(W - alpha * t_c - beta) / t_row_c``.
"""

from __future__ import annotations

import math

import numpy as np

from flashsync.syncsolve import MatchedEventSet, MatchedPair


def exact_pairs(
    world_times,
    alpha: float,
    beta: float,
    t_row_c: float,
    t_row_ref: float,
    frame_c: float = 1000.0 / 30,
    frame_ref: float = 40.0,
    camera_id: str = "cam",
    reference_id: str = "ref",
    row_noise=None,
) -> MatchedEventSet:
    pairs = []
    for i, w in enumerate(world_times):
        k_ref = math.floor(w / frame_ref)
        t_ref = k_ref * frame_ref
        r_ref = (w - t_ref) / t_row_ref
        k_c = math.floor(((w - beta) / alpha) / frame_c)
        t_c = k_c * frame_c
        r_c = (w - alpha * t_c - beta) / t_row_c
        if row_noise is not None:
            r_ref += row_noise[i]
        pairs.append(MatchedPair(k_c, r_c, t_c, k_ref, r_ref, t_ref))
    return MatchedEventSet(camera_id, reference_id, tuple(pairs))


def spread_times(n: int, seed: int, start: float = 5000.0, stop: float = 250000.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.sort(rng.uniform(start, stop, n))
