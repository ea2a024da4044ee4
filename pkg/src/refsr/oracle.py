"""Exhaustive reference scan used to cross-check the hierarchical matcher.

No partitioning, no hierarchy, no streaming: every (reference, patch,
subvector) candidate is enumerated directly and the per-position winner
is the global argmax under the same tie order the hierarchy uses
(reference, patch row, patch col, subvector).  Scores go through the
same elementary correlation kernels as the matcher so that agreement is
expected down to the last bit; everything around those kernels is
written independently here.

For unit patches the hierarchy must reproduce this scan exactly.  For
larger patches the hierarchy's aligned upper levels are an
approximation, and only the score bound (hierarchical winner never beats
the global optimum by more than float noise) is meaningful.
"""

from __future__ import annotations

import numpy as np

from .errors import CapExceededError, NoCandidateError, ShapeError, SizeError
from .features import FeaturePyramid
from .matching import MatchField, MatchParams, SwapOutput
from .partition import split_channels
from .windows import correlate_one, correlate_paired, extract_patches, row_norms, unfold

DEFAULT_CAP = 10_000_000


def match_oracle(input_pyr: FeaturePyramid, refs: list[FeaturePyramid],
                 params: MatchParams, n_c: int = 1,
                 cap: int = DEFAULT_CAP) -> SwapOutput:
    """Brute-force the best candidate for every input position.

    ``n_c`` must match the subvector count of the run being checked.
    Raises CapExceededError before scanning if the candidate count
    (references x patches x subvectors) exceeds ``cap``.
    """
    if not refs:
        raise NoCandidateError("no references to scan")
    in3 = input_pyr.matching
    c_total, h, w = in3.shape
    k = params.patch_size
    eps = params.norm_epsilon
    for ref in refs:
        if ref.matching.shape[0] != c_total:
            raise ShapeError("reference channel count differs from input")
        if ref.matching.shape[1] < k or ref.matching.shape[2] < k:
            raise SizeError(f"reference {ref.matching.shape[1:]} smaller than patch {k}")

    total = 0
    for ref in refs:
        rh, rw = ref.matching.shape[1:]
        n_patches = ((rh - k) // params.stride + 1) * ((rw - k) // params.stride + 1)
        total += n_patches * n_c
    if total > cap:
        raise CapExceededError(f"{total} candidates exceed cap {cap}")

    subs = split_channels(in3, n_c)
    iwins = [unfold(sub, k) for sub in subs]
    win_div = None
    if params.normalize_input:
        win_div = [np.maximum(row_norms(iw), eps) for iw in iwins]

    n_pos = h * w
    best_score = np.full(n_pos, -np.inf)
    best_m = np.zeros(n_pos, dtype=np.int64)
    best_row = np.zeros(n_pos, dtype=np.int64)
    best_col = np.zeros(n_pos, dtype=np.int64)
    best_sub = np.zeros(n_pos, dtype=np.int64)
    any_winner = False

    for m, ref in enumerate(refs):
        ref3 = ref.matching
        ref_subs = split_channels(ref3, n_c)
        m_score = None
        m_row = m_col = m_sub = None
        for c in range(n_c):
            tops, patches = extract_patches(ref_subs[c], k, params.stride)
            norms = row_norms(patches)
            scores = np.empty((len(tops), n_pos))
            for j in range(len(tops)):
                if norms[j] < eps:
                    scores[j] = -np.inf
                    continue
                row = correlate_one(iwins[c], patches[j]) / norms[j]
                if win_div is not None:
                    row = row / win_div[c]
                scores[j] = row
            idx = np.argmax(scores, axis=0)    # first max = smallest (row, col)
            c_score = scores[idx, np.arange(n_pos)]
            c_row = tops[idx, 0] + k // 2
            c_col = tops[idx, 1] + k // 2
            if m_score is None:
                m_score, m_row, m_col = c_score, c_row, c_col
                m_sub = np.zeros(n_pos, dtype=np.int64)
            else:
                better = (c_score > m_score) | (
                    (c_score == m_score)
                    & ((c_row < m_row) | ((c_row == m_row) & (c_col < m_col))))
                m_score = np.where(better, c_score, m_score)
                m_row = np.where(better, c_row, m_row)
                m_col = np.where(better, c_col, m_col)
                m_sub = np.where(better, c, m_sub)
        better = m_score > best_score          # equal scores keep the earlier m
        best_score = np.where(better, m_score, best_score)
        best_m = np.where(better, m, best_m)
        best_row = np.where(better, m_row, best_row)
        best_col = np.where(better, m_col, best_col)
        best_sub = np.where(better, m_sub, best_sub)
        any_winner = any_winner or np.isfinite(m_score).any()

    if not any_winner:
        raise NoCandidateError("every candidate patch is excluded")

    swapped = np.empty((c_total, n_pos), dtype=np.float32)
    for m, ref in enumerate(refs):
        mask = best_m == m
        if mask.any():
            swapped[:, mask] = ref.matching[:, best_row[mask], best_col[mask]]
    swapped = swapped.reshape(c_total, h, w)

    # Transfer confidence over the scan's own output map: raw aligned dot
    # products, maximized over subvectors (mirrors the matcher's weight rule).
    weights = None
    out_subs = split_channels(swapped, n_c)
    for c in range(n_c):
        owin = unfold(out_subs[c].astype(np.float64, copy=False), k)
        dots = correlate_paired(iwins[c], owin)
        weights = dots if weights is None else np.maximum(weights, dots)

    return SwapOutput(
        swapped=swapped,
        weights=weights.reshape(h, w).astype(np.float32),
        field=MatchField(
            m=best_m.reshape(h, w),
            r=np.zeros((h, w), dtype=np.int64),
            patch_row=best_row.reshape(h, w),
            patch_col=best_col.reshape(h, w),
            sub=best_sub.reshape(h, w),
            score=best_score.reshape(h, w),
        ),
    )
