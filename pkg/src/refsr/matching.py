"""Hierarchical multi-reference patch matching at the coarsest feature scale.

The search runs in three attention levels.  Level 1 scores every patch of
one reference part against the input: for each input position and each
channel subvector, the best-correlated patch is found, then the best
subvector is chosen, and the full-channel center value of that patch is
copied out.  Level 2 merges the per-part maps of one reference, level 3
merges across references; both upper levels compare candidates through
the patch already aligned at each position (no re-search).  With a single
candidate a level is an identity passthrough.

Scores follow one rule everywhere: the zero-padded input window is
correlated with a candidate patch and divided by the patch norm (never
the window norm unless ``normalize_input`` is set); patches whose norm
falls below ``norm_epsilon`` are excluded outright.  Ties are broken by
the lexicographic order (reference, part, patch row, patch col,
subvector), which makes results independent of thread count and lets an
exhaustive scan reproduce them bit for bit.

Reference parts are streamed: only one part's features are resident
(and ledger-registered) while level 1 runs, which is what caps resident
reference bytes at roughly 1/n_r of the total.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivisibilityError, NoCandidateError, ShapeError, SizeError
from .features import FeaturePyramid
from .memledger import MemoryLedger
from .partition import Part, PartitionSpec, auto_nc, axis_layout, grid_layout, owned_spans, split_channels
from .windows import correlate_one, correlate_paired, extract_patches, row_norms, unfold


@dataclass(frozen=True)
class MatchParams:
    """Patch geometry and scoring controls."""

    patch_size: int = 3
    stride: int = 1
    norm_epsilon: float = 1e-8
    normalize_input: bool = False

    def __post_init__(self) -> None:
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not self.norm_epsilon > 0.0:
            raise ValueError(f"norm_epsilon must be > 0, got {self.norm_epsilon}")


@dataclass
class MatchField:
    """Per-position winner identity and score.

    ``patch_row``/``patch_col`` are patch *center* coordinates in the
    winning reference's matching-scale frame, so re-fetching
    ``ref[m][:, patch_row, patch_col]`` reproduces the copied values.
    """

    m: np.ndarray
    r: np.ndarray
    patch_row: np.ndarray
    patch_col: np.ndarray
    sub: np.ndarray
    score: np.ndarray

    def to_tensor(self) -> np.ndarray:
        """(6, H, W) float32 layout: m, r, patch_row, patch_col, sub, score."""
        return np.stack([
            self.m, self.r, self.patch_row, self.patch_col, self.sub, self.score,
        ]).astype(np.float32)

    @classmethod
    def from_tensor(cls, tensor: np.ndarray) -> "MatchField":
        if tensor.ndim != 3 or tensor.shape[0] != 6:
            raise ShapeError(f"match field tensor must be (6, H, W), got {tensor.shape}")
        ints = [np.rint(tensor[i]).astype(np.int64) for i in range(5)]
        return cls(*ints, tensor[5].astype(np.float64))


@dataclass
class SwapOutput:
    """Swapped features, transfer confidence, and full provenance."""

    swapped: np.ndarray   # (C, H, W) float32
    weights: np.ndarray   # (H, W) float32
    field: MatchField


@dataclass
class ScoreVolume:
    """Scores of every candidate patch at every input position.

    ``scores`` is (n_patches, H, W) float64 with -inf planes for excluded
    patches; ``tops`` holds the top-left corner of each patch.
    """

    scores: np.ndarray
    tops: np.ndarray


@dataclass
class Level1Result:
    values: np.ndarray      # (C, H, W) float32
    sub: np.ndarray         # (H, W) int64
    patch_row: np.ndarray   # (H, W) int64, absolute centers
    patch_col: np.ndarray
    score: np.ndarray       # (H, W) float64


def _run_chunks(fn, n: int, pool: ThreadPoolExecutor | None) -> None:
    """Run fn(lo, hi) over [0, n) in disjoint chunks, possibly in parallel.

    Workers write to disjoint slots, so the result does not depend on
    scheduling; the serial path runs the identical arithmetic.
    """
    if pool is None or n < 2:
        fn(0, n)
        return
    workers = getattr(pool, "_max_workers", 1)
    chunk = max(1, math.ceil(n / (workers * 4)))
    futures = [pool.submit(fn, lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    for fut in futures:
        fut.result()


def similarity_map(input_sub: np.ndarray, candidate: np.ndarray,
                   params: MatchParams,
                   pool: ThreadPoolExecutor | None = None) -> ScoreVolume:
    """Correlate every candidate patch with every input position.

    score(p, y, x) = <window(y, x), patch p> / ||p||, windows zero-padded
    and centered, patches enumerated row-major over the candidate with
    the configured stride.  Patches with ||p|| < norm_epsilon score -inf.
    """
    if input_sub.shape[0] != candidate.shape[0]:
        raise ShapeError(
            f"channel mismatch: input {input_sub.shape[0]} vs candidate {candidate.shape[0]}")
    k = params.patch_size
    if candidate.shape[1] < k or candidate.shape[2] < k:
        raise SizeError(f"candidate {candidate.shape[1:]} smaller than patch {k}")
    _, h, w = input_sub.shape
    eps = params.norm_epsilon

    wins = unfold(input_sub, k)
    tops, patches = extract_patches(candidate, k, params.stride)
    norms = row_norms(patches)
    win_div = None
    if params.normalize_input:
        win_div = np.maximum(row_norms(wins), eps)

    scores = np.empty((len(tops), h * w), dtype=np.float64)

    def score_range(lo: int, hi: int) -> None:
        for j in range(lo, hi):
            if norms[j] < eps:
                scores[j] = -np.inf
                continue
            row = correlate_one(wins, patches[j]) / norms[j]
            if win_div is not None:
                row = row / win_div
            scores[j] = row

    _run_chunks(score_range, len(tops), pool)
    return ScoreVolume(scores.reshape(len(tops), h, w), tops)


def _fold_subvectors(per_sub: list[tuple[np.ndarray, np.ndarray, np.ndarray]]):
    """Pick the winner across subvectors under the global tie order.

    per_sub[c] = (score, row, col) flat arrays.  Between equal scores the
    smaller (row, col) wins first, then the smaller subvector index
    (entries are folded in ascending c, keeping the incumbent on full
    ties).
    """
    best_s, best_r, best_c = per_sub[0]
    best_sub = np.zeros_like(best_r)
    for c in range(1, len(per_sub)):
        s, r, col = per_sub[c]
        better = (s > best_s) | (
            (s == best_s) & ((r < best_r) | ((r == best_r) & (col < best_c))))
        best_s = np.where(better, s, best_s)
        best_r = np.where(better, r, best_r)
        best_c = np.where(better, col, best_c)
        best_sub = np.where(better, c, best_sub)
    return best_s, best_r, best_c, best_sub


def level1_input_attention(input_subs: list[np.ndarray], ref_part: Part,
                           params: MatchParams,
                           pool: ThreadPoolExecutor | None = None) -> Level1Result:
    """First attention level: searched match of one reference part.

    For each subvector the best patch is selected, then the best
    subvector; the output copies the full-channel center value of the
    winning patch.  Recorded patch coordinates are absolute (part origin
    applied).
    """
    n_c = len(input_subs)
    feats = ref_part.feature
    if sum(s.shape[0] for s in input_subs) != feats.shape[0]:
        raise ShapeError("subvector channels do not sum to part channels")
    _, h, w = input_subs[0].shape
    k = params.patch_size
    half = k // 2
    origin_r, origin_c = ref_part.origin

    part_subs = split_channels(feats, n_c)
    per_sub = []
    tops_by_sub = []
    idx_by_sub = []
    for c in range(n_c):
        vol = similarity_map(input_subs[c], part_subs[c], params, pool)
        flat = vol.scores.reshape(len(vol.tops), h * w)
        idx = np.argmax(flat, axis=0)          # first max = smallest (row, col)
        score = flat[idx, np.arange(h * w)]
        abs_r = vol.tops[idx, 0] + half + origin_r
        abs_c = vol.tops[idx, 1] + half + origin_c
        per_sub.append((score, abs_r, abs_c))
        tops_by_sub.append(vol.tops)
        idx_by_sub.append(idx)

    best_s, best_r, best_c, best_sub = _fold_subvectors(per_sub)
    if np.isneginf(best_s).all():
        raise NoCandidateError("every patch of the part is excluded (norm below epsilon)")

    # Gather full-channel center values of each position's winning patch.
    rel_r = best_r - origin_r
    rel_c = best_c - origin_c
    values = feats[:, rel_r, rel_c].reshape(feats.shape[0], h, w)
    return Level1Result(
        values=np.ascontiguousarray(values, dtype=np.float32),
        sub=best_sub.reshape(h, w).astype(np.int64),
        patch_row=best_r.reshape(h, w),
        patch_col=best_c.reshape(h, w),
        score=best_s.reshape(h, w),
    )


def _aligned_scores(input_subs: list[np.ndarray], candidate: np.ndarray,
                    params: MatchParams, normalized: bool) -> np.ndarray:
    """Aligned per-position correlation, maximized over subvectors.

    The candidate patch is its own window centered at the position
    (zero-padded near borders).  With ``normalized`` the Eq-1 form is
    used (divide by patch norm, -inf when excluded); without it the raw
    dot product is returned (weight-map form).
    """
    k = params.patch_size
    eps = params.norm_epsilon
    cand_subs = split_channels(candidate, len(input_subs))
    best = None
    for c, isub in enumerate(input_subs):
        iwin = unfold(isub, k)
        cwin = unfold(cand_subs[c].astype(np.float64, copy=False), k)
        dots = correlate_paired(iwin, cwin)
        if normalized:
            norms = row_norms(cwin)
            s = np.where(norms >= eps, dots / np.maximum(norms, eps), -np.inf)
            if params.normalize_input:
                s = s / np.maximum(row_norms(iwin), eps)
        else:
            s = dots
        best = s if best is None else np.maximum(best, s)
    return best


def level_merge(input_subs: list[np.ndarray], candidates: list[np.ndarray],
                params: MatchParams,
                pool: ThreadPoolExecutor | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Merge aligned candidate maps; returns (merged map, winner indices).

    A single candidate passes through untouched.  Otherwise each
    candidate is scored at every position through its own aligned patch,
    the best score over subvectors counts, and ties go to the lower
    candidate index.  The winner's channels are copied positionally.
    """
    _, h, w = candidates[0].shape
    if len(candidates) == 1:
        return candidates[0], np.zeros((h, w), dtype=np.int64)
    for cand in candidates:
        if cand.shape != candidates[0].shape:
            raise ShapeError("candidate maps must share dims")

    best_score = None
    winners = np.zeros(h * w, dtype=np.int64)
    for idx, cand in enumerate(candidates):
        s = _aligned_scores(input_subs, cand, params, normalized=True)
        if best_score is None:
            best_score = s
        else:
            better = s > best_score
            best_score = np.where(better, s, best_score)
            winners = np.where(better, idx, winners)
    if np.isneginf(best_score).any():
        n_bad = int(np.isneginf(best_score).sum())
        raise NoCandidateError(
            f"{n_bad} positions have every aligned candidate excluded")

    merged = np.empty_like(candidates[0])
    win2d = winners.reshape(h, w)
    for idx, cand in enumerate(candidates):
        mask = win2d == idx
        if mask.any():
            merged[:, mask] = cand[:, mask]
    return merged, win2d


def weight_map(input_subs: list[np.ndarray], candidates: list[np.ndarray],
               winners: np.ndarray, params: MatchParams) -> np.ndarray:
    """Transfer confidence: raw aligned dot product of the selected candidate.

    W_k(y, x) is the un-normalized correlation between the input window
    and candidate k's aligned patch, maximized over subvectors; the map
    returns W of the per-position winner.
    """
    _, h, w = candidates[0].shape
    weights = np.zeros((h, w), dtype=np.float64)
    for idx, cand in enumerate(candidates):
        mask = winners == idx
        if not mask.any():
            continue
        w_k = _aligned_scores(input_subs, cand, params, normalized=False)
        weights[mask] = w_k.reshape(h, w)[mask]
    return weights


def _gather_field(fields: list[dict[str, np.ndarray]], winners: np.ndarray,
                  keys: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Chain provenance: each position inherits its winning candidate's entry."""
    out = {key: np.empty_like(fields[0][key]) for key in keys}
    for idx, fld in enumerate(fields):
        mask = winners == idx
        if not mask.any():
            continue
        for key in keys:
            out[key][mask] = fld[key][mask]
    return out


_FIELD_KEYS = ("r", "patch_row", "patch_col", "sub", "score")


def _match_block(block: np.ndarray, refs: list[FeaturePyramid], spec: PartitionSpec,
                 n_c: int, params: MatchParams, ledger: MemoryLedger | None,
                 pool: ThreadPoolExecutor | None) -> tuple[np.ndarray, np.ndarray, dict]:
    """Full three-level hierarchy over one input block."""
    subs = [s.astype(np.float32, copy=False) for s in split_channels(block, n_c)]
    h, w = block.shape[1:]

    ref_maps = []
    ref_fields = []
    ref_handles = []
    for ref in refs:
        ref3 = ref.matching
        layout = grid_layout(ref3.shape[1], ref3.shape[2], spec.n_r, params.patch_size)
        cands = []
        cand_fields = []
        cand_handles = []
        for r, (r0, c0, ph, pw) in enumerate(layout):
            feats = np.ascontiguousarray(ref3[:, r0:r0 + ph, c0:c0 + pw])
            handle = ledger.register("ref_parts", int(feats.nbytes)) if ledger else None
            try:
                res = level1_input_attention(subs, Part(r, (r0, c0), feats), params, pool)
            finally:
                if handle is not None:
                    ledger.release(handle)
            cands.append(res.values)
            if ledger:
                cand_handles.append(ledger.register("merged", int(res.values.nbytes)))
            cand_fields.append({
                "r": np.full((h, w), r, dtype=np.int64),
                "patch_row": res.patch_row,
                "patch_col": res.patch_col,
                "sub": res.sub,
                "score": res.score,
            })
        o2, win_r = level_merge(subs, cands, params, pool)
        field_m = _gather_field(cand_fields, win_r, _FIELD_KEYS)
        ref_maps.append(o2)
        ref_fields.append(field_m)
        if ledger:
            for handle in cand_handles:
                ledger.release(handle)
            ref_handles.append(ledger.register("merged", int(o2.nbytes)))

    out_map, win_m = level_merge(subs, ref_maps, params, pool)
    weights = weight_map(subs, ref_maps, win_m, params)
    field = _gather_field(ref_fields, win_m, _FIELD_KEYS)
    field["m"] = win_m.astype(np.int64)
    if ledger:
        for handle in ref_handles:
            ledger.release(handle)
    return out_map, weights, field


def match_hierarchical(input_pyr: FeaturePyramid, refs: list[FeaturePyramid],
                       spec: PartitionSpec, params: MatchParams,
                       ledger: MemoryLedger | None = None,
                       threads: int = 1) -> SwapOutput:
    """Run the hierarchy at the coarsest scale of the input pyramid.

    ``refs`` order defines the reference index m.  With n_i > 1 the input
    map is tiled like a reference, the hierarchy runs per tile, and the
    tiles' outputs are stitched back along disjoint ownership regions.
    """
    if len(refs) != spec.n_m:
        raise ShapeError(f"spec.n_m={spec.n_m} but {len(refs)} references given")
    in3 = input_pyr.matching
    for ref in refs:
        if ref.matching.shape[0] != in3.shape[0]:
            raise ShapeError("reference channel count differs from input")
    channels = tuple(s.shape[0] for s in input_pyr.scales)
    n_c = spec.n_c if spec.n_c > 0 else auto_nc(channels)
    if in3.shape[0] % n_c != 0:
        raise DivisibilityError(f"{n_c} subvectors do not divide {in3.shape[0]} channels")

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        if spec.n_i == 1:
            out_map, weights, field = _match_block(
                in3, refs, spec, n_c, params, ledger, pool)
        else:
            out_map, weights, field = _match_tiled(
                in3, refs, spec, n_c, params, ledger, pool)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    return SwapOutput(
        swapped=out_map,
        weights=weights.astype(np.float32),
        field=MatchField(
            m=field["m"], r=field["r"],
            patch_row=field["patch_row"], patch_col=field["patch_col"],
            sub=field["sub"], score=field["score"],
        ),
    )


def _match_tiled(in3: np.ndarray, refs: list[FeaturePyramid], spec: PartitionSpec,
                 n_c: int, params: MatchParams, ledger: MemoryLedger | None,
                 pool: ThreadPoolExecutor | None) -> tuple[np.ndarray, np.ndarray, dict]:
    """n_i > 1: run per input tile, stitch along ownership midlines."""
    c, h, w = in3.shape
    g = math.isqrt(spec.n_i)
    overlap = params.patch_size - 1
    rows = axis_layout(h, g, overlap)
    cols = axis_layout(w, g, overlap)
    if min(s for _, s in rows) < params.patch_size or min(s for _, s in cols) < params.patch_size:
        raise SizeError(f"matching map {h}x{w} too small for n_i={spec.n_i}")
    spans_r = owned_spans(rows)
    spans_c = owned_spans(cols)

    out_map = np.empty_like(in3)
    weights = np.empty((h, w), dtype=np.float64)
    field = {key: np.empty((h, w), dtype=np.int64) for key in ("m", "r", "sub", "patch_row", "patch_col")}
    field["score"] = np.empty((h, w), dtype=np.float64)

    for ir, (r0, rh) in enumerate(rows):
        for ic, (c0, cw) in enumerate(cols):
            block = np.ascontiguousarray(in3[:, r0:r0 + rh, c0:c0 + cw])
            bmap, bweights, bfield = _match_block(
                block, refs, spec, n_c, params, ledger, pool)
            own_r = spans_r[ir]
            own_c = spans_c[ic]
            dst = (slice(own_r[0], own_r[1]), slice(own_c[0], own_c[1]))
            src = (slice(own_r[0] - r0, own_r[1] - r0), slice(own_c[0] - c0, own_c[1] - c0))
            out_map[:, dst[0], dst[1]] = bmap[:, src[0], src[1]]
            weights[dst] = bweights[src]
            for key in ("m", *_FIELD_KEYS):
                field[key][dst] = bfield[key][src]
    return out_map, weights, field


def verify_provenance(swap: SwapOutput, refs: list[FeaturePyramid]) -> int:
    """Re-fetch every recorded winner; count positions whose copied values differ.

    Zero means the provenance chain is sound: the field alone suffices to
    reproduce the swapped map from raw reference features.
    """
    field = swap.field
    h, w = field.m.shape
    mismatches = 0
    for m in range(len(refs)):
        mask = field.m == m
        if not mask.any():
            continue
        ref3 = refs[m].matching
        fetched = ref3[:, field.patch_row[mask], field.patch_col[mask]]
        got = swap.swapped[:, mask]
        mismatches += int((fetched != got).any(axis=0).sum())
    return mismatches
