"""Command-line front end.

Verbs: superres, oracle-check, bench, evaluate, extract, match.
Exit codes: 0 success, 1 configuration error, 2 I/O or file-format
error, 3 computation error inside the pipeline.  All diagnostics go to
stderr as single lines; structured results (JSON / CSV) go to stdout
with fixed key order and dot decimal separators.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, FormatError, RefsrError
from .features import build_extractor, pyramid_from_matching
from .imageio import read_png, resize_bicubic, save_tensor, write_png
from .matching import match_hierarchical
from .memledger import MemoryLedger
from .metrics import psnr_y, ssim_y
from .oracle import match_oracle
from .partition import auto_nc
from .synthesis import assemble_swaps, synthesize


def _fail(message: str) -> None:
    sys.stderr.write(f"refsr: {message}\n")


def _json_value(v: float) -> object:
    """JSON has no infinity; identical-image PSNR is reported as 'inf'."""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _build_pyramids(cfg: RunConfig, input_img: np.ndarray, ref_imgs: list[np.ndarray],
                    ledger: MemoryLedger | None):
    """Extract the input pyramid and matching pyramids of all references.

    Reference features for matching are taken from the references
    downscaled x4, so matched coordinates scale cleanly into the
    original reference frame during synthesis.
    """
    extractor = build_extractor(cfg.extractor)
    in_pyr = extractor.extract(input_img, ledger)
    ref_pyrs = []
    for ref in ref_imgs:
        h, w = ref.shape[:2]
        small = resize_bicubic(ref, (w + 3) // 4, (h + 3) // 4)
        ref_pyrs.append(extractor.extract(small, ledger))
    return in_pyr, ref_pyrs


def _common_overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    if getattr(args, "threads", None):
        overrides["threads"] = args.threads
    if getattr(args, "seed", None) is not None:
        overrides["extractor.seed"] = str(args.seed)
    refs = getattr(args, "ref", None)
    if refs:
        overrides["partition.n_m"] = str(len(refs))
    return overrides


def cmd_superres(args) -> int:
    cfg = load_config(args.config, _common_overrides(args))
    input_img = read_png(args.input)
    ref_imgs = [read_png(p) for p in args.ref]
    gt = read_png(args.ground_truth) if args.ground_truth else None

    ledger = MemoryLedger()
    t0 = time.perf_counter()
    in_pyr, ref_pyrs = _build_pyramids(cfg, input_img, ref_imgs, ledger)
    swap = match_hierarchical(in_pyr, ref_pyrs, cfg.partition, cfg.match,
                              ledger=ledger, threads=cfg.threads)
    sr = synthesize(input_img, ref_imgs, swap.field, swap.weights, cfg.synth)
    wall_ms = (time.perf_counter() - t0) * 1000.0

    write_png(args.out, sr)
    stem = args.out[:-4] if args.out.lower().endswith(".png") else args.out
    save_tensor(stem + ".field.tens", swap.field.to_tensor())
    save_tensor(stem + ".weights.tens", swap.weights)
    if args.dump_swaps:
        import os
        os.makedirs(args.dump_swaps, exist_ok=True)
        ms = assemble_swaps(swap.field, in_pyr, ref_pyrs, swap.weights,
                            patch_size=cfg.match.patch_size)
        for q in (1, 2, 3):
            save_tensor(os.path.join(args.dump_swaps, f"swap_scale{q}.tens"), ms.maps[q - 1])
            save_tensor(os.path.join(args.dump_swaps, f"weights_scale{q}.tens"), ms.weights[q - 1])

    summary: dict[str, object] = {}
    if gt is not None:
        summary["psnr_y"] = _json_value(psnr_y(sr, gt))
        summary["ssim_y"] = _json_value(ssim_y(sr, gt))
    summary["peak_bytes"] = ledger.peak_bytes()
    summary["wall_ms"] = round(wall_ms, 3)
    print(json.dumps(summary))
    return 0


def cmd_match(args) -> int:
    cfg = load_config(args.config, _common_overrides(args))
    input_img = read_png(args.input)
    ref_imgs = [read_png(p) for p in args.ref]
    in_pyr, ref_pyrs = _build_pyramids(cfg, input_img, ref_imgs, None)
    swap = match_hierarchical(in_pyr, ref_pyrs, cfg.partition, cfg.match,
                              threads=cfg.threads)
    save_tensor(args.out, swap.field.to_tensor())
    return 0


def cmd_extract(args) -> int:
    import os
    cfg = load_config(args.config, _common_overrides(args))
    input_img = read_png(args.input)
    extractor = build_extractor(cfg.extractor)
    pyr = extractor.extract(input_img)
    os.makedirs(args.out_dir, exist_ok=True)
    for q in (1, 2, 3):
        save_tensor(os.path.join(args.out_dir, f"scale{q}.tens"), pyr.scales[q - 1])
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config, _common_overrides(args))
    try:
        sweep = [int(s) for s in args.sweep.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sweep: expected comma-separated integers, got {args.sweep!r}") from None
    if not sweep:
        raise ConfigError("--sweep: empty sweep")
    for n_r in sweep:
        if n_r < 1 or math.isqrt(n_r) ** 2 != n_r:
            raise ConfigError(f"--sweep: n_r must be a positive perfect square, got {n_r}")

    input_img = read_png(args.input)
    ref_imgs = [read_png(p) for p in args.ref]
    gt = read_png(args.ground_truth) if args.ground_truth else None
    in_pyr, ref_pyrs = _build_pyramids(cfg, input_img, ref_imgs, None)

    rows = []
    for n_r in sweep:
        spec = replace(cfg.partition, n_r=n_r)
        ledger = MemoryLedger()
        t0 = time.perf_counter()
        swap = match_hierarchical(in_pyr, ref_pyrs, spec, cfg.match,
                                  ledger=ledger, threads=cfg.threads)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        peak = ledger.peak_bytes("ref_parts")
        if gt is not None:
            sr = synthesize(input_img, ref_imgs, swap.field, swap.weights, cfg.synth)
            psnr_txt = f"{psnr_y(sr, gt):.4f}"
        else:
            psnr_txt = ""
        rows.append((n_r, peak, wall_ms, psnr_txt))

    lines = ["n_r,peak_bytes,wall_ms,psnr_y"]
    for n_r, peak, wall_ms, psnr_txt in rows:
        lines.append(f"{n_r},{peak},{wall_ms:.3f},{psnr_txt}")
    csv_text = "\n".join(lines) + "\n"
    sys.stdout.write(csv_text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)

    peaks = [peak for _, peak, _, _ in rows]
    for prev, cur in zip(peaks, peaks[1:]):
        if cur > prev:
            raise RefsrError(
                f"peak reference bytes increased along the sweep: {peaks}")
    return 0


def cmd_evaluate(args) -> int:
    if len(args.pairs) % 2 != 0:
        raise ConfigError("evaluate needs SR/ground-truth path pairs")
    psnrs = []
    ssims = []
    for i in range(0, len(args.pairs), 2):
        sr = read_png(args.pairs[i])
        gt = read_png(args.pairs[i + 1])
        p = psnr_y(sr, gt)
        s = ssim_y(sr, gt)
        psnrs.append(p)
        ssims.append(s)
        print(json.dumps({"path": args.pairs[i],
                          "psnr_y": _json_value(p), "ssim_y": _json_value(s)}))
    print(json.dumps({"path": "aggregate",
                      "psnr_y": _json_value(sum(psnrs) / len(psnrs)),
                      "ssim_y": _json_value(sum(ssims) / len(ssims))}))
    return 0


def _synthetic_pyramid(rng: np.random.Generator, channels: int, h: int, w: int):
    """Stub pyramid for feature-level oracle trials: only scale 3 is live."""
    fm = rng.uniform(0.05, 1.0, size=(channels, h, w)).astype(np.float32)
    return pyramid_from_matching(fm)


def cmd_oracle_check(args) -> int:
    cfg = load_config(args.config, _common_overrides(args))
    if args.input and args.ref:
        input_img = read_png(args.input)
        ref_imgs = [read_png(p) for p in args.ref]
        in_pyr, ref_pyrs = _build_pyramids(cfg, input_img, ref_imgs, None)
        spec = cfg.partition
    elif args.input or args.ref:
        raise ConfigError("oracle-check needs both --input and --ref, or neither")
    else:
        seed = args.seed if args.seed is not None else cfg.extractor.seed
        rng = np.random.default_rng(seed)
        c, h, w = cfg.oracle_channels, cfg.oracle_height, cfg.oracle_width
        in_pyr = _synthetic_pyramid(rng, c, h, w)
        ref_pyrs = [_synthetic_pyramid(rng, c, h, w) for _ in range(cfg.oracle_refs)]
        spec = replace(cfg.partition, n_m=cfg.oracle_refs)

    channels = tuple(s.shape[0] for s in in_pyr.scales)
    n_c = spec.n_c if spec.n_c > 0 else auto_nc(channels)
    swap = match_hierarchical(in_pyr, ref_pyrs, spec, cfg.match, threads=cfg.threads)
    truth = match_oracle(in_pyr, ref_pyrs, cfg.match, n_c=n_c, cap=cfg.oracle_cap)

    ps = cfg.match.patch_size
    exact = spec.n_i == 1 and (
        (ps == 1 and (spec.n_r == 1 or cfg.match.stride == 1))
        or (spec.n_m == 1 and spec.n_r == 1 and n_c == 1))
    n_pos = swap.field.m.size
    if exact:
        bad = (swap.field.m != truth.field.m)
        bad |= swap.field.patch_row != truth.field.patch_row
        bad |= swap.field.patch_col != truth.field.patch_col
        bad |= swap.field.sub != truth.field.sub
        bad |= (swap.swapped != truth.swapped).any(axis=0)
        mismatches = int(bad.sum())
        report = {"mode": "exact", "positions": n_pos, "mismatches": mismatches}
        print(json.dumps(report))
        if mismatches:
            raise RefsrError(f"{mismatches} positions differ from the exhaustive scan")
    else:
        gap = swap.field.score - truth.field.score
        scale = max(1.0, float(np.abs(truth.field.score).max()))
        tol = 1e-5 * scale
        mismatches = int((gap > tol).sum())
        report = {"mode": "bound", "positions": n_pos, "mismatches": mismatches,
                  "max_gap": float(gap.max())}
        print(json.dumps(report))
        if mismatches:
            raise RefsrError(
                f"{mismatches} positions score above the exhaustive optimum")
    return 0


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refsr",
        description="Multi-reference patch matching and texture-transfer super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, refs=False, out=False):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--threads", default=None, help="worker threads or 'auto'")
        p.add_argument("--seed", type=int, default=None, help="extractor seed")
        if refs:
            p.add_argument("--input", required=True, help="low-resolution input PNG")
            p.add_argument("--ref", action="append", default=[], required=True,
                           help="reference PNG; repeat, order defines index m")
        if out:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("superres", help="full pipeline: match, transfer, blend")
    common(p, refs=True, out=True)
    p.add_argument("--ground-truth", default=None, help="PNG for PSNR/SSIM reporting")
    p.add_argument("--dump-swaps", default=None, help="directory for per-scale swap tensors")
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("oracle-check", help="compare matcher against exhaustive scan")
    common(p)
    p.add_argument("--input", default=None, help="low-resolution input PNG")
    p.add_argument("--ref", action="append", default=[], help="reference PNG (repeatable)")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="sweep reference part counts, report peaks")
    common(p, refs=True)
    p.add_argument("--sweep", default="1,4,16", help="comma-separated n_r values")
    p.add_argument("--ground-truth", default=None, help="PNG for the psnr_y column")
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of SR and ground-truth pairs")
    p.add_argument("pairs", nargs="+", help="alternating SR and ground-truth PNGs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("extract", help="dump the feature pyramid of one image")
    common(p)
    p.add_argument("--input", required=True, help="image PNG")
    p.add_argument("--out-dir", required=True, help="directory for scale{1,2,3}.tens")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("match", help="run matching only, write the field tensor")
    common(p, refs=True, out=True)
    p.set_defaults(func=cmd_match)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail(f"config error: {exc}")
        return 1
    except FormatError as exc:
        _fail(f"file error: {exc}")
        return 2
    except OSError as exc:
        _fail(f"io error: {exc}")
        return 2
    except RefsrError as exc:
        _fail(f"pipeline error: {exc}")
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
