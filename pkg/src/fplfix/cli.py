"""Command-line entry point: ``fplfix <subcommand> ...``.

Every run echoes its resolved configuration (defaults included) as one JSON
line on stderr.  Failures print a single ``error: ...`` line and exit 1;
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from fplfix import comparator, dataset_io, embedding, metrics, pipeline, robustness, synthgen
from fplfix.errors import FplfixError
from fplfix.preprocess import AugmentationParams, EnhancementParams, augment, enhance

IMAGE_SUFFIXES = (".pgm", ".png")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _image_files(folder: Path) -> list[Path]:
    if not folder.is_dir():
        raise FileNotFoundError(f"{folder}: not a directory")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _extractor(args) -> pipeline.ExtractorConfig:
    return pipeline.ExtractorConfig(branch=args.branch, enhance=not getattr(args, "no_enhance", False))


def _archive(keys, vectors) -> dataset_io.EmbeddingArchive:
    v = np.asarray(vectors, dtype=np.float32)
    return dataset_io.EmbeddingArchive(v.shape[1], tuple(keys), v)


# ------------------------------------------------------------- subcommands


def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synthgen.generate_corpus(args.identities, args.samples, args.seed)
    images = corpus.images

    def write(i: int) -> None:
        dataset_io.save_image(images[i], out / corpus.records[i].image_path)

    pipeline.parallel_map(write, range(len(images)), args.threads)
    dataset_io.write_manifest(corpus.records, out / "manifest.csv")
    dataset_io.write_minutiae_csv(corpus.minutiae(), out / "minutiae.csv")


def cmd_enhance(args) -> None:
    src, dst = Path(args.in_dir), Path(args.out)
    dst.mkdir(parents=True, exist_ok=True)
    params = EnhancementParams(binarize=args.binarize)
    files = _image_files(src)

    def one(p: Path) -> None:
        dataset_io.save_image(enhance(dataset_io.load_image(p), params), dst / p.name)

    pipeline.parallel_map(one, files, args.threads)


def cmd_augment(args) -> None:
    src, dst = Path(args.in_dir), Path(args.out)
    dst.mkdir(parents=True, exist_ok=True)
    files = _image_files(src)

    def one(item) -> None:
        i, p = item
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1, dtype=np.uint64)[0])
        params = AugmentationParams(args.rot, args.shift, args.brightness, args.contrast, seed)
        dataset_io.save_image(augment(dataset_io.load_image(p), params), dst / p.name)

    pipeline.parallel_map(one, list(enumerate(files)), args.threads)


def cmd_extract(args) -> None:
    if args.branch == "concat":
        if not (args.texture_archive and args.minutiae_archive):
            raise FplfixError("--branch concat requires --texture-archive and --minutiae-archive")
        ta = dataset_io.read_archive(args.texture_archive)
        ma = dataset_io.read_archive(args.minutiae_archive)
        if ta.keys != ma.keys:
            raise FplfixError("texture and minutiae archives hold different samples")
        keys, vecs = ta.keys, embedding.concat_branches(ta.vectors, ma.vectors)
    else:
        if args.texture_archive or args.minutiae_archive:
            raise FplfixError("branch archives are only accepted with --branch concat")
        if not args.manifest:
            raise FplfixError("--manifest is required for texture/minutiae extraction")
        if args.minutiae and args.branch != "minutiae":
            raise FplfixError("--minutiae only applies to --branch minutiae")
        records = dataset_io.load_manifest(args.manifest)
        cfg = _extractor(args)
        truth = None
        if args.minutiae:
            table = dataset_io.read_minutiae_csv(args.minutiae)
            truth = [table.get((r.subject_id, r.finger_id, r.sample_id), []) for r in records]
        loaders = pipeline.manifest_loaders(records, args.manifest)
        vecs, _ = pipeline.embed_images(loaders, cfg, args.threads, truth)
        keys = [r.key for r in records]
    vecs = np.asarray(vecs, dtype=np.float32)
    if args.dim:
        model = embedding.fit_projection(vecs.astype(np.float64), args.dim)
        vecs = embedding.project(model, vecs.astype(np.float64))
        if args.model_out:
            embedding.write_projection(model, args.model_out)
    dataset_io.write_archive(_archive(keys, vecs), args.out)


def cmd_reduce(args) -> None:
    archive = dataset_io.read_archive(args.archive)
    raw = archive.vectors.astype(np.float64)
    if args.method == "truncate":
        if args.model or args.fit_archive:
            raise FplfixError("--model/--fit-archive do not apply to truncation")
        vecs = embedding.truncate(raw, args.dim)
    else:
        if args.model:
            model = embedding.read_projection(args.model)
            if model.output_dim != args.dim:
                raise FplfixError(f"model reduces to {model.output_dim}, not --dim {args.dim}")
        else:
            fit = dataset_io.read_archive(args.fit_archive) if args.fit_archive else archive
            model = embedding.fit_projection(fit.vectors.astype(np.float64), args.dim)
        if args.model_out:
            embedding.write_projection(model, args.model_out)
        vecs = embedding.project(model, raw)
    dataset_io.write_archive(_archive(archive.keys, vecs), args.out)


def cmd_compare(args) -> None:
    archive = dataset_io.read_archive(args.archive)
    scores = comparator.all_pairs_scores(archive, args.non_mated_cap, args.seed, args.threads)
    dataset_io.write_scores(scores, args.out)


def cmd_eval_verify(args) -> None:
    scores = dataset_io.read_scores(args.scores)
    report = metrics.verification_report(scores, args.fmr_targets, args.det_points)
    out = Path(args.out)
    det_path = Path(args.det_out) if args.det_out else out.with_name("det.csv")
    payload = report.to_dict()
    payload["det_csv"] = det_path.name
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with det_path.open("w") as fh:
        fh.write("fmr,fnmr\n")
        fh.writelines(f"{f!r},{n!r}\n" for f, n in report.det)


def cmd_eval_identify(args) -> None:
    archive = dataset_io.read_archive(args.archive)
    rep = metrics.closed_set_identification(archive, args.folds, args.max_rank, args.seed)
    with open(args.out, "w") as fh:
        fh.write("rank,rate_mean,rate_std\n")
        for k, (m, s) in enumerate(zip(rep.ranks, rep.std), start=1):
            fh.write(f"{k},{float(m)!r},{float(s)!r}\n")


def cmd_perturb_grid(args) -> None:
    records = dataset_io.load_manifest(args.manifest)
    cfg = _extractor(args)
    grid = robustness.GridConfig(tuple(args.r), tuple(args.t), args.fmr, args.seed)
    loaders = pipeline.manifest_loaders(records, args.manifest)
    result = robustness.perturbation_study(loaders, records, cfg, grid, args.dim, args.threads)
    out = Path(args.out)
    with out.open("w") as fh:
        fh.write("t,r,fnmr\n")
        fh.writelines(f"{t:g},{r:g},{f!r}\n" for t, r, f in result.rows())
    side = {
        "threshold": result.threshold,
        "baseline_fnmr": result.baseline_fnmr,
        "fmr_target": result.fmr_target,
        "resolved": result.resolved,
        "seed": result.seed,
        "r_values": result.r_values,
        "t_values": result.t_values,
        **result.meta,
    }
    out.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def cmd_workload(args) -> None:
    rows = comparator.workload_table(args.sizes, args.baseline)
    with open(args.out, "w") as fh:
        fh.write("N,ops,percent\n")
        fh.writelines(f"{p.n},{p.ops},{round(p.percent_of_baseline, 4)!r}\n" for p in rows)


def run_sweep(raw: np.ndarray, keys, dims, fmr_target: float, seed: int, train_fraction: float = 0.5):
    """Fit a projection per size on training instances; score held-out ones.

    Returns rows ``(N, ops, fnmr, eer)``.
    """
    labels = dataset_io.EmbeddingArchive(raw.shape[1], tuple(keys), raw).instance_labels()
    uniq = np.unique(labels)
    rng = np.random.default_rng(seed)
    n_train = int(np.floor(train_fraction * uniq.size))
    if not 1 <= n_train < uniq.size:
        raise FplfixError("train fraction leaves no training or no test instances")
    train_inst = rng.permutation(uniq)[:n_train]
    train = np.isin(labels, train_inst)
    test_keys = tuple(k for k, t in zip(keys, train) if not t)
    raw64 = raw.astype(np.float64)
    rows = []
    for n in dims:
        model = embedding.fit_projection(raw64[train], n)
        test = embedding.project(model, raw64[~train]).astype(np.float32)
        scores = comparator.all_pairs_scores(dataset_io.EmbeddingArchive(n, test_keys, test))
        e, _ = metrics.eer(scores)
        fnmr = metrics.operating_point(scores, fmr_target).fnmr
        rows.append((n, comparator.op_count(n), fnmr, e))
    return rows


def cmd_sweep(args) -> None:
    cfg = _extractor(args)
    records = dataset_io.load_manifest(args.manifest)
    keys = [r.key for r in records]
    cache = Path(args.cache) if args.cache else None
    if cache and cache.exists():
        archive = dataset_io.read_archive(cache)
        if archive.keys != tuple(keys) or archive.dim != cfg.raw_dim:
            raise FplfixError(f"{cache}: cached embeddings do not match the manifest/branch")
        raw = archive.vectors
    else:
        loaders = pipeline.manifest_loaders(records, args.manifest)
        raw, _ = pipeline.embed_images(loaders, cfg, args.threads)
        if cache:
            dataset_io.write_archive(_archive(keys, raw), cache)
    dims = list(args.dims) if args.dims else [n for n in embedding.STANDARD_SIZES if n <= cfg.raw_dim]
    if args.dims is None:
        skipped = [n for n in embedding.STANDARD_SIZES if n > cfg.raw_dim]
        if skipped:
            print(f"note: sizes {skipped} exceed raw dimension {cfg.raw_dim}, skipped", file=sys.stderr)
    bad = [n for n in dims if n > cfg.raw_dim]
    if bad:
        raise FplfixError(f"sizes {bad} exceed raw feature dimension {cfg.raw_dim}")
    rows = run_sweep(raw, keys, dims, args.fmr, args.seed, args.train_fraction)
    with open(args.out, "w") as fh:
        fh.write("N,ops,fnmr,eer\n")
        fh.writelines(f"{n},{o},{f!r},{e!r}\n" for n, o, f, e in rows)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (env FPLFIX_THREADS)")

    p = argparse.ArgumentParser(prog="fplfix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--identities", type=int, required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("enhance", parents=[common], help="Gabor-enhance a folder of images")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--binarize", action="store_true")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("augment", parents=[common], help="randomly rotate/shift/re-light images")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rot", type=float, default=0.0)
    s.add_argument("--shift", type=float, default=0.0)
    s.add_argument("--brightness", type=float, default=0.0)
    s.add_argument("--contrast", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("extract", parents=[common], help="extract an embedding archive")
    s.add_argument("--branch", choices=pipeline.BRANCHES, default="texture")
    s.add_argument("--manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--dim", type=int)
    s.add_argument("--model-out")
    s.add_argument("--minutiae", help="ground-truth minutiae CSV instead of detection")
    s.add_argument("--texture-archive")
    s.add_argument("--minutiae-archive")
    s.add_argument("--no-enhance", action="store_true")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("reduce", parents=[common], help="reduce archive dimension")
    s.add_argument("--archive", required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=("pca", "truncate"), default="pca")
    s.add_argument("--fit-archive")
    s.add_argument("--model")
    s.add_argument("--model-out")
    s.set_defaults(func=cmd_reduce)

    s = sub.add_parser("compare", parents=[common], help="score all sample pairs")
    s.add_argument("--archive", required=True)
    s.add_argument("--non-mated-cap", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("eval-verify", parents=[common], help="EER, FNMR@FMR and DET from scores")
    s.add_argument("--scores", required=True)
    s.add_argument("--fmr-targets", type=_float_list, default=[0.001])
    s.add_argument("--det-points", type=int, default=100)
    s.add_argument("--out", required=True)
    s.add_argument("--det-out")
    s.set_defaults(func=cmd_eval_verify)

    s = sub.add_parser("eval-identify", parents=[common], help="closed-set Rank-N with k folds")
    s.add_argument("--archive", required=True)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--max-rank", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_identify)

    s = sub.add_parser("perturb-grid", parents=[common], help="FNMR over rotation x translation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--branch", choices=pipeline.BRANCHES, default="concat")
    s.add_argument("--dim", type=int)
    s.add_argument("--fmr", type=float, default=0.001)
    s.add_argument("--r", type=_float_list, default=list(robustness.DEFAULT_STEPS))
    s.add_argument("--t", type=_float_list, default=list(robustness.DEFAULT_STEPS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-enhance", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_perturb_grid)

    s = sub.add_parser("workload", parents=[common], help="operation counts per embedding size")
    s.add_argument("--sizes", type=_int_list, default=list(embedding.STANDARD_SIZES))
    s.add_argument("--baseline", type=int, default=2048)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_workload)

    s = sub.add_parser("sweep", parents=[common], help="verification performance per embedding size")
    s.add_argument("--manifest", required=True)
    s.add_argument("--branch", choices=("texture", "minutiae"), default="texture")
    s.add_argument("--dims", type=_int_list, default=None)
    s.add_argument("--fmr", type=float, default=0.001)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-fraction", type=float, default=0.5)
    s.add_argument("--cache", help="raw embedding archive, written if missing")
    s.add_argument("--no-enhance", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.threads is None:
        args.threads = pipeline.default_threads()
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(json.dumps(resolved, default=str), file=sys.stderr)
    try:
        args.func(args)
    except (FplfixError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
