"""Command-line interface.

Exit codes: 0 success (warnings included), 2 usage error, 3 data error,
4 numerical failure.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .clustering import ClusteringError, kmeans, silhouette
from .data_io import (
    BlobSpec, DataError, MultiplexImage, ensure_dir, load_matrix, save_matrix, synth_blobs,
    write_ppm,
)
from .density import EmbeddingRangeError, estimate_k, histogram
from .evaluation import pseudo_rgb, write_cluster_map
from .pipeline import PipelineConfig, benchmark, embed, run_batch, run_pipeline, train_model, write_outputs

log = logging.getLogger("emdens")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _sizes(text):
    try:
        sizes = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer sizes {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("layer sizes must be positive")
    return sizes


def _existing(path):
    if not Path(path).exists():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _add_config(p, training=False, density=False, clustering=False):
    p.add_argument("--seed", type=int, default=0)
    if training:
        p.add_argument("--layer-sizes", type=_sizes, default=(15, 10, 3))
        p.add_argument("--alpha", type=float, default=1e-4)
        p.add_argument("--beta", type=float, default=100.0)
        p.add_argument("--gamma", type=float, default=0.5)
        p.add_argument("--max-epochs", type=int, default=10000)
        p.add_argument("--train-subsample", type=int, default=None,
                       help="train on this many randomly chosen pixels")
    if density:
        p.add_argument("--bins", type=int, default=10)
        p.add_argument("--percentile-floor", type=float, default=20.0)
    if clustering:
        p.add_argument("--k-max", type=int, default=30)
        p.add_argument("--tolerance", type=float, default=0.005)
        p.add_argument("--silhouette-subsample", type=int, default=10000)
        p.add_argument("--ssd-subsample", type=int, default=50000)
        p.add_argument("--restarts", type=int, default=5)


def _config(args):
    cfg = PipelineConfig(seed=args.seed)
    for name in ("layer_sizes", "alpha", "beta", "gamma", "max_epochs", "train_subsample",
                 "bins", "percentile_floor", "k_max", "tolerance",
                 "silhouette_subsample", "ssd_subsample"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "restarts"):
        cfg.kmeans_restarts = args.restarts
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="emdens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic multiplex image of Gaussian blobs")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--points-per-cluster", type=int, required=True)
    p.add_argument("--channels", type=int, default=19)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".csv or .f32 path; labels go to <stem>.labels.csv")

    p = sub.add_parser("train", help="train the stacked sparse autoencoder")
    p.add_argument("--input", type=_existing, required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--log", help="cost history per stage (CSV)")
    _add_config(p, training=True)

    p = sub.add_parser("embed", help="encode an image with a trained model")
    p.add_argument("--model", type=_existing, required=True)
    p.add_argument("--input", type=_existing, required=True)
    p.add_argument("--out", required=True, help="embedding matrix (.csv or .f32)")
    p.add_argument("--ppm", help="also write the pseudo-RGB image here")

    p = sub.add_parser("estimate-k", help="estimate k from embedded density outliers")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--embedding", type=_existing)
    src.add_argument("--input", type=_existing)
    p.add_argument("--model", type=_existing)
    p.add_argument("--out-dir")
    _add_config(p, density=True)

    p = sub.add_parser("cluster", help="k-means on an embedding")
    p.add_argument("--embedding", type=_existing, required=True)
    p.add_argument("--k", type=int, help="number of clusters (default: density estimate)")
    p.add_argument("--out-dir", required=True)
    _add_config(p, density=True, clustering=True)

    p = sub.add_parser("pipeline", help="embed, estimate k, cluster and report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=_existing)
    src.add_argument("--manifest", type=_existing, help="text file listing one input per line")
    p.add_argument("--model", required=True)
    p.add_argument("--train", action="store_true",
                   help="train the model on the (first) input if it does not exist")
    p.add_argument("--with-ssd", action="store_true", help="also run the SSD elbow baseline")
    p.add_argument("--out-dir", required=True)
    _add_config(p, training=True, density=True, clustering=True)

    p = sub.add_parser("benchmark", help="time the density estimate against the SSD elbow")
    p.add_argument("--model", type=_existing, required=True)
    p.add_argument("--input", type=_existing, required=True)
    p.add_argument("--training-time", type=float,
                   help="seconds spent training the model, reported amortised")
    p.add_argument("--n-datasets", type=int, default=1)
    p.add_argument("--out")
    _add_config(p, density=True, clustering=True)
    return parser


def _write_json(obj, path):
    text = json.dumps(obj, indent=1) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    spec = BlobSpec(args.clusters, args.points_per_cluster, args.channels,
                    args.separation, args.noise_sigma, args.seed)
    img, labels = synth_blobs(spec)
    save_matrix(img, args.out)
    out = Path(args.out)
    np.savetxt(out.with_name(out.stem + ".labels.csv"), labels, fmt="%d")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    img = load_matrix(args.input)
    t0 = time.perf_counter()
    model = train_model(img, cfg)
    log.info("training took %.2f s", time.perf_counter() - t0)
    ae.save_model(model, args.model)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write("stage,iteration,cost\n")
            for stage, hist in enumerate(model.history):
                for it, cost in enumerate(hist, 1):
                    fh.write(f"{stage},{it},{cost!r}\n")
    return EXIT_OK


def cmd_embed(args):
    model = ae.load_model(args.model)
    img = load_matrix(args.input)
    z = embed(model, img)
    save_matrix(MultiplexImage(img.height, img.width, z), args.out)
    if args.ppm:
        write_ppm(pseudo_rgb(z, img.height, img.width), args.ppm)
    return EXIT_OK


def _embedding_for(args):
    if args.embedding:
        return load_matrix(args.embedding).data
    if not args.model:
        raise UsageError("--input needs --model")
    return embed(ae.load_model(args.model), load_matrix(args.input))


def cmd_estimate_k(args):
    z = _embedding_for(args)
    hist = histogram(z, args.bins)
    est = estimate_k(hist, args.percentile_floor)
    if args.out_dir:
        out = ensure_dir(args.out_dir)
        hist.to_csv(out / "histogram.csv")
        est.to_json(out / "k_estimate.json")
    _write_json(est.to_dict(), None)
    if est.homogeneous:
        log.warning("no density outliers: embedding looks homogeneous")
    return EXIT_OK


def cmd_cluster(args):
    emb = load_matrix(args.embedding)
    z = emb.data
    k = args.k
    if k is None:
        est = estimate_k(histogram(z, args.bins), args.percentile_floor)
        if est.homogeneous:
            log.warning("no density outliers: embedding looks homogeneous, nothing to cluster")
            return EXIT_OK
        k = est.k
    res = kmeans(z, k, restarts=args.restarts, seed=args.seed)
    out = ensure_dir(args.out_dir)
    write_cluster_map(res.labels, emb.height, emb.width,
                      out / "clusters.ppm", out / "clusters.pgm", k)
    np.savetxt(out / "labels.csv", res.labels, fmt="%d")
    summary = {"k": k, "total_ssd": res.total_ssd, "iterations": res.iterations}
    if k >= 2:
        summary["silhouette"] = silhouette(
            z, res.labels, args.silhouette_subsample, args.seed).to_dict()
    _write_json(summary, out / "clusters.json")
    return EXIT_OK


def _read_manifest(path):
    base = Path(path).parent
    items = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            p = Path(line)
            items.append(str(p if p.is_absolute() else base / p))
    if not items:
        raise UsageError(f"manifest {path} lists no inputs")
    for item in items:
        if not Path(item).exists():
            raise UsageError(f"manifest entry does not exist: {item}")
    return items


def cmd_pipeline(args):
    cfg = _config(args)
    inputs = _read_manifest(args.manifest) if args.manifest else [args.input]
    model_path = Path(args.model)
    if model_path.exists():
        model = ae.load_model(model_path)
    elif args.train:
        model = train_model(load_matrix(inputs[0]), cfg)
        ae.save_model(model, model_path)
    else:
        raise UsageError(f"model {model_path} does not exist (pass --train to create it)")

    if args.manifest:
        reports = run_batch(model, inputs, load_matrix, cfg, args.out_dir, args.with_ssd)
    else:
        img = load_matrix(inputs[0])
        res = run_pipeline(model, img, cfg, args.with_ssd)
        reports = [write_outputs(res, img, args.out_dir, Path(inputs[0]).stem)]
    for rep in reports:
        if rep["homogeneous"]:
            log.warning("%s: homogeneous embedding, no clustering", rep["dataset"])
        else:
            log.info("%s: k = %s", rep["dataset"], rep["k"])
    return EXIT_OK


def cmd_benchmark(args):
    cfg = _config(args)
    model = ae.load_model(args.model)
    img = load_matrix(args.input)
    rep = benchmark(model, img, cfg, args.training_time, args.n_datasets)
    _write_json(rep, args.out)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "estimate-k": cmd_estimate_k,
    "cluster": cmd_cluster,
    "pipeline": cmd_pipeline,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"emdens: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ae.ModelFormatError, EmbeddingRangeError, OSError) as exc:
        print(f"emdens: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ae.TrainingDivergence as exc:
        print(f"emdens: training diverged in {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ClusteringError, FloatingPointError) as exc:
        print(f"emdens: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
