"""Subcommand front end: synth, build-graph, train, cluster, topics, tq,
spatial, pipeline, baseline, sweep.

Exit codes: 0 success, 1 internal error, 2 usage/input error. All randomness
derives from the single --seed flag through labeled hashing; artifacts that
feed the determinism contract (assignments, topics.json, tq.json, GeoJSON)
are byte-stable for a fixed seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import clustering, corpus_io, gnn_core, graph_builder, spatial_stats, synthetic, topics, trainer
from .losses import LossWeights
from .seeding import derive_seed

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

DEFAULT_K_SPECT = 10
DEFAULT_K_KW = 15


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError as exc:
            raise ValueError("TOML configs need Python 3.11+; use JSON") from exc
        cfg = tomllib.loads(text)
    else:
        cfg = json.loads(text)
    # a manifest doubles as a config file
    if "config" in cfg and isinstance(cfg["config"], dict):
        cfg = cfg["config"]
    return cfg


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: dict,
                    artifacts: dict, seed: int, started: float) -> None:
    payload = {
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs.values()},
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "timing_s": time.perf_counter() - started,
    }
    _write_json(out_dir / "manifest.json", payload)


_TRAIN_FIELDS = (
    "arch", "epochs", "lr", "k_graph", "k_means", "kmeans_seed", "stride",
    "patience", "min_delta", "holdout_fraction", "hidden_dim", "embed_dim",
    "heads", "dropout", "fusion", "halo",
)
_WEIGHT_FIELDS = ("alpha", "beta", "gamma", "lambda_coh", "tau")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=["mono", "multi"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lambda_coh", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--k-graph", dest="k_graph", type=int)
    p.add_argument("--k-means", dest="k_means", type=int)
    p.add_argument("--kmeans-seed", dest="kmeans_seed", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--min-delta", dest="min_delta", type=float)
    p.add_argument("--holdout", dest="holdout_fraction", type=float)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--fusion", choices=list(gnn_core.FUSIONS))
    p.add_argument("--halo", type=int)


def _resolve_train_config(args, cfg: dict) -> trainer.TrainConfig:
    """CLI flag > config file > TrainConfig default."""
    resolved = {}
    for name in _TRAIN_FIELDS:
        value = getattr(args, name, None)
        if value is None:
            value = cfg.get(name)
        if value is not None:
            resolved[name] = value
    weights = dict(cfg.get("weights", {}))
    for name in _WEIGHT_FIELDS:
        value = getattr(args, name, None)
        if value is None and name in cfg:
            value = cfg[name]
        if value is not None:
            weights[name] = value
    resolved["weights"] = LossWeights(**weights)
    resolved["seed"] = args.seed if args.seed is not None else cfg.get("seed", 42)
    return trainer.TrainConfig(**resolved)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 42
    spec = synthetic.SynthSpec(
        n=args.n, d=args.dim, topics=args.topics, rho=args.rho, seed=seed,
        sem_sigma=args.sem_sigma, spatial_sigma=args.spatial_sigma,
        noise_rate=args.noise_rate, with_text=not args.no_text,
    )
    corpus, labels = synthetic.generate(spec)
    corpus_path = out / f"corpus.{args.format}"
    corpus_io.write_corpus(corpus, str(corpus_path), args.format)
    synthetic.write_labels_csv(str(out / "labels.csv"), corpus, labels)
    _write_manifest(out, "synth", {"spec": spec.__dict__ | {"vocab": None, "noise_words": None,
                                                            "spatial_centers": None}},
                    {}, {"corpus": corpus_path, "labels": out / "labels.csv"}, seed, started)
    print(f"wrote {corpus_path} (n={corpus.n}, d={corpus.dim})")
    return EXIT_OK


def cmd_build_graph(args) -> int:
    corpus = corpus_io.load_corpus(args.corpus)
    if args.relation == "semantic":
        graph = graph_builder.semantic_knn_graph(corpus, args.k)
    else:
        graph = graph_builder.geographic_knn_graph(corpus, args.k)
    content_hash = graph_builder.graph_content_hash(corpus, args.k, args.relation)
    graph_builder.save_graph_cache(graph, args.out, content_hash)
    print(f"wrote {args.out} ({graph.src.size} directed edges)")
    return EXIT_OK


def _train_once(corpus, tcfg: trainer.TrainConfig, out: Path):
    result = trainer.train(corpus, tcfg)
    trainer.save_checkpoint(str(out / "checkpoint.bin"), result.params)
    emb_corpus = corpus_io.corpus_from_arrays(
        corpus.ids, result.embeddings.astype(np.float32), corpus.coords,
        [p.text for p in corpus.posts] if corpus.has_text else None,
    )
    corpus_io.write_corpus(emb_corpus, str(out / "embeddings.embd"), "embd")
    result.history.to_jsonl(str(out / "history.jsonl"))
    _write_json(out / "train_summary.json", {
        "stop_epoch": result.history.stop_epoch,
        "stopped_early": result.history.stopped_early,
        "best_metric": result.history.best_metric,
        "config": result.history.config,
    })
    return result


def cmd_train(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    cfg = _load_config(args.config) if args.config else {}
    tcfg = _resolve_train_config(args, cfg)
    corpus = corpus_io.load_corpus(args.corpus)
    result = _train_once(corpus, tcfg, out)
    _write_manifest(out, "train", tcfg.to_dict(), {"corpus": args.corpus},
                    {"checkpoint": out / "checkpoint.bin",
                     "embeddings": out / "embeddings.embd",
                     "history": out / "history.jsonl"},
                    tcfg.seed, started)
    print(f"trained {tcfg.arch} for {result.history.stop_epoch} epochs "
          f"(early stop: {result.history.stopped_early})")
    return EXIT_OK


def cmd_cluster(args) -> int:
    out = _out_dir(args)
    corpus = corpus_io.load_corpus(args.embeddings)
    z = corpus.embeddings.astype(np.float64)
    seed = args.seed if args.seed is not None else 42
    cluster_seed = derive_seed(seed, "spectral" if args.method == "spectral" else "kmeans")
    if args.method == "spectral":
        ca = clustering.spectral_clustering(z, args.k, cluster_seed)
    else:
        ca = clustering.kmeans(z, args.k, cluster_seed)
    clustering.write_assignment_csv(str(out / "assignments.csv"), corpus.ids, ca)
    metrics = clustering.cluster_metrics(z, ca)
    clustering.write_metrics_json(str(out / "metrics.json"), metrics, args.k,
                                  args.method, seed)
    print(f"clustered n={corpus.n} into k={args.k} "
          f"(intra={metrics['intra']:.4f}, inter={metrics['inter']:.4f})")
    return EXIT_OK


def _load_assignment(corpus, path) -> np.ndarray:
    mapping = clustering.read_assignment_csv(path)
    missing = [pid for pid in corpus.ids if pid not in mapping]
    if missing:
        raise ValueError(f"assignments missing {len(missing)} corpus ids "
                         f"(first: {missing[0]!r})")
    return np.array([mapping[pid] for pid in corpus.ids], dtype=np.int64)


def cmd_topics(args) -> int:
    out = _out_dir(args)
    corpus = corpus_io.load_corpus(args.corpus)
    assignment = _load_assignment(corpus, args.assignments)
    k = int(assignment.max()) + 1
    payload = topics.topics_report(corpus, assignment, k, args.k_kw)
    topics.write_topics_json(str(out / "topics.json"), payload)
    print(f"wrote topics.json (tq={payload['corpus']['tq']:.4f})")
    return EXIT_OK


def cmd_tq(args) -> int:
    out = _out_dir(args)
    corpus = corpus_io.load_corpus(args.corpus)
    assignment = _load_assignment(corpus, args.assignments)
    k = int(assignment.max()) + 1
    payload = topics.topics_report(corpus, assignment, k, args.k_kw)
    _write_json(out / "tq.json", payload["corpus"])
    print(f"tc={payload['corpus']['tc']:.4f} td={payload['corpus']['td']:.4f} "
          f"tq={payload['corpus']['tq']:.4f}")
    return EXIT_OK


def _spatial_reports(corpus, assignment, out: Path, k: int, cell_deg: float,
                     permutations: int, seed: int) -> dict:
    spec = spatial_stats.grid_from_corpus(corpus, cell_deg)
    moran_weights = spatial_stats.queen_weights(spec.n_rows, spec.n_cols)
    gi_weights = spatial_stats.gi_star_weights(spec.n_rows, spec.n_cols)
    summary_rows = []
    artifacts = {}
    for t in range(k):
        grid, _dropped = spatial_stats.bin_topic_counts(corpus, assignment, t, spec)
        if np.allclose(grid.values, grid.values[0]):
            gi_z = np.zeros(spec.m)
            lisa_res = {"i": np.zeros(spec.m), "p": np.ones(spec.m),
                        "classes": ["not_significant"] * spec.m,
                        "quadrants": ["LL"] * spec.m, "lag": np.zeros(spec.m)}
            moran = {"i": float("nan"), "p": float("nan")}
        else:
            gi_z = spatial_stats.getis_ord_gi_star(grid.values, gi_weights)
            lisa_res = spatial_stats.lisa(grid.values, moran_weights,
                                          permutations, derive_seed(seed, f"lisa:{t}"))
            moran = spatial_stats.morans_i(grid.values, moran_weights,
                                           permutations, derive_seed(seed, f"moran:{t}"))
        fc = spatial_stats.topic_feature_collection(grid, gi_z, lisa_res)
        geo_path = out / f"spatial_topic_{t}.geojson"
        _write_json(geo_path, fc)
        artifacts[f"geojson_{t}"] = geo_path
        summary_rows.append((t, moran["i"], moran["p"]))
    spatial_stats.write_moran_summary_csv(str(out / "moran_summary.csv"), summary_rows)
    artifacts["moran_summary"] = out / "moran_summary.csv"
    return artifacts


def cmd_spatial(args) -> int:
    out = _out_dir(args)
    corpus = corpus_io.load_corpus(args.corpus)
    assignment = _load_assignment(corpus, args.assignments)
    seed = args.seed if args.seed is not None else 42
    k = int(assignment.max()) + 1
    _spatial_reports(corpus, assignment, out, k, args.cell_deg, args.permutations, seed)
    print(f"wrote spatial layers for {k} topics")
    return EXIT_OK


def _pipeline_core(corpus, tcfg, out: Path, k_spect: int, k_kw: int):
    """train -> spectral cluster -> keywords/TQ; returns (result, assignment, report|None)."""
    result = _train_once(corpus, tcfg, out)
    z = result.embeddings
    ca = clustering.spectral_clustering(z, k_spect, derive_seed(tcfg.seed, "spectral"))
    clustering.write_assignment_csv(str(out / "assignments.csv"), corpus.ids, ca)
    metrics = clustering.cluster_metrics(z, ca)
    clustering.write_metrics_json(str(out / "metrics.json"), metrics, k_spect,
                                  "spectral", tcfg.seed)
    report = None
    if corpus.has_text:
        report = topics.topics_report(corpus, ca.labels, k_spect, k_kw)
        topics.write_topics_json(str(out / "topics.json"), report)
        _write_json(out / "tq.json", report["corpus"])
    return result, ca, report


def cmd_pipeline(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    cfg = _load_config(args.config) if args.config else {}
    tcfg = _resolve_train_config(args, cfg)
    k_spect = args.k_spect if args.k_spect is not None else cfg.get("k_spect", DEFAULT_K_SPECT)
    k_kw = args.k_kw if args.k_kw is not None else cfg.get("k_kw", DEFAULT_K_KW)
    cell_deg = args.cell_deg if args.cell_deg is not None else cfg.get("cell_deg", 0.1)
    permutations = (args.permutations if args.permutations is not None
                    else cfg.get("permutations", 999))
    corpus = corpus_io.load_corpus(args.corpus)
    result, ca, report = _pipeline_core(corpus, tcfg, out, k_spect, k_kw)
    if report is None:
        print("notice: corpus has no text; topic keyword/TQ stages skipped")
    artifacts = {
        "checkpoint": out / "checkpoint.bin",
        "embeddings": out / "embeddings.embd",
        "assignments": out / "assignments.csv",
        "metrics": out / "metrics.json",
    }
    if report is not None:
        artifacts["topics"] = out / "topics.json"
        artifacts["tq"] = out / "tq.json"
    artifacts.update(_spatial_reports(corpus, ca.labels, out, k_spect,
                                      cell_deg, permutations, tcfg.seed))
    full_config = tcfg.to_dict() | {"k_spect": k_spect, "k_kw": k_kw,
                                    "cell_deg": cell_deg, "permutations": permutations}
    _write_manifest(out, "pipeline", full_config, {"corpus": args.corpus},
                    artifacts, tcfg.seed, started)
    if report is not None:
        print(f"pipeline done: tq={report['corpus']['tq']:.4f}")
    else:
        print("pipeline done (no topic stages)")
    return EXIT_OK


def cmd_baseline(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 42
    corpus = corpus_io.load_corpus(args.corpus)
    z = corpus.embeddings.astype(np.float64)
    k_spect = args.k_spect if args.k_spect is not None else DEFAULT_K_SPECT
    ca = clustering.spectral_clustering(z, k_spect, derive_seed(seed, "spectral"))
    clustering.write_assignment_csv(str(out / "assignments.csv"), corpus.ids, ca)
    metrics = clustering.cluster_metrics(z, ca)
    clustering.write_metrics_json(str(out / "metrics.json"), metrics, k_spect,
                                  "spectral", seed)
    artifacts = {"assignments": out / "assignments.csv", "metrics": out / "metrics.json"}
    if corpus.has_text:
        report = topics.topics_report(corpus, ca.labels, k_spect, args.k_kw)
        topics.write_topics_json(str(out / "topics.json"), report)
        _write_json(out / "tq.json", report["corpus"])
        artifacts["topics"] = out / "topics.json"
        artifacts["tq"] = out / "tq.json"
        print(f"baseline tq={report['corpus']['tq']:.4f} "
              f"(intra={metrics['intra']:.4f}, inter={metrics['inter']:.4f})")
    else:
        print(f"baseline intra={metrics['intra']:.4f}, inter={metrics['inter']:.4f}")
    _write_manifest(out, "baseline", {"k_spect": k_spect, "k_kw": args.k_kw},
                    {"corpus": args.corpus}, artifacts, seed, started)
    return EXIT_OK


def _parse_sweep(expr: str):
    name, _, values = expr.partition("=")
    if not values:
        raise ValueError("sweep syntax: name=v1,v2,... (e.g. alpha=0.2,0.5,0.8)")
    name = name.strip()
    sweepable = set(_WEIGHT_FIELDS) | {"lambda", "k_means", "seed", "stride", "lr", "epochs"}
    if name not in sweepable:
        raise ValueError(f"cannot sweep {name!r}; choose one of {sorted(sweepable)}")
    if name == "lambda":
        name = "lambda_coh"
    caster = int if name in ("k_means", "seed", "stride", "epochs") else float
    return name, [caster(v) for v in values.split(",")]


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    cfg = _load_config(args.config) if args.config else {}
    param, values = _parse_sweep(args.sweep)
    archs = args.archs.split(",") if args.archs else ["mono"]
    corpus = corpus_io.load_corpus(args.corpus)
    runs = []
    for arch in archs:
        for value in values:
            tcfg = _resolve_train_config(args, cfg)
            tcfg.arch = arch
            if param in _WEIGHT_FIELDS or param == "lambda_coh":
                setattr(tcfg.weights, param, value)
            else:
                setattr(tcfg, param, value)
            cell = out / f"{arch}_{param}_{value}"
            cell.mkdir(parents=True, exist_ok=True)
            _, _, report = _pipeline_core(corpus, tcfg, cell,
                                          args.k_spect or DEFAULT_K_SPECT,
                                          args.k_kw or DEFAULT_K_KW)
            tq = report["corpus"]["tq"] if report else None
            runs.append({"arch": arch, "param": param, "value": value,
                         "tq": tq, "dir": str(cell)})
            print(f"[{arch}] {param}={value} -> tq={tq}")
    summary = {"param": param, "values": values, "runs": runs, "by_arch": {}}
    for arch in archs:
        tqs = [r["tq"] for r in runs if r["arch"] == arch and r["tq"] is not None]
        if tqs:
            arr = np.array(tqs)
            std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            summary["by_arch"][arch] = {
                "mean": float(arr.mean()),
                "std": std,
                "ci95": 1.96 * std / np.sqrt(arr.size),
            }
    _write_json(out / "sweep_summary.json", summary)
    _write_manifest(out, "sweep", {"param": param, "values": values, "archs": archs},
                    {"corpus": args.corpus}, {"summary": out / "sweep_summary.json"},
                    args.seed if args.seed is not None else 42, started)
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geotopics",
                                     description="Geo-semantic topic discovery engine")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None)
    common.add_argument("--out-dir", dest="out_dir", default="out")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--topics", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--sem-sigma", dest="sem_sigma", type=float, default=0.15)
    p.add_argument("--spatial-sigma", dest="spatial_sigma", type=float, default=0.4)
    p.add_argument("--noise-rate", dest="noise_rate", type=float, default=0.1)
    p.add_argument("--no-text", action="store_true")
    p.add_argument("--format", choices=["embd", "jsonl"], default="embd")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", parents=[common], help="build and cache a kNN graph")
    p.add_argument("--corpus", required=True)
    p.add_argument("--relation", choices=["semantic", "geographic"], default="semantic")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", parents=[common], help="train an encoder")
    p.add_argument("--corpus", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", parents=[common], help="cluster an embeddings file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--method", choices=["spectral", "kmeans"], default="spectral")
    p.add_argument("--k", type=int, default=DEFAULT_K_SPECT)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("topics", parents=[common], help="extract keywords per cluster")
    p.add_argument("--corpus", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--k-kw", dest="k_kw", type=int, default=DEFAULT_K_KW)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("tq", parents=[common], help="topic quality metrics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--k-kw", dest="k_kw", type=int, default=DEFAULT_K_KW)
    p.set_defaults(func=cmd_tq)

    p = sub.add_parser("spatial", parents=[common], help="spatial autocorrelation layers")
    p.add_argument("--corpus", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--cell-deg", dest="cell_deg", type=float, default=0.1)
    p.add_argument("--permutations", type=int, default=999)
    p.set_defaults(func=cmd_spatial)

    p = sub.add_parser("pipeline", parents=[common],
                       help="train, cluster, keywords, TQ, spatial layers")
    p.add_argument("--corpus", required=True)
    _add_train_flags(p)
    p.add_argument("--k-spect", dest="k_spect", type=int, default=None)
    p.add_argument("--k-kw", dest="k_kw", type=int, default=None)
    p.add_argument("--cell-deg", dest="cell_deg", type=float, default=None)
    p.add_argument("--permutations", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("baseline", parents=[common],
                       help="no-graph baseline: cluster + TQ on input embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k-spect", dest="k_spect", type=int, default=None)
    p.add_argument("--k-kw", dest="k_kw", type=int, default=DEFAULT_K_KW)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", parents=[common], help="hyperparameter sweep harness")
    p.add_argument("--corpus", required=True)
    p.add_argument("--sweep", required=True, help="name=v1,v2,... e.g. alpha=0.2,0.5,0.8")
    p.add_argument("--archs", default=None, help="comma list, e.g. mono,multi")
    _add_train_flags(p)
    p.add_argument("--k-spect", dest="k_spect", type=int, default=None)
    p.add_argument("--k-kw", dest="k_kw", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: input file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, corpus_io.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
