"""Command-line interface: ``hgnb fit | simulate | evaluate | transform``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then explicit flags (later sources win).  Every failure exits nonzero
with one line on stderr of the form ``hgnb: error[<kind>]: <reason>``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.  The
default worker count is read from ``HGNB_WORKERS``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as hio
from .checkpoint import CheckpointError, load_state, npz_bytes, save_state
from .errors import DataError, HGNBError, NumericalError
from .evaluation import (
    adjusted_rand_index,
    cluster_centroids,
    kmeans,
    md_plot_data,
    mst_lineage,
    pca_baseline,
    scatter_svg,
    silhouette_width,
    write_md_csv,
    write_table,
)
from .gibbs import ChainError, resume_chain, run_chain, transform
from .model import CountMatrix, DesignMatrices, Hyperparams
from .simulate import PRESETS, filter_genes, preset, simulate_hgnb, simulate_zinb

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
WORKERS_ENV = "HGNB_WORKERS"

_DEFAULTS = {
    "fit": dict(counts=None, format=None, cell_covariates=None, gene_covariates=None, cell_intercept=True,
                gene_intercept=True, K=2, e0=0.01, f0=0.01, iterations=2000, burn_in=1000, thin=1, seed=0,
                pg_terms=200, block_size=128, workers=None, out=None, save_samples=False, checkpoint_every=0,
                resume=False),
    "simulate": dict(model="zinb", preset="zinb-40", genes=None, cells=None, K=2, e0=1.0, f0=1.0, seed=0,
                     format="mtx", filter=False, out=None),
    "evaluate": dict(fit=None, embedding=None, labels=None, clusters=None, counts=None, format=None,
                     cell_covariates=None, gene_covariates=None, cell_intercept=True, gene_intercept=True,
                     md_bins=20, md_bin_by="average", pca=False, seed=0, out=None),
    "transform": dict(fit=None, counts=None, format=None, cell_covariates=None, cell_intercept=True,
                      gene_covariates=None, gene_intercept=True, iterations=2000, burn_in=1000, thin=1,
                      seed=0, pg_terms=200, block_size=128, workers=None, out=None),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common_data(p):
    p.add_argument("--counts", help="count matrix (.mtx or .csv), genes x cells")
    p.add_argument("--format", choices=["mtx", "csv"], help="count format (default: from suffix)")
    p.add_argument("--cell-covariates", help="CSV, one row per covariate, one column per cell")
    p.add_argument("--gene-covariates", help="CSV, one row per covariate, one column per gene")
    p.add_argument("--no-cell-intercept", dest="cell_intercept", action="store_const", const=False,
                   help="do not prepend an all-ones row to the cell covariates")
    p.add_argument("--no-gene-intercept", dest="gene_intercept", action="store_const", const=False,
                   help="do not prepend an all-ones row to the gene covariates")


def _sampler(p):
    p.add_argument("--iterations", type=int, help="total Gibbs sweeps")
    p.add_argument("--burn-in", type=int, help="sweeps discarded before collecting")
    p.add_argument("--thin", type=int, help="keep every n-th post-burn-in sample")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--pg-terms", type=int, help="truncation level of the Polya-Gamma series")
    p.add_argument("--block-size", type=int, help="genes/cells per random-stream block")
    p.add_argument("--workers", type=int, help=f"worker threads (default ${WORKERS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hgnb", description="Hierarchical gamma-negative binomial factor model for count matrices.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a count matrix")
    p.add_argument("--config", help="JSON file with settings (flags take precedence)")
    _common_data(p)
    p.add_argument("-K", "--K", type=int, help="number of latent factors")
    p.add_argument("--e0", type=float, help="gamma prior shape")
    p.add_argument("--f0", type=float, help="gamma prior rate of the precisions")
    _sampler(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--save-samples", action="store_const", const=True, help="write samples.npz")
    p.add_argument("--checkpoint-every", type=int, help="write a checkpoint every n sweeps")
    p.add_argument("--resume", action="store_const", const=True, help="continue from <out>/checkpoint.hgnb")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file with settings (flags take precedence)")
    p.add_argument("--model", choices=["zinb", "hgnb"], help="ZINB benchmark or forward hGNB draw")
    p.add_argument("--preset", help=f"ZINB preset ({', '.join(sorted(PRESETS))})")
    p.add_argument("--genes", type=int, help="override the number of genes")
    p.add_argument("--cells", type=int, help="override the number of cells")
    p.add_argument("-K", "--K", type=int, help="factors (hgnb model)")
    p.add_argument("--e0", type=float, help="prior shape (hgnb model)")
    p.add_argument("--f0", type=float, help="prior rate (hgnb model)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--format", choices=["mtx", "csv"], help="count output format")
    p.add_argument("--filter", action="store_const", const=True,
                   help="drop genes without 5 reads in at least 5 cells")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("evaluate", help="score an embedding and check goodness of fit")
    p.add_argument("--config", help="JSON file with settings (flags take precedence)")
    p.add_argument("--fit", help="output directory of 'hgnb fit'")
    p.add_argument("--embedding", help="CSV embedding (cells x dims, as written by fit)")
    p.add_argument("--labels", help="CSV of true labels (cell,label)")
    p.add_argument("--clusters", type=int, help="run k-means with this many clusters")
    _common_data(p)
    p.add_argument("--md-bins", type=int, help="bins of the MD running mean")
    p.add_argument("--md-bin-by", choices=["average", "expected"], help="binning variable of the MD curve")
    p.add_argument("--pca", action="store_const", const=True, help="also score the log-count PCA baseline")
    p.add_argument("--seed", type=int, help="k-means seed")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("transform", help="embed new cells with gene-side parameters fixed")
    p.add_argument("--config", help="JSON file with settings (flags take precedence)")
    p.add_argument("--fit", help="output directory of 'hgnb fit'")
    _common_data(p)
    _sampler(p)
    p.add_argument("--out", help="output directory")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags."""
    cfg = dict(_DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config {args.config}: invalid JSON at line {exc.lineno}") from None
        if not isinstance(loaded, dict):
            raise DataError(f"config {args.config}: expected a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    if "workers" in cfg and cfg["workers"] is None:
        env = os.environ.get(WORKERS_ENV, "1")
        try:
            cfg["workers"] = int(env)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    if "workers" in cfg and cfg["workers"] < 1:
        raise UsageError("workers must be >= 1")
    if cfg.get("out") is None:
        raise UsageError("--out is required")
    return cfg


def _need(cfg, key):
    if cfg.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _designs(cfg, counts: CountMatrix) -> DesignMatrices:
    V, J = counts.shape
    x = (hio.read_design(cfg["cell_covariates"], J, intercept=cfg["cell_intercept"])
         if cfg.get("cell_covariates") else (np.ones((1, J)) if cfg["cell_intercept"] else np.zeros((0, J))))
    z = (hio.read_design(cfg["gene_covariates"], V, intercept=cfg["gene_intercept"])
         if cfg.get("gene_covariates") else (np.ones((1, V)) if cfg["gene_intercept"] else np.zeros((0, V))))
    return DesignMatrices(x, z, cell_intercept_included=cfg["cell_intercept"],
                          gene_intercept_included=cfg["gene_intercept"])


def _ids(counts: CountMatrix):
    genes = counts.gene_ids or tuple(f"gene{v + 1}" for v in range(counts.n_genes))
    cells = counts.cell_ids or tuple(f"cell{j + 1}" for j in range(counts.n_cells))
    return genes, cells


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_state(out: Path, state, counts: CountMatrix):
    genes, cells = _ids(counts)
    K = state.K
    factors = [f"factor{k + 1}" for k in range(K)]
    hio.write_matrix(out / "theta.csv", state.theta, factors, cells, "factor")
    hio.write_matrix(out / "phi.csv", state.phi, factors, genes, "factor")
    hio.write_matrix(out / "beta.csv", state.beta, [f"x{p}" for p in range(state.beta.shape[0])], genes, "covariate")
    hio.write_matrix(out / "delta.csv", state.delta, [f"z{q}" for q in range(state.delta.shape[0])], cells,
                     "covariate")
    hio.write_vector(out / "r.csv", state.r, cells, ("cell", "r"))
    hio.write_matrix(out / "embedding.csv", state.theta.T, cells, factors, "cell")


def _hyper(cfg, K) -> Hyperparams:
    return Hyperparams(K=K, e0=cfg.get("e0", 0.01), f0=cfg.get("f0", 0.01), n_iterations=cfg["iterations"],
                       burn_in=cfg["burn_in"], seed=cfg["seed"], thin=cfg["thin"], pg_terms=cfg["pg_terms"],
                       block_size=cfg["block_size"])


def _echo(cfg):
    """Configuration echo; the worker count is left out because results do not depend on it."""
    return {k: v for k, v in cfg.items() if k not in ("workers", "config", "out")}


def cmd_fit(cfg) -> int:
    counts = hio.read_counts(_need(cfg, "counts"), cfg["format"])
    designs = _designs(cfg, counts)
    hyper = _hyper(cfg, cfg["K"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.hgnb"
    kw = dict(workers=cfg["workers"], store_samples=cfg["save_samples"],
              checkpoint_every=cfg["checkpoint_every"] or None)
    if cfg["resume"]:
        res = resume_chain(ckpt, counts, designs, hyper, **kw)
    else:
        res = run_chain(counts, designs, hyper, checkpoint_path=ckpt, **kw)
    _write_state(out, res.point_estimate, counts)
    save_state(out / "point_estimate.hgnb", res.point_estimate)
    write_table(out / "trace.csv", ["iteration", "log_likelihood"], enumerate(res.log_likelihoods))
    if cfg["save_samples"]:
        stacked = {name: np.stack([getattr(s, name) for s in res.samples])
                   for name in ("r", "beta", "delta", "phi", "theta", "alpha", "eta", "gamma")} if res.samples else {}
        stacked["h"] = np.array([s.h for s in res.samples])
        stacked["iteration"] = np.array(res.sample_iterations)
        (out / "samples.npz").write_bytes(npz_bytes(stacked))
    echo = _echo(cfg)
    echo["resume"] = False
    echo["partition"] = res.meta["partition"]
    echo["point_iteration"] = res.point_iteration
    _write_json(out / "config.json", echo)
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ext = cfg["format"]
    info = {}
    if cfg["model"] == "zinb":
        if cfg["preset"] not in PRESETS:
            raise UsageError(f"unknown preset {cfg['preset']!r}")
        changes = {"seed": cfg["seed"]}
        if cfg["genes"]:
            changes["n_genes"] = cfg["genes"]
        if cfg["cells"]:
            changes["n_cells"] = cfg["cells"]
        sim = simulate_zinb(preset(cfg["preset"], **changes))
        counts, labels = sim.counts, sim.labels
        info = {"dropout_intercept": sim.info["dropout_intercept"],
                "structural_zero_fraction": sim.info["structural_zero_fraction"]}
        hio.write_matrix(out / "scores.csv", sim.info["scores"], [f"factor{k + 1}" for k in range(
            sim.info["scores"].shape[0])], _ids(counts)[1], "factor")
    else:
        V, J = cfg["genes"] or 100, cfg["cells"] or 50
        designs = DesignMatrices.intercepts(V, J)
        counts, truth = simulate_hgnb(designs, cfg["K"], np.random.default_rng(cfg["seed"]), e0=cfg["e0"],
                                      f0=cfg["f0"])
        labels = None
        save_state(out / "truth.hgnb", truth)
        _write_state(out, truth, counts)
    kept = None
    if cfg["filter"]:
        counts, kept = filter_genes(counts)
    hio.write_counts(out / f"counts.{ext}", counts, ext)
    if labels is not None:
        write_table(out / "labels.csv", ["cell", "label"], zip(_ids(counts)[1], labels.tolist()))
    if kept is not None:
        write_table(out / "kept_genes.csv", ["gene_index"], ([int(v)] for v in kept))
    info.update(zero_fraction=counts.zero_fraction(), n_genes=counts.n_genes, n_cells=counts.n_cells)
    echo = _echo(cfg)
    echo["result"] = info
    _write_json(out / "config.json", echo)
    return EXIT_OK


def _read_labels(path, cells):
    mat, names, _ = hio.read_matrix(path)
    if len(names) != len(cells):
        raise DataError(f"{path}: {len(names)} labels for {len(cells)} cells")
    lab = mat[:, 0]
    if not np.all(lab == np.round(lab)) or np.any(lab < 0):
        raise DataError(f"{path}: labels must be non-negative integers")
    return lab.astype(np.int64)


def cmd_evaluate(cfg) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    fit_dir = Path(cfg["fit"]) if cfg.get("fit") else None
    emb_path = cfg.get("embedding") or (fit_dir / "embedding.csv" if fit_dir else None)
    if emb_path is None:
        raise UsageError("--fit or --embedding is required")
    emb, cells, dims = hio.read_matrix(emb_path)
    points = emb.T
    summary: dict = {"n_cells": len(cells), "dims": len(dims)}
    labels = _read_labels(cfg["labels"], cells) if cfg.get("labels") else None
    rng = np.random.default_rng(cfg["seed"])
    found = kmeans(points, cfg["clusters"], rng) if cfg.get("clusters") else None
    if found is not None:
        write_table(out / "clusters.csv", ["cell", "cluster"], zip(cells, found.tolist()))
    ref = labels if labels is not None else found
    if ref is not None:
        s, avg = silhouette_width(points, ref)
        summary["silhouette"] = avg
        write_table(out / "silhouette.csv", ["cell", "silhouette"], zip(cells, s))
        centroids = cluster_centroids(points, ref)
        edges = mst_lineage(centroids) if centroids.shape[1] >= 2 else []
        write_table(out / "mst.csv", ["from", "to"], edges)
        scatter_svg(out / "embedding.svg", points[0], points[1] if points.shape[0] > 1 else np.zeros(len(cells)),
                    ref, title="embedding")
    if labels is not None and found is not None:
        summary["ari"] = adjusted_rand_index(labels, found)
    if cfg.get("counts"):
        counts = hio.read_counts(cfg["counts"], cfg["format"])
        if cfg["pca"] and ref is not None:
            summary["pca_silhouette"] = silhouette_width(pca_baseline(counts, points.shape[0]).points, ref)[1]
        if fit_dir is not None:
            state = load_state(fit_dir / "point_estimate.hgnb")
            md = md_plot_data(counts, state, _designs(cfg, counts), n_bins=cfg["md_bins"], bin_by=cfg["md_bin_by"])
            write_md_csv(out / "md.csv", md)
            z = md.bin_z()
            summary["md_max_abs_z"] = float(np.max(np.abs(z)))
            scatter_svg(out / "md.svg", md.x, md.y, title="MD plot", line=(md.bin_x, md.bin_mean))
    _write_json(out / "evaluation.json", summary)
    return EXIT_OK


def cmd_transform(cfg) -> int:
    fit_dir = Path(_need(cfg, "fit"))
    fitted = load_state(fit_dir / "point_estimate.hgnb")
    counts = hio.read_counts(_need(cfg, "counts"), cfg["format"])
    designs = _designs(cfg, counts)
    hyper = _hyper(cfg, fitted.K)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    res = transform(counts, designs, fitted, hyper, workers=cfg["workers"])
    _write_state(out, res.point_estimate, counts)
    write_table(out / "trace.csv", ["iteration", "log_likelihood"], enumerate(res.log_likelihoods))
    _write_json(out / "config.json", _echo(cfg))
    return EXIT_OK


_COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "evaluate": cmd_evaluate, "transform": cmd_transform}


def _fail(kind: str, message: str, code: int) -> int:
    text = " ".join(str(message).split())
    print(f"hgnb: error[{kind}]: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (fit, simulate, evaluate, transform)")
        cfg = resolve_config(args.command, args)
        return _COMMANDS[args.command](cfg)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except ChainError as exc:
        numerical = isinstance(exc.cause, (NumericalError, ArithmeticError, np.linalg.LinAlgError))
        return _fail("numerical" if numerical else "data", exc, EXIT_NUMERICAL if numerical else EXIT_DATA)
    except NumericalError as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except (DataError, CheckpointError, HGNBError, ValueError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except OSError as exc:
        return _fail("data", f"{exc.filename}: {exc.strerror}", EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
