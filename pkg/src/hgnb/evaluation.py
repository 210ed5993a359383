"""Scoring and inspection of fitted embeddings.

Embeddings follow the model's orientation: a ``D x J`` array with one column
per cell.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh
from scipy.spatial.distance import cdist
from scipy.special import comb

from .distributions import as_generator
from .errors import DataError
from .model import CountMatrix, DesignMatrices, ModelState, expected_counts


@dataclass
class Embedding:
    """Low-dimensional cell coordinates (``points`` is D x J)."""

    points: np.ndarray
    labels: np.ndarray | None = None
    explained_variance_ratio: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(self.points)):
            raise DataError("embedding has non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[1],):
                raise DataError("need one label per embedded cell")
            if self.labels.size and self.labels.min() < 0:
                raise DataError("labels must be non-negative")

    @property
    def n_cells(self) -> int:
        return self.points.shape[1]


def _columns(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(pts)):
        raise DataError("points must be finite")
    return pts


def _check_labels(labels, n, n_clusters=None):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise DataError("labels must be non-negative")
    n_clusters = int(labels.max()) + 1 if n_clusters is None else int(n_clusters)
    if labels.size and labels.max() >= n_clusters:
        raise DataError(f"label {labels.max()} outside [0, {n_clusters})")
    return labels, n_clusters


# ---------------------------------------------------------------------------
# silhouette and ARI
# ---------------------------------------------------------------------------


def silhouette_width(points, labels, n_clusters: int | None = None):
    """Per-cell silhouette widths ``(b - a) / max(a, b)`` and their average.

    ``points`` is D x J.  ``a`` is the mean Euclidean distance to the other
    members of the cell's own cluster, ``b`` the smallest mean distance to
    another cluster.  Members of singleton clusters, and cells with
    ``a = b = 0``, get ``s = 0``.  Every label in ``[0, n_clusters)`` must be
    used and there must be at least two clusters.
    """
    pts = _columns(points)
    J = pts.shape[1]
    labels, C = _check_labels(labels, J, n_clusters)
    sizes = np.bincount(labels, minlength=C)
    if C < 2:
        raise DataError("silhouette needs at least two clusters")
    if np.any(sizes == 0):
        raise DataError(f"cluster {int(np.flatnonzero(sizes == 0)[0])} is empty")
    dist = cdist(pts.T, pts.T)
    # sums of distances from every cell to every cluster
    onehot = np.zeros((J, C))
    onehot[np.arange(J), labels] = 1.0
    sums = dist @ onehot
    own = sizes[labels]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[np.arange(J), labels] / (own - 1)
        means = sums / sizes[None, :]
    means[np.arange(J), labels] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.zeros(J)
    ok = (own > 1) & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return s, float(s.mean())


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"label vectors differ in length ({a.size} vs {b.size})")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1 if n else 0, ib.max() + 1 if n else 0))
    np.add.at(table, (ia, ib), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all singletons or one block): identical by construction
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray  # D x k
    sse: float
    sse_trace: list  # SSE after every Lloyd iteration of the winning restart


def _kmeans_pp(X, k, g):
    n = X.shape[0]
    centers = [X[g.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = g.integers(n) if total <= 0 else int(np.searchsorted(np.cumsum(d2), g.random() * total, side="right"))
        idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(X, centers, max_iter):
    trace = []
    labels = None
    for _ in range(max_iter):
        d2 = cdist(X, centers, "sqeuclidean")
        new = d2.argmin(axis=1)
        sse = float(d2[np.arange(X.shape[0]), new].sum())
        trace.append(sse)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = X[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    d2 = cdist(X, centers, "sqeuclidean")
    labels = d2.argmin(axis=1)
    return labels, centers, float(d2[np.arange(X.shape[0]), labels].sum()), trace


def kmeans(points, k: int, rng=None, *, restarts: int = 10, max_iter: int = 300,
           full_output: bool = False):
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by SSE.

    ``points`` is D x J.  Returns the label vector, or a :class:`KMeansResult`
    when ``full_output`` is set.
    """
    X = _columns(points).T
    J = X.shape[0]
    k = int(k)
    if k < 1:
        raise DataError("k must be at least 1")
    if k > J:
        raise DataError(f"k = {k} exceeds the number of points ({J})")
    g = as_generator(rng if rng is not None else np.random.default_rng(0))
    best = None
    for _ in range(max(1, restarts)):
        labels, centers, sse, trace = _lloyd(X, _kmeans_pp(X, k, g), max_iter)
        if best is None or sse < best.sse:
            best = KMeansResult(labels, centers.T.copy(), sse, trace)
    return best if full_output else best.labels


# ---------------------------------------------------------------------------
# MD plot
# ---------------------------------------------------------------------------


@dataclass
class MDPlotData:
    """Per-entry mean/difference pairs and their binned running mean."""

    x: np.ndarray  # (n + e) / 2, flattened gene-major
    y: np.ndarray  # n - e
    bin_x: np.ndarray  # mean binning variable per bin
    bin_mean: np.ndarray  # mean of y per bin
    bin_se: np.ndarray  # standard error of that mean
    bin_size: np.ndarray
    binned_on: str

    def bin_z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.bin_se > 0, self.bin_mean / self.bin_se,
                            np.where(self.bin_mean == 0, 0.0, np.inf))


def equal_count_bins(key, values, n_bins: int = 20):
    """Sort by ``key`` and cut into ``n_bins`` groups of (nearly) equal size.

    Returns per-bin mean key, mean value, standard error of the mean value and
    bin size.
    """
    key = np.asarray(key, dtype=float).ravel()
    values = np.asarray(values, dtype=float).ravel()
    order = np.argsort(key, kind="stable")
    groups = [g for g in np.array_split(order, min(n_bins, key.size)) if g.size]
    bx = np.array([key[g].mean() for g in groups])
    bm = np.array([values[g].mean() for g in groups])
    se = np.array([values[g].std(ddof=1) / np.sqrt(g.size) if g.size > 1 else np.inf for g in groups])
    return bx, bm, se, np.array([g.size for g in groups])


def md_plot_data(counts, state: ModelState, designs: DesignMatrices, *, n_bins: int = 20,
                 bin_by: str = "average") -> MDPlotData:
    """Mean-difference pairs of observed vs expected counts.

    ``x = (n + e) / 2`` and ``y = n - e`` for every entry, with ``e`` the
    model mean.  The running mean of ``y`` uses ``n_bins`` equal-count bins of
    either ``x`` (``bin_by="average"``) or ``e`` (``bin_by="expected"``).
    Binning on ``x`` mixes in the observed count, so bins at the low end are
    selected for small ``n`` and their means sit below zero even for a
    correct model; binning on ``e`` does not have this bias.
    """
    n = counts.dense.astype(float) if isinstance(counts, CountMatrix) else np.asarray(counts, dtype=float)
    e = expected_counts(state, designs)
    if e.shape != n.shape:
        raise DataError(f"counts {n.shape} do not match the fitted state {e.shape}")
    x = ((n + e) / 2).ravel()
    y = (n - e).ravel()
    if bin_by == "average":
        key = x
    elif bin_by == "expected":
        key = e.ravel()
    else:
        raise ValueError(f"bin_by must be 'average' or 'expected', not {bin_by!r}")
    bx, bm, se, size = equal_count_bins(key, y, n_bins)
    return MDPlotData(x, y, bx, bm, se, size, bin_by)


# ---------------------------------------------------------------------------
# lineage skeleton
# ---------------------------------------------------------------------------


def mst_lineage(centroids) -> list[tuple[int, int]]:
    """Minimum spanning tree over the columns of ``centroids`` (D x C).

    Kruskal's algorithm on Euclidean distances; ties are broken by the
    lexicographic order of the edge ``(i, j)`` with ``i < j``.  Edges are
    returned in the order they were added.
    """
    pts = _columns(centroids)
    C = pts.shape[1]
    if C < 2:
        raise DataError("need at least two centroids")
    dist = cdist(pts.T, pts.T)
    edges = sorted((dist[i, j], i, j) for i, j in itertools.combinations(range(C), 2))
    parent = list(range(C))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree = []
    for _, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
            tree.append((i, j))
            if len(tree) == C - 1:
                break
    return tree


def tree_weight(centroids, edges) -> float:
    pts = _columns(centroids)
    return float(sum(np.linalg.norm(pts[:, i] - pts[:, j]) for i, j in edges))


def cluster_centroids(points, labels) -> np.ndarray:
    """Mean of each cluster's columns (D x C)."""
    pts = _columns(points)
    labels, C = _check_labels(labels, pts.shape[1])
    return np.stack([pts[:, labels == c].mean(axis=1) for c in range(C)], axis=1)


# ---------------------------------------------------------------------------
# PCA baseline
# ---------------------------------------------------------------------------


def pca_baseline(counts, dims: int = 2, *, normalize: bool = True, scale: float | None = None) -> Embedding:
    """Principal-component scores of ``log(1 + counts)``.

    With ``normalize`` each cell is first rescaled to the median (or
    ``scale``) total count.  Genes are centred across cells and the top
    ``dims`` eigenvectors of the cell Gram matrix give the scores.
    """
    n = counts.dense.astype(float) if isinstance(counts, CountMatrix) else np.asarray(counts, dtype=float)
    V, J = n.shape
    dims = int(dims)
    if dims < 1 or dims > min(V, J):
        raise DataError(f"dims must be in [1, {min(V, J)}], got {dims}")
    if normalize:
        totals = n.sum(axis=0)
        target = float(np.median(totals)) if scale is None else float(scale)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = np.where(totals > 0, n * (target / totals), 0.0)
    X = np.log1p(n)
    X = X - X.mean(axis=1, keepdims=True)
    gram = X.T @ X
    if dims < J - 1:
        vals, vecs = eigsh(gram, k=dims, which="LA", v0=np.ones(J))
    else:
        vals, vecs = eigh(gram)
    order = np.argsort(vals)[::-1][:dims]
    vals, vecs = np.maximum(vals[order], 0.0), vecs[:, order]
    # sign convention: largest-magnitude entry of each component positive
    flip = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(dims)])
    vecs = vecs * np.where(flip == 0, 1.0, flip)
    scores = (vecs * np.sqrt(vals)).T
    total = float(np.trace(gram))
    ratio = vals / total if total > 0 else np.zeros(dims)
    return Embedding(scores, explained_variance_ratio=ratio)


# ---------------------------------------------------------------------------
# emitters
# ---------------------------------------------------------------------------


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_md_csv(path, md: MDPlotData) -> None:
    write_table(path, ["bin", "x", "mean_difference", "standard_error", "size"],
                [(i, md.bin_x[i], md.bin_mean[i], md.bin_se[i], int(md.bin_size[i]))
                 for i in range(md.bin_mean.size)])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def scatter_svg(path, x, y, labels=None, *, title: str = "", width: int = 480, height: int = 480,
                line=None) -> None:
    """Minimal SVG scatter plot; ``line`` is an optional (xs, ys) polyline."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pad = 40
    xs = np.concatenate([x, np.asarray(line[0])]) if line is not None else x
    ys = np.concatenate([y, np.asarray(line[1])]) if line is not None else y
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    sx = (width - 2 * pad) / (x1 - x0 or 1.0)
    sy = (height - 2 * pad) / (y1 - y0 or 1.0)

    def px(a):
        return pad + (a - x0) * sx

    def py(b):
        return height - pad - (b - y0) * sy

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    lab = np.zeros(x.size, dtype=int) if labels is None else np.asarray(labels, dtype=int)
    for a, b, c in zip(x, y, lab):
        parts.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{_PALETTE[c % len(_PALETTE)]}"/>')
    if line is not None:
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(*line))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="2"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
