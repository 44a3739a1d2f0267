"""One-class CRF over detected circles, solved exactly by min-cut.

Labels are 0 = non-berry and 1 = berry.  Posterior arrays have shape
(n, 4, 2) with kinds ordered rgb, hog, gist, dist and the last axis indexed
by label.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError
from scipy.spatial.distance import pdist
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_positive
from .exceptions import EnergyError, NonSubmodularError, ReferenceUnavailableError
from .features import FEATURE_KINDS, FeatureBundle, ReferenceCorrelation
from .maxflow import minimum_cut

NONBERRY, BERRY = 0, 1
UNARY_KINDS = FEATURE_KINDS + ("dist",)
PROB_CLAMP = 1e-9
BRUTE_FORCE_LIMIT = 20
MIN_SPREAD = 0.01


def percentile_threshold(values, p):
    """``p``-quantile of ``values`` with linear interpolation between order statistics."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ReferenceUnavailableError("no pairwise reference correlations (need >= 2 references)")
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(np.quantile(values, p))


def reference_thresholds(references: FeatureBundle, p):
    """Per-kind ``p``-quantile of the correlations between distinct references."""
    if len(references) < 2:
        raise ReferenceUnavailableError(f"need >= 2 references, got {len(references)}")
    return {
        k: percentile_threshold(ReferenceCorrelation().fit(references[k]).pairwise_correlations(), p)
        for k in FEATURE_KINDS
    }


def _clamped_pair(p_non):
    p_non = np.clip(p_non, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return 1.0 - p_non, p_non


def unary_posterior(l, t, s=10.0):
    """Sigmoid posteriors (P_berry, P_nonberry) of a median-correlation feature."""
    check_positive(s, "s")
    l = np.asarray(l, dtype=np.float64)
    return _clamped_pair(expit(-s * (l - t)))


def distance_posterior(l_dist, t_dist, s=10.0):
    """(P_berry, P_nonberry) from the mean neighbor distance.

    P_nonberry rises with the distance and is floored at 0.5, so crowded
    candidates stay neutral while isolated ones lean to non-berry.
    """
    check_positive(t_dist, "t_dist")
    check_positive(s, "s")
    l_dist = np.asarray(l_dist, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        p_non = np.where(np.isinf(l_dist), 1.0, expit(s * (l_dist - t_dist) / t_dist))
    return _clamped_pair(np.maximum(p_non, 0.5))


@dataclass
class NeighborGraph:
    n_nodes: int
    edges: np.ndarray  # (m, 2), i < j, lexicographically sorted
    neighbors: list = field(default_factory=list)

    @classmethod
    def from_edges(cls, n, edges):
        edges = np.asarray(sorted({(min(a, b), max(a, b)) for a, b in edges if a != b}), dtype=np.intp)
        edges = edges.reshape(-1, 2)
        neigh = [[] for _ in range(n)]
        for a, b in edges:
            neigh[a].append(int(b))
            neigh[b].append(int(a))
        return cls(n, edges, [sorted(x) for x in neigh])


def _chain_edges(points):
    """Nearest-neighbor chain along the principal axis (degenerate layouts)."""
    if len(points) < 2:
        return []
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    order = np.lexsort((points[:, 1], points[:, 0], centered @ vt[0]))
    return [(int(order[k]), int(order[k + 1])) for k in range(len(order) - 1)]


def build_neighbor_graph(centers, prune_factor=3.0):
    """Voronoi-adjacency graph of the centers via their Delaunay triangulation.

    Duplicate centers are merged before triangulation (with a warning) and
    each copy receives the merged point's edges.  Edges longer than
    ``prune_factor`` times the median edge length are dropped.
    """
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        raise ValueError("need at least one center")
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    if len(uniq) < n:
        warnings.warn(f"{n - len(uniq)} duplicate candidate center(s) merged", stacklevel=2)
    edges = []
    if len(uniq) >= 3:
        try:
            tri = Delaunay(uniq)
            for simplex in tri.simplices:
                a, b, c = (int(x) for x in simplex)
                edges.extend([(a, b), (b, c), (a, c)])
        except QhullError:
            edges = _chain_edges(uniq)
    else:
        edges = _chain_edges(uniq)
    groups = [[] for _ in range(len(uniq))]
    for i, u in enumerate(inverse):
        groups[u].append(i)
    # every copy of a duplicated center inherits the merged point's edges
    out = [
        (i, j)
        for a, b in sorted({(min(a, b), max(a, b)) for a, b in edges})
        for i in groups[a]
        for j in groups[b]
    ]
    if out and prune_factor is not None:
        lengths = np.array([np.hypot(*(pts[a] - pts[b])) for a, b in out])
        med = np.median(lengths)
        out = [e for e, L in zip(out, lengths) if L <= prune_factor * med]
    return NeighborGraph.from_edges(n, out)


def mean_neighbor_distance(graph: NeighborGraph, centers):
    """Mean Euclidean distance to graph neighbors; ``inf`` for isolated nodes."""
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    out = np.full(graph.n_nodes, np.inf)
    for i, nb in enumerate(graph.neighbors):
        if nb:
            out[i] = float(np.mean(np.hypot(*(pts[nb] - pts[i]).T)))
    return out


def scale_to_unit_range(x):
    """Affine map of the finite values onto [-1, 1]; ``inf`` maps to +1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.ones_like(x)
    fin = np.isfinite(x)
    if fin.any():
        lo, hi = x[fin].min(), x[fin].max()
        out[fin] = 0.0 if hi - lo <= 0 else 2.0 * (x[fin] - lo) / (hi - lo) - 1.0
    return out


def concatenated_features(features: FeatureBundle, x_dist, q):
    """Rows of [rgb/|rgb|, hog, gist, (q/10) * x_dist] used for pairwise costs."""
    rgb = np.asarray(features.rgb, dtype=np.float64)
    norms = np.linalg.norm(rgb, axis=1, keepdims=True)
    rgb = np.divide(rgb, norms, out=np.zeros_like(rgb), where=norms > 0)
    dist = (q / 10.0) * np.asarray(x_dist, dtype=np.float64).reshape(-1, 1)
    return np.hstack([rgb, features.hog, features.gist, dist])


def pairwise_phi(xa, xb):
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"dimension mismatch: {xa.shape} vs {xb.shape}")
    return float(np.linalg.norm(xa - xb))


def edge_phis(x_con, edges):
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    if len(edges) == 0:
        return np.zeros(0)
    return np.linalg.norm(x_con[edges[:, 0]] - x_con[edges[:, 1]], axis=1)


@dataclass
class CrfEnergy:
    """Unary posteriors, weights and pairwise terms of the berry CRF."""

    posteriors: np.ndarray  # (n, 4, 2)
    weights: np.ndarray  # (4,) for rgb, hog, gist, dist
    w_spatial: float
    edges: np.ndarray  # (m, 2)
    phi: np.ndarray  # (m,)
    pairwise: str = "potts"
    sigma_phi: float = 1.0

    @property
    def n_nodes(self):
        return self.posteriors.shape[0]

    def unary_costs(self):
        """(n, 2) array of -sum_k w_k log P_k(label)."""
        return -np.einsum("k,nky->ny", self.weights, np.log(self.posteriors))

    def pairwise_tables(self):
        """(m, 2, 2) array V[e, y_a, y_b]."""
        m = len(self.edges)
        tables = np.zeros((m, 2, 2))
        if self.pairwise == "potts":
            w = self.w_spatial * np.exp(-self.phi / self.sigma_phi)
            tables[:, 0, 1] = w
            tables[:, 1, 0] = w
        else:
            w = self.w_spatial * self.phi
            tables[:, 0, 0] = w
            tables[:, 1, 1] = w
        return tables

    def is_submodular(self, tol=1e-12):
        t = self.pairwise_tables()
        return bool(np.all(t[:, 0, 0] + t[:, 1, 1] <= t[:, 0, 1] + t[:, 1, 0] + tol))

    def energy(self, labels):
        y = np.asarray(labels, dtype=np.intp)
        u = self.unary_costs()
        total = float(u[np.arange(len(y)), y].sum())
        if len(self.edges):
            t = self.pairwise_tables()
            total += float(t[np.arange(len(t)), y[self.edges[:, 0]], y[self.edges[:, 1]]].sum())
        return total

    def dump(self):
        """Deterministic plain-text listing of every potential."""
        buf = io.StringIO()
        g = lambda x: format(float(x), ".17g")  # noqa: E731
        buf.write("# berry crf energy v1\n")
        buf.write(f"nodes {self.n_nodes}\n")
        buf.write("weights " + " ".join(f"{k}={g(w)}" for k, w in zip(UNARY_KINDS, self.weights)))
        buf.write(f" spatial={g(self.w_spatial)}\n")
        buf.write(f"pairwise {self.pairwise} sigma_phi={g(self.sigma_phi)}\n")
        u = self.unary_costs()
        for i in range(self.n_nodes):
            probs = " ".join(g(self.posteriors[i, k, BERRY]) for k in range(len(UNARY_KINDS)))
            buf.write(f"node {i} p_berry {probs} cost {g(u[i, 0])} {g(u[i, 1])}\n")
        t = self.pairwise_tables()
        for e, (a, b) in enumerate(self.edges):
            cells = " ".join(g(v) for v in t[e].ravel())
            buf.write(f"edge {a} {b} phi {g(self.phi[e])} table {cells}\n")
        return buf.getvalue()


def assemble_energy(posteriors, graph: NeighborGraph, phi, weights, w_spatial=None, pairwise="potts"):
    """Bundle the CRF terms; ``w_spatial`` defaults to half the unary weight sum."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64).ravel()
    edges = np.asarray(graph.edges, dtype=np.intp).reshape(-1, 2)
    if posteriors.shape != (graph.n_nodes, len(UNARY_KINDS), 2):
        raise ValueError(f"posteriors shape {posteriors.shape} does not match {graph.n_nodes} nodes")
    if len(phi) != len(edges):
        raise ValueError("one phi per edge required")
    if pairwise not in ("potts", "literal"):
        raise ValueError(f"unknown pairwise mode {pairwise!r}")
    if w_spatial is None:
        w_spatial = 0.5 * float(weights.sum())
    if not (np.all(np.isfinite(posteriors)) and np.all(posteriors > 0)):
        raise EnergyError("posteriors must be finite and positive")
    if not np.all(np.isfinite(phi)) or np.any(phi < 0):
        raise EnergyError("pairwise distances must be finite and non-negative")
    sigma = float(phi.mean()) if len(phi) else 1.0
    if sigma <= 0:
        sigma = 1.0
    return CrfEnergy(posteriors, weights, float(w_spatial), edges, phi, pairwise, sigma)


def solve_graphcut(energy: CrfEnergy):
    """Exact minimizer of a submodular energy via a single s-t min-cut.

    Source side = berry.  Among minimum cuts the one with the fewest berry
    nodes is returned.
    """
    tables = energy.pairwise_tables()
    a, b = tables[:, 0, 0], tables[:, 0, 1]
    c, d = tables[:, 1, 0], tables[:, 1, 1]
    lam = b + c - a - d
    if np.any(lam < -1e-12):
        bad = int(np.argmin(lam))
        raise NonSubmodularError(
            f"edge {tuple(energy.edges[bad])} violates V00+V11 <= V01+V10 by {-lam[bad]:.3g}"
        )
    u = energy.unary_costs().copy()
    # V(yi, yj) = A + (C-A) yi + (D-C) yj + lam (1-yi) yj
    for e, (i, j) in enumerate(energy.edges):
        u[i, BERRY] += c[e] - a[e]
        u[j, BERRY] += d[e] - c[e]
    u -= u.min(axis=1, keepdims=True)
    # (1-yi) yj: j on the source side, i on the sink side -> edge j -> i
    cut_edges = [(int(j), int(i)) for i, j in energy.edges]
    _, source = minimum_cut(u[:, NONBERRY], u[:, BERRY], cut_edges, np.maximum(lam, 0.0))
    return source.astype(np.intp)


def brute_force_solve(energy: CrfEnergy):
    """Exhaustive minimizer; ties go to the lexicographically smallest labeling."""
    n = energy.n_nodes
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} nodes, got {n}")
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    codes = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    labels = ((codes[:, None] >> shifts) & 1).astype(np.intp)
    u = energy.unary_costs()
    total = u[:, NONBERRY].sum() + labels @ (u[:, BERRY] - u[:, NONBERRY])
    if len(energy.edges):
        t = energy.pairwise_tables()
        for e, (i, j) in enumerate(energy.edges):
            total = total + t[e][labels[:, i], labels[:, j]]
    best = total.min()
    tol = 1e-12 * max(1.0, abs(best))
    return labels[int(np.flatnonzero(total <= best + tol)[0])]


@dataclass
class ClassificationResult:
    labels: np.ndarray
    p_used: float
    fallback_engaged: bool
    thresholds: dict
    transformed: np.ndarray
    energy: CrfEnergy
    t_dist: float


class OneClassCRF(ClassifierMixin, BaseEstimator):
    """Berry / non-berry labeling trained on reference circles only.

    ``fit`` takes the reference descriptors (and their diameters in px);
    ``predict`` takes candidate descriptors and centers and returns 1 for
    berry, 0 for non-berry.

    ``p`` sets the reference-correlation threshold: larger ``p`` lowers the
    threshold and admits more berries (``p = 0.5`` is the median).  When the
    first solve labels nothing as berry, the solve is repeated once with
    ``p_fallback``.

    ``sharpness`` is the sigmoid slope of the feature unaries.  With
    ``sharpness_unit="spread"`` it is divided by the robust spread (scaled
    MAD, floored at 0.01) of the pairwise reference correlations of that
    kind, so the slope follows how tightly the references agree; with
    ``"absolute"`` it is used as is.

    Attributes
    ----------
    result_ : ClassificationResult
        Details of the last ``predict`` call.
    """

    def __init__(
        self,
        w_rgb=0.5,
        w_hog=0.5,
        w_gist=1.0,
        w_dist=2.0,
        w_spatial=None,
        p=0.5,
        p_fallback=0.7,
        sharpness=2.0,
        sharpness_unit="spread",
        dist_sharpness=10.0,
        pairwise="potts",
        prune_factor=3.0,
    ):
        self.w_rgb = w_rgb
        self.w_hog = w_hog
        self.w_gist = w_gist
        self.w_dist = w_dist
        self.w_spatial = w_spatial
        self.p = p
        self.p_fallback = p_fallback
        self.sharpness = sharpness
        self.sharpness_unit = sharpness_unit
        self.dist_sharpness = dist_sharpness
        self.pairwise = pairwise
        self.prune_factor = prune_factor

    @property
    def unary_weights(self):
        return np.array([self.w_rgb, self.w_hog, self.w_gist, self.w_dist], dtype=np.float64)

    def resolved_w_spatial(self):
        if self.w_spatial is None:
            return 0.5 * float(self.unary_weights.sum())
        return float(self.w_spatial)

    def fit(self, X: FeatureBundle, y=None, diameters=None):
        """Learn correlation thresholds from reference descriptors ``X``.

        ``y`` is ignored (all references are berries by assumption).
        ``diameters`` are reference diameters in px; without them the
        distance threshold is taken from the candidates at predict time.
        """
        if len(X) < 2:
            raise ReferenceUnavailableError(f"need >= 2 references, got {len(X)}")
        self.references_ = X
        self.projectors_ = {k: ReferenceCorrelation().fit(X[k]) for k in FEATURE_KINDS}
        self.pairwise_reference_correlations_ = {
            k: self.projectors_[k].pairwise_correlations() for k in FEATURE_KINDS
        }
        self.t_dist_ = None
        if diameters is not None and len(diameters):
            self.t_dist_ = 3.0 * float(np.median(diameters))
        self.classes_ = np.array([NONBERRY, BERRY])
        return self

    def thresholds_for(self, p):
        # larger p admits more berries, so the quantile level is 1 - p
        return {
            k: percentile_threshold(self.pairwise_reference_correlations_[k], 1.0 - p)
            for k in FEATURE_KINDS
        }

    def transform(self, X: FeatureBundle):
        """Median reference correlation per candidate, columns rgb/hog/gist."""
        return np.column_stack([self.projectors_[k].transform(X[k]) for k in FEATURE_KINDS])

    def sharpness_for(self, kind):
        if self.sharpness_unit == "absolute":
            return float(self.sharpness)
        if self.sharpness_unit != "spread":
            raise ValueError(f"unknown sharpness_unit {self.sharpness_unit!r}")
        vals = self.pairwise_reference_correlations_[kind]
        spread = 1.4826 * float(np.median(np.abs(vals - np.median(vals))))
        return float(self.sharpness) / max(spread, MIN_SPREAD)

    def _solve(self, l, p, l_dist, t_dist, graph, phi):
        th = self.thresholds_for(p)
        n = l.shape[0]
        post = np.empty((n, len(UNARY_KINDS), 2))
        for col, k in enumerate(FEATURE_KINDS):
            pb, pn = unary_posterior(l[:, col], th[k], self.sharpness_for(k))
            post[:, col, BERRY], post[:, col, NONBERRY] = pb, pn
        pb, pn = distance_posterior(l_dist, t_dist, self.dist_sharpness)
        post[:, 3, BERRY], post[:, 3, NONBERRY] = pb, pn
        energy = assemble_energy(
            post, graph, phi, self.unary_weights, self.resolved_w_spatial(), self.pairwise
        )
        if self.pairwise == "potts":
            labels = solve_graphcut(energy)
        else:
            labels = brute_force_solve(energy)
        return labels, th, energy

    def predict(self, X: FeatureBundle, centers, diameters=None):
        if not hasattr(self, "projectors_"):
            raise ReferenceUnavailableError("OneClassCRF is not fitted")
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        n = len(centers)
        if len(X) != n:
            raise ValueError(f"{len(X)} descriptor rows for {n} centers")
        if n == 0:
            self.result_ = None
            return np.zeros(0, dtype=np.intp)
        t_dist = self.t_dist_
        if t_dist is None:
            if diameters is None or not len(diameters):
                raise ValueError("diameters needed when the references carry none")
            t_dist = 3.0 * float(np.median(diameters))
        l = self.transform(X)
        graph = build_neighbor_graph(centers, self.prune_factor)
        l_dist = mean_neighbor_distance(graph, centers)
        q = float(np.median(pdist(centers))) if n > 1 else 0.0
        x_con = concatenated_features(X, scale_to_unit_range(l_dist), q)
        phi = edge_phis(x_con, graph.edges)
        labels, th, energy = self._solve(l, self.p, l_dist, t_dist, graph, phi)
        p_used, fallback = self.p, False
        if not labels.any() and self.p_fallback is not None and self.p_fallback != self.p:
            labels, th, energy = self._solve(l, self.p_fallback, l_dist, t_dist, graph, phi)
            p_used, fallback = self.p_fallback, True
        self.result_ = ClassificationResult(labels, p_used, fallback, th, l, energy, t_dist)
        return labels
