"""Constructed CRF inputs with exactly known median correlations.

Reference ``i`` of a kind is ``rho_i * base + sqrt(1 - rho_i^2) * z_i`` with
mutually orthogonal, centered unit vectors, so corr(r_i, r_j) = rho_i rho_j.
A candidate ``kappa * base + sqrt(1 - kappa^2) * w`` with ``w`` orthogonal to
base and every z_i has corr(c, r_i) = kappa rho_i, hence l = kappa median(rho).
"""
import numpy as np

from berrycrf.crf import assemble_energy, build_neighbor_graph
from berrycrf.features import FEATURE_KINDS, FeatureBundle

DIMS = {"rgb": 3072, "hog": 32, "gist": 512}


class FeatureFactory:
    def __init__(self, rho, rng, dims=DIMS):
        self.rho = np.asarray(rho, dtype=float)
        self.rng = rng
        self.dims = dims
        self.basis = {}
        for k in FEATURE_KINDS:
            d = dims[k]
            cols = min(d - 1, len(self.rho) + 1 + 64)
            a = rng.standard_normal((d, cols))
            a -= a.mean(axis=0)  # centered columns
            q, _ = np.linalg.qr(a)
            self.basis[k] = q.T  # rows: orthonormal, centered
        self.n_fixed = len(self.rho) + 1

    @property
    def median_rho(self):
        return float(np.median(self.rho))

    def pairwise(self):
        r = self.rho
        iu = np.triu_indices(len(r), 1)
        return np.outer(r, r)[iu]

    def references(self):
        rows = {}
        for k in FEATURE_KINDS:
            b = self.basis[k]
            base, z = b[0], b[1 : self.n_fixed]
            rows[k] = self.rho[:, None] * base + np.sqrt(1 - self.rho[:, None] ** 2) * z
        return FeatureBundle(rows["rgb"], rows["hog"], rows["gist"])

    def candidates(self, l_targets):
        """``l_targets``: (n, 3) wanted median correlations per kind."""
        l_targets = np.atleast_2d(np.asarray(l_targets, dtype=float))
        rows = {}
        for col, k in enumerate(FEATURE_KINDS):
            b = self.basis[k]
            free = b[self.n_fixed :]
            kappa = l_targets[:, col] / self.median_rho
            if np.any(np.abs(kappa) > 1):
                raise ValueError("target correlation out of reach")
            w = self.rng.standard_normal((len(kappa), len(free))) @ free
            w /= np.linalg.norm(w, axis=1, keepdims=True)
            rows[k] = kappa[:, None] * b[0] + np.sqrt(1 - kappa[:, None] ** 2) * w
        return FeatureBundle(rows["rgb"], rows["hog"], rows["gist"])


def hex_cluster(n, center, spacing, rng):
    """``n`` points on a jittered hexagonal patch around ``center``."""
    pts = []
    ring = 0
    while len(pts) < n:
        for q in range(-ring, ring + 1):
            for r in range(-ring, ring + 1):
                s = -q - r
                if max(abs(q), abs(r), abs(s)) != ring:
                    continue
                x = spacing * (q + r / 2.0)
                y = spacing * (r * np.sqrt(3) / 2.0)
                pts.append((center[0] + y, center[1] + x))
        ring += 1
    pts = np.array(pts[:n]) + rng.uniform(-0.1, 0.1, (n, 2)) * spacing
    return np.rint(pts)


def random_energy(rng, n_nodes, pairwise="potts"):
    """Random CRF energy built with the library constructors."""
    centers = rng.uniform(0, 500, (n_nodes, 2))
    graph = build_neighbor_graph(centers, prune_factor=rng.choice([3.0, None]))
    p_non = rng.uniform(0.01, 0.99, (n_nodes, 4))
    # [..., 0] nonberry, [..., 1] berry
    post = np.stack([p_non, 1 - p_non], axis=-1)
    phi = rng.exponential(1.0, len(graph.edges))
    weights = rng.uniform(0.1, 3.0, 4)
    w_spatial = rng.choice([None, float(rng.uniform(0, 6))])
    return assemble_energy(post, graph, phi, weights, w_spatial, pairwise)


BENEFIT_RHO = np.linspace(0.70, 0.80, 8)
BERRY_DIAMETER_PX = 40.0


def benefit_instance(seed):
    """Clustered berries (some occluded) plus spread backlight false positives.

    Occluded berries have features just below the reference threshold;
    backlight blobs have berry-like features but sit far from everything.
    Returns (refs, candidates, centers, truth labels).
    """
    rng = np.random.default_rng(seed)
    f = FeatureFactory(BENEFIT_RHO, rng)
    pw = f.pairwise()
    t = float(np.quantile(pw, 0.5))
    spread = 1.4826 * float(np.median(np.abs(pw - np.median(pw))))
    centers, l, truth = [], [], []
    for k in range(2):
        n = int(rng.integers(8, 13))
        pts = hex_cluster(n, (300.0, 300.0 + 600.0 * k), BERRY_DIAMETER_PX, rng)
        occluded = rng.random(n) < 0.3
        for p, occ in zip(pts, occluded):
            delta = -rng.uniform(0.3, 1.0, 3) if occ else rng.uniform(1.0, 3.0, 3)
            centers.append(p)
            l.append(t + delta * spread)
            truth.append(1)
    n_fp = int(rng.integers(4, 7))
    placed = 0
    while placed < n_fp:
        p = rng.uniform([0, 0], [900, 1400])
        if min(np.hypot(*(np.asarray(centers) - p).T)) < 200:
            continue
        centers.append(np.rint(p))
        l.append(t + rng.uniform(0.5, 2.0, 3) * spread)
        truth.append(0)
        placed += 1
    l = np.minimum(np.array(l), 0.999 * f.median_rho)
    return f.references(), f.candidates(l), np.array(centers), np.array(truth)


def f1_score(pred, truth):
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
