"""Synthetic multi-task benchmarks, oracle graphs, stump grids, CSV loading.

The synthetic benchmark draws each user's data from the classic two
interleaving crescents, rotated in-plane by a per-user angle.  Users with
similar angles have similar tasks, which an oracle collaboration graph
encodes through a Gaussian kernel on angle differences.

Crescent geometry (the generator's convention, recorded here because it is a
free choice): the positive class is the upper unit half-circle
(cos t, sin t), the negative class the offset lower half-circle
(1 - cos t, 1/2 - sin t), t ~ U(0, pi), plus isotropic Gaussian noise with
standard deviation 0.1.  Points are then rotated about the origin and
embedded in R^D by filling the D-2 remaining coordinates with U(-1, 1) noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    CollaborationGraph,
    PartitionedDataset,
    StumpEnsemble,
    UserData,
    confidences,
)

__all__ = [
    "MoonsConfig",
    "generate_moons",
    "oracle_graph",
    "build_stumps",
    "feature_ranges",
    "margin_matrix",
    "load_csv",
    "export_csv",
]

# re-exported here because margin matrices are built next to the data they
# describe; the implementation lives with the other core types
from .domain import margin_matrix  # noqa: E402

MOON_NOISE_STD = 0.1


@dataclass
class MoonsConfig:
    """Configuration of the rotated-crescents benchmark.

    ``preset="clustered"`` groups users into clusters with a shared mean
    rotation angle per cluster plus per-user Gaussian jitter;
    ``preset="per_user"`` draws every user's angle independently from
    N(0, angle_noise_std).
    """

    preset: str = "clustered"
    K: int = 100
    cluster_sizes: Sequence[int] = (10, 20, 30, 40)
    cluster_angles_deg: Sequence[float] = (45.0, 135.0, 225.0, 315.0)
    angle_noise_std: float = 5.0
    m_train_range: tuple = (3, 15)
    m_test: int = 100
    D: int = 20
    label_flip_frac: float = 0.05
    oracle_sigma: float = 0.1
    oracle_drop_threshold: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if self.preset not in ("clustered", "per_user"):
            raise ValueError("unknown preset %r" % self.preset)
        if self.preset == "clustered":
            if len(self.cluster_sizes) != len(self.cluster_angles_deg):
                raise ValueError("cluster size and angle lists differ in length")
            if sum(self.cluster_sizes) != self.K:
                raise ValueError("cluster sizes must sum to K")
        lo, hi = self.m_train_range
        if not (1 <= lo <= hi):
            raise ValueError("m_train_range must satisfy 1 <= lo <= hi")
        if self.D < 2:
            raise ValueError("need D >= 2 (two signal coordinates)")
        if not (0.0 <= self.label_flip_frac < 1.0):
            raise ValueError("label_flip_frac must lie in [0, 1)")
        if self.m_test < 0:
            raise ValueError("m_test must be nonnegative")
        if self.oracle_sigma <= 0:
            raise ValueError("oracle_sigma must be positive")


def _sample_crescents(rng: np.random.Generator, m: int) -> tuple:
    """Draw m labeled points from the two-crescent distribution (2-D)."""
    n_pos = (m + 1) // 2
    n_neg = m - n_pos
    t_pos = rng.uniform(0.0, np.pi, n_pos)
    t_neg = rng.uniform(0.0, np.pi, n_neg)
    pos = np.column_stack([np.cos(t_pos), np.sin(t_pos)])
    neg = np.column_stack([1.0 - np.cos(t_neg), 0.5 - np.sin(t_neg)])
    X = np.vstack([pos, neg]) + rng.normal(0.0, MOON_NOISE_STD, (m, 2))
    y = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    order = rng.permutation(m)
    return X[order], y[order]


def _rotate_embed(rng: np.random.Generator, X2: np.ndarray, angle_deg: float,
                  D: int) -> np.ndarray:
    th = np.deg2rad(angle_deg)
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    X = np.empty((X2.shape[0], D))
    X[:, :2] = X2 @ R.T
    if D > 2:
        X[:, 2:] = rng.uniform(-1.0, 1.0, (X2.shape[0], D - 2))
    return X


def generate_moons(cfg: MoonsConfig) -> tuple:
    """Generate the rotated-crescents benchmark.

    Per user: m_k ~ U{lo..hi} training points and ``m_test`` test points are
    drawn from the crescents, rotated by the user's angle, and embedded in
    R^D.  Exactly floor(label_flip_frac * m_k) training labels are flipped,
    chosen uniformly without replacement; test labels are never flipped.

    Every user gets an independent RNG stream derived from the seed and its
    index, so the output is bit-reproducible for a fixed config.

    Returns
    -------
    (PartitionedDataset, ndarray of per-user angles in degrees)
    """
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(cfg.K + 1)
    angle_rng = np.random.Generator(np.random.PCG64(children[0]))

    if cfg.preset == "clustered":
        means = np.repeat(np.asarray(cfg.cluster_angles_deg, dtype=float),
                          np.asarray(cfg.cluster_sizes, dtype=int))
        angles = angle_rng.normal(means, cfg.angle_noise_std)
    else:
        angles = angle_rng.normal(0.0, cfg.angle_noise_std, cfg.K)

    lo, hi = cfg.m_train_range
    users = []
    for k in range(cfg.K):
        rng = np.random.Generator(np.random.PCG64(children[k + 1]))
        m_k = int(rng.integers(lo, hi + 1))
        Xtr2, ytr = _sample_crescents(rng, m_k)
        Xte2, yte = _sample_crescents(rng, cfg.m_test)
        Xtr = _rotate_embed(rng, Xtr2, angles[k], cfg.D)
        Xte = _rotate_embed(rng, Xte2, angles[k], cfg.D)
        n_flip = int(np.floor(cfg.label_flip_frac * m_k))
        if n_flip > 0:
            flip_idx = rng.choice(m_k, size=n_flip, replace=False)
            ytr = ytr.copy()
            ytr[flip_idx] = -ytr[flip_idx]
        test_x, test_y = (Xte, yte) if cfg.m_test > 0 else (None, None)
        users.append(UserData(train_x=Xtr, train_y=ytr, test_x=test_x,
                              test_y=test_y, angle_deg=float(angles[k])))

    dataset = PartitionedDataset(users=users, feature_dim=cfg.D)
    conf = confidences(dataset)
    for k, u in enumerate(dataset.users):
        u.confidence = float(conf[k])
    dataset.validate()
    return dataset, angles


def oracle_graph(angles_deg: Sequence[float], sigma: float = 0.1,
                 drop_threshold: float = 1e-4) -> CollaborationGraph:
    """Ground-truth collaboration graph from per-user rotation angles.

    Pair weight: exp((cos(theta_k - theta_l) - 1) / sigma), with angles in
    radians inside the cosine.  Edges with weight below ``drop_threshold``
    are removed entirely.  Weights lie in (0, 1], are symmetric, and decay
    monotonically with the angle difference folded to [0, 180] degrees.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    angles = np.deg2rad(np.asarray(angles_deg, dtype=float))
    K = len(angles)
    g = CollaborationGraph(K)
    for k in range(K):
        for l in range(k + 1, K):
            w = float(np.exp((np.cos(angles[k] - angles[l]) - 1.0) / sigma))
            if w >= drop_threshold:
                g.set_weight(k, l, w)
    return g


def feature_ranges(dataset: PartitionedDataset) -> list:
    """Per-dimension (min, max) over all points of all users (train + test).

    For synthetic presets this is the generator-side pooled range; for CSV
    data prefer the explicitly configured ranges, since the shared stump grid
    is a public convention, not something derived from private data.
    """
    lo = np.full(dataset.feature_dim, np.inf)
    hi = np.full(dataset.feature_dim, -np.inf)
    for u in dataset.users:
        for X in (u.train_x, u.test_x):
            if X is None:
                continue
            lo = np.minimum(lo, X.min(axis=0))
            hi = np.maximum(hi, X.max(axis=0))
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def build_stumps(ranges: Sequence[tuple], per_dim: int) -> StumpEnsemble:
    """Uniform stump grid: per_dim thresholds per dimension, polarity +1.

    Thresholds sit at the interior points of a uniform partition of each
    (min, max) range, i.e. min + i*(max-min)/(per_dim+1) for i = 1..per_dim,
    so they are strictly inside the range.  n = D * per_dim.
    """
    if per_dim < 1:
        raise ValueError("per_dim must be at least 1")
    features, thresholds = [], []
    for d, (lo, hi) in enumerate(ranges):
        if not lo < hi:
            raise ValueError("degenerate feature range for dim %d: [%g, %g]" % (d, lo, hi))
        step = (hi - lo) / (per_dim + 1)
        for i in range(1, per_dim + 1):
            features.append(d)
            thresholds.append(lo + i * step)
    return StumpEnsemble(features, thresholds)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def _parse_label(text: str, line_no: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValueError("line %d: label %r is not a number" % (line_no, text))
    if v not in (-1.0, 1.0):
        raise ValueError("line %d: label must be -1 or 1, got %r" % (line_no, text))
    return v


def load_csv(path) -> PartitionedDataset:
    """Load per-user data from CSV: user_id, split, y, f0..f{D-1}.

    Users are grouped by id in order of first appearance; confidences are
    derived from the training sample sizes.  Malformed rows raise with the
    offending line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("no users")
        if len(header) < 4 or header[0] != "user_id" or header[1] != "split" or header[2] != "y":
            raise ValueError("header must be user_id,split,y,f0..f{D-1}")
        D = len(header) - 3
        expected = ["f%d" % d for d in range(D)]
        if header[3:] != expected:
            raise ValueError("feature columns must be named f0..f%d in order" % (D - 1))

        order = []
        rows: dict = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + D:
                raise ValueError("line %d: expected %d fields, got %d"
                                 % (line_no, 3 + D, len(row)))
            uid, split = row[0], row[1]
            if split not in ("train", "test"):
                raise ValueError("line %d: unknown split %r" % (line_no, split))
            y = _parse_label(row[2], line_no)
            try:
                x = [float(v) for v in row[3:]]
            except ValueError:
                raise ValueError("line %d: non-numeric feature value" % line_no)
            if uid not in rows:
                order.append(uid)
                rows[uid] = {"train": ([], []), "test": ([], [])}
            xs, ys = rows[uid][split]
            xs.append(x)
            ys.append(y)

    if not order:
        raise ValueError("no users")

    users = []
    for uid in order:
        (tr_x, tr_y) = rows[uid]["train"]
        (te_x, te_y) = rows[uid]["test"]
        if not tr_x:
            raise ValueError("user %r has no training rows" % uid)
        users.append(UserData(
            train_x=np.asarray(tr_x), train_y=np.asarray(tr_y),
            test_x=np.asarray(te_x) if te_x else None,
            test_y=np.asarray(te_y) if te_y else None,
        ))
    dataset = PartitionedDataset(users=users, feature_dim=D)
    conf = confidences(dataset)
    for k, u in enumerate(dataset.users):
        u.confidence = float(conf[k])
    dataset.validate()
    return dataset


def export_csv(dataset: PartitionedDataset, path) -> None:
    """Write a dataset back out in the same CSV schema load_csv reads."""
    D = dataset.feature_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "split", "y"] + ["f%d" % d for d in range(D)])
        for k, u in enumerate(dataset.users):
            for x, y in zip(u.train_x, u.train_y):
                writer.writerow([k, "train", int(y)] + [repr(float(v)) for v in x])
            if u.test_x is not None:
                for x, y in zip(u.test_x, u.test_y):
                    writer.writerow([k, "test", int(y)] + [repr(float(v)) for v in x])
