"""Core data types for decentralized personalized boosting.

Everything downstream (data generation, model learning, graph learning, the
protocol simulator) is expressed in terms of the types defined here: per-user
labeled datasets with confidence weights, a shared decision-stump ensemble,
per-user margin matrices, L1-bounded sparse coefficient vectors, and a
symmetric nonnegative collaboration graph with cached degrees.

All types are value-like: they can be freely copied between threads, and
mutation requires exclusive access.  There is no internal locking.

Tie rule used throughout the package: ``sign(0) = +1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "sign_pm",
    "UserData",
    "PartitionedDataset",
    "StumpEnsemble",
    "margin_matrix",
    "SparseModel",
    "CollaborationGraph",
    "Hyperparams",
    "confidences",
    "save_json",
    "load_json",
]

#: absolute tolerance used for the L1 budget and the degree cache
FLOAT_TOL = 1e-9


def sign_pm(x):
    """Sign in {-1, +1} with the deterministic tie rule sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class UserData:
    """One user's local data.

    Parameters
    ----------
    train_x : ndarray, shape (m_k, D)
    train_y : ndarray, shape (m_k,)
        Labels in {-1, +1}.
    test_x, test_y : ndarray or None
        Optional held-out samples sharing D and the label space.
    confidence : float
        Per-user weight in (0, 1], proportional to the local sample count
        (the largest user has confidence exactly 1).
    angle_deg : float or None
        Optional ground-truth task parameter (in-plane rotation angle) used
        by synthetic benchmarks and oracle graphs.
    """

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: Optional[np.ndarray] = None
    test_y: Optional[np.ndarray] = None
    confidence: float = 1.0
    angle_deg: Optional[float] = None

    @property
    def m(self) -> int:
        return self.train_x.shape[0]

    def validate(self, feature_dim: int) -> None:
        if self.train_x.ndim != 2 or self.train_x.shape[1] != feature_dim:
            raise ValueError("train_x must be (m_k, D) with D=%d" % feature_dim)
        if self.m < 1:
            raise ValueError("every user needs at least one training sample")
        if self.train_y.shape != (self.m,):
            raise ValueError("train_y must have one label per training row")
        if not np.all(np.abs(self.train_y) == 1):
            raise ValueError("labels must be -1 or +1")
        if (self.test_x is None) != (self.test_y is None):
            raise ValueError("test_x and test_y must be given together")
        if self.test_x is not None:
            if self.test_x.ndim != 2 or self.test_x.shape[1] != feature_dim:
                raise ValueError("test_x must be (m, D) with D=%d" % feature_dim)
            if self.test_y.shape != (self.test_x.shape[0],):
                raise ValueError("test_y must have one label per test row")
            if not np.all(np.abs(self.test_y) == 1):
                raise ValueError("test labels must be -1 or +1")
        if not (0.0 < self.confidence <= 1.0 + FLOAT_TOL):
            raise ValueError("confidence must lie in (0, 1]")

    def to_json_dict(self) -> dict:
        d = {
            "train_x": self.train_x.tolist(),
            "train_y": self.train_y.tolist(),
            "confidence": self.confidence,
        }
        if self.test_x is not None:
            d["test_x"] = self.test_x.tolist()
            d["test_y"] = self.test_y.tolist()
        if self.angle_deg is not None:
            d["angle_deg"] = self.angle_deg
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "UserData":
        return cls(
            train_x=np.asarray(d["train_x"], dtype=float),
            train_y=np.asarray(d["train_y"], dtype=float),
            test_x=np.asarray(d["test_x"], dtype=float) if "test_x" in d else None,
            test_y=np.asarray(d["test_y"], dtype=float) if "test_y" in d else None,
            confidence=float(d.get("confidence", 1.0)),
            angle_deg=d.get("angle_deg"),
        )


@dataclass
class PartitionedDataset:
    """A population of users, each holding a private labeled sample."""

    users: list
    feature_dim: int

    @property
    def K(self) -> int:
        return len(self.users)

    def validate(self) -> None:
        if not self.users:
            raise ValueError("no users")
        for u in self.users:
            u.validate(self.feature_dim)

    def train_sizes(self) -> np.ndarray:
        return np.array([u.m for u in self.users], dtype=int)

    def to_json_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "users": [u.to_json_dict() for u in self.users],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PartitionedDataset":
        return cls(
            users=[UserData.from_json_dict(u) for u in d["users"]],
            feature_dim=int(d["feature_dim"]),
        )


def confidences(dataset: PartitionedDataset) -> np.ndarray:
    """Per-user confidence weights c_k = m_k / max_l m_l.

    The user with the largest training sample gets confidence exactly 1;
    all confidences lie in (0, 1].

    Raises
    ------
    ValueError
        If the dataset has no users.
    """
    if dataset.K == 0:
        raise ValueError("no users")
    sizes = dataset.train_sizes().astype(float)
    if np.any(sizes < 1):
        raise ValueError("every user needs at least one training sample")
    return sizes / sizes.max()


# ---------------------------------------------------------------------------
# base predictors
# ---------------------------------------------------------------------------

class StumpEnsemble:
    """A shared set of decision stumps, identical across all users.

    Stump j outputs ``polarity_j * sign(x[feature_j] - threshold_j)`` in
    {-1, +1}, with sign(0) = +1.
    """

    def __init__(self, features: Sequence[int], thresholds: Sequence[float],
                 polarities: Optional[Sequence[int]] = None):
        self.features = np.asarray(features, dtype=int)
        self.thresholds = np.asarray(thresholds, dtype=float)
        if polarities is None:
            polarities = np.ones(len(self.features), dtype=int)
        self.polarities = np.asarray(polarities, dtype=int)
        if not (len(self.features) == len(self.thresholds) == len(self.polarities)):
            raise ValueError("feature/threshold/polarity lists must have equal length")
        if not np.all(np.abs(self.polarities) == 1):
            raise ValueError("polarities must be -1 or +1")

    @property
    def n(self) -> int:
        return len(self.features)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Outputs of every stump on every row: (m, n) matrix with entries +-1."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        raw = X[:, self.features] - self.thresholds[None, :]
        return sign_pm(raw) * self.polarities[None, :]

    def stumps(self) -> Iterator[tuple]:
        return iter(zip(self.features.tolist(), self.thresholds.tolist(),
                        self.polarities.tolist()))

    def to_json_dict(self) -> dict:
        return {"stumps": [[int(f), float(t), int(p)] for f, t, p in self.stumps()]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "StumpEnsemble":
        trip = d["stumps"]
        return cls([s[0] for s in trip], [s[1] for s in trip], [s[2] for s in trip])


def margin_matrix(user: UserData, stumps: StumpEnsemble) -> np.ndarray:
    """Margin matrix A_k with entries A[i, j] = y_i * h_j(x_i).

    For +-1-valued stumps all entries are in {-1, +1}; row i of ``A @ alpha``
    is the signed ensemble margin of training point i.
    """
    H = stumps.evaluate(user.train_x)
    return user.train_y[:, None] * H


# ---------------------------------------------------------------------------
# sparse models
# ---------------------------------------------------------------------------

class SparseModel:
    """An L1-ball-constrained coefficient vector over the shared stump set.

    The coefficients are kept dense internally (n is small) but the model is
    conceptually sparse: greedy updates add at most one new nonzero each, so
    ``nnz() <= update_count`` when grown from zero.  Serialization uses the
    sparse index -> value map.
    """

    __slots__ = ("coef", "l1_budget", "update_count")

    def __init__(self, coef: np.ndarray, l1_budget: float, update_count: int = 0):
        self.coef = np.asarray(coef, dtype=float)
        self.l1_budget = float(l1_budget)
        self.update_count = int(update_count)

    @classmethod
    def zeros(cls, n: int, l1_budget: float) -> "SparseModel":
        return cls(np.zeros(n), l1_budget, 0)

    @property
    def n(self) -> int:
        return self.coef.shape[0]

    def l1_norm(self) -> float:
        return float(np.abs(self.coef).sum())

    def nnz(self) -> int:
        return int(np.count_nonzero(self.coef))

    def nonzeros(self) -> dict:
        idx = np.nonzero(self.coef)[0]
        return {int(j): float(self.coef[j]) for j in idx}

    def copy(self) -> "SparseModel":
        return SparseModel(self.coef.copy(), self.l1_budget, self.update_count)

    def check_budget(self) -> None:
        if self.l1_norm() > self.l1_budget + FLOAT_TOL:
            raise ValueError("L1 budget violated: %g > %g" % (self.l1_norm(), self.l1_budget))

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "coefficients": {str(j): v for j, v in self.nonzeros().items()},
            "l1_budget": self.l1_budget,
            "update_count": self.update_count,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SparseModel":
        coef = np.zeros(int(d["n"]))
        for j, v in d["coefficients"].items():
            coef[int(j)] = float(v)
        return cls(coef, float(d["l1_budget"]), int(d["update_count"]))

    def __eq__(self, other) -> bool:
        return (isinstance(other, SparseModel)
                and self.l1_budget == other.l1_budget
                and self.update_count == other.update_count
                and np.array_equal(self.coef, other.coef))


# ---------------------------------------------------------------------------
# collaboration graph
# ---------------------------------------------------------------------------

class CollaborationGraph:
    """Symmetric nonnegative edge weights over K users, no self-edges.

    Each unordered pair {k, l} is stored once, so w[k, l] and w[l, k] can
    never drift apart.  Degrees d_k = sum_l w[k, l] are cached and updated
    incrementally on every mutation.
    """

    def __init__(self, n_users: int):
        if n_users < 1:
            raise ValueError("need at least one user")
        self.K = int(n_users)
        self._w: dict = {}
        self._nbrs: list = [set() for _ in range(self.K)]
        self._deg = np.zeros(self.K)

    @staticmethod
    def _key(k: int, l: int) -> tuple:
        return (k, l) if k < l else (l, k)

    def _check_node(self, k: int) -> None:
        if not (0 <= k < self.K):
            raise IndexError("user index %d out of range [0, %d)" % (k, self.K))

    def weight(self, k: int, l: int) -> float:
        self._check_node(k)
        self._check_node(l)
        if k == l:
            raise ValueError("no self-edges")
        return self._w.get(self._key(k, l), 0.0)

    def set_weight(self, k: int, l: int, value: float) -> None:
        """Set w[k, l] = w[l, k] = value; value 0 removes the edge."""
        self._check_node(k)
        self._check_node(l)
        if k == l:
            raise ValueError("no self-edges")
        if value < 0:
            raise ValueError("edge weights must be nonnegative")
        key = self._key(k, l)
        old = self._w.get(key, 0.0)
        if value == 0.0:
            if key in self._w:
                del self._w[key]
                self._nbrs[k].discard(l)
                self._nbrs[l].discard(k)
        else:
            self._w[key] = float(value)
            self._nbrs[k].add(l)
            self._nbrs[l].add(k)
        self._deg[k] += value - old
        self._deg[l] += value - old
        # isolated nodes get exact zero, killing accumulated float drift
        for node in (k, l):
            if not self._nbrs[node]:
                self._deg[node] = 0.0

    def degree(self, k: int) -> float:
        """Cached degree d_k = sum_l w[k, l]; 0 for an isolated node."""
        self._check_node(k)
        return float(self._deg[k])

    def degrees(self) -> np.ndarray:
        return self._deg.copy()

    def neighbors(self, k: int) -> set:
        self._check_node(k)
        return self._nbrs[k]

    def edges(self) -> Iterator[tuple]:
        """Iterate (k, l, w) with k < l over all present edges."""
        for (k, l), w in self._w.items():
            yield k, l, w

    @property
    def edge_count(self) -> int:
        return len(self._w)

    def mean_degree(self) -> float:
        """Average neighbor count 2M/K (edge count based, not weighted)."""
        return 2.0 * self.edge_count / self.K

    def recompute_degrees(self) -> np.ndarray:
        """Brute-force row sums, for cross-checking the incremental cache."""
        deg = np.zeros(self.K)
        for k, l, w in self.edges():
            deg[k] += w
            deg[l] += w
        return deg

    def copy(self) -> "CollaborationGraph":
        g = CollaborationGraph(self.K)
        g._w = dict(self._w)
        g._nbrs = [set(s) for s in self._nbrs]
        g._deg = self._deg.copy()
        return g

    def to_json_dict(self) -> dict:
        return {
            "K": self.K,
            "weights": [[k, l, w] for (k, l), w in sorted(self._w.items())],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CollaborationGraph":
        g = cls(int(d["K"]))
        for k, l, w in d["weights"]:
            g.set_weight(int(k), int(l), float(w))
        return g

    def __eq__(self, other) -> bool:
        return (isinstance(other, CollaborationGraph)
                and self.K == other.K and self._w == other._w)


def degree(graph: CollaborationGraph, k: int) -> float:
    """Degree of user k in the collaboration graph (cached row sum)."""
    return graph.degree(k)


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------

@dataclass
class Hyperparams:
    """Trade-off and protocol constants shared across modules.

    ``mu2`` defaults to ``mu1`` when not explicitly overridden: scaling the
    graph regularizer independently only rescales the learned weights.
    ``z_bits`` is the bit width of one float on the wire, 32 by default.
    """

    mu1: float = 1.0
    beta: float = 5.0
    lam: float = 0.05
    delta: float = 1.0
    kappa: int = 5
    z_bits: int = 32
    mu2: Optional[float] = None

    def __post_init__(self):
        if self.mu2 is None:
            self.mu2 = self.mu1
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValueError("mu1 and mu2 must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")
        if self.z_bits < 1:
            raise ValueError("z_bits must be positive")

    def to_json_dict(self) -> dict:
        return {
            "mu1": self.mu1, "mu2": self.mu2, "beta": self.beta,
            "lambda": self.lam, "delta": self.delta, "kappa": self.kappa,
            "Z": self.z_bits,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Hyperparams":
        return cls(
            mu1=float(d["mu1"]),
            mu2=float(d["mu2"]) if d.get("mu2") is not None else None,
            beta=float(d["beta"]),
            lam=float(d["lambda"]),
            delta=float(d["delta"]),
            kappa=int(d.get("kappa", 5)),
            z_bits=int(d.get("Z", 32)),
        )


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------

def save_json(obj, path) -> None:
    """Write a type with a ``to_json_dict`` method (or a plain dict) to disk."""
    d = obj.to_json_dict() if hasattr(obj, "to_json_dict") else obj
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_json(cls, path):
    """Load a type with a ``from_json_dict`` classmethod from disk."""
    with open(path) as fh:
        d = json.load(fh)
    return cls.from_json_dict(d)
