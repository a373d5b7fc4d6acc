"""Prediction, accuracy, baselines, cross-validation and sweep drivers.

Baselines:

* local boost  -- per-user greedy ensemble training without collaboration
  (unit degree; the literal objective on an edgeless graph is identically
  zero, so the degree is pinned to 1 to preserve the intended semantics);
* global boost -- one ensemble trained on the pooled dataset of all users;
* local/global linear -- L2-regularized logistic regression on raw features,
  solved to gradient norm <= 1e-6.

All reported accuracies are unweighted means over users.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import boost, netsim
from .domain import (
    CollaborationGraph,
    Hyperparams,
    PartitionedDataset,
    SparseModel,
    StumpEnsemble,
    UserData,
    confidences,
    sign_pm,
)
from .datagen import oracle_graph

__all__ = [
    "predict",
    "average_accuracy",
    "run_local_boost",
    "run_global_boost",
    "LinearModel",
    "run_linear_baselines",
    "linear_average_accuracy",
    "CvGrid",
    "cross_validate",
    "KappaSweepRow",
    "sweep_kappa",
    "graph_optimum_reference",
    "LambdaSweepRow",
    "sweep_lambda",
    "local_loss_terms",
]


# ---------------------------------------------------------------------------
# prediction and accuracy
# ---------------------------------------------------------------------------

def predict(alpha, stumps: StumpEnsemble, x: np.ndarray) -> int:
    """Label in {-1, +1} for one sample: sign of the ensemble score, sign(0)=+1."""
    coef = alpha.coef if isinstance(alpha, SparseModel) else np.asarray(alpha)
    score = float(stumps.evaluate(np.atleast_2d(x))[0] @ coef)
    return 1 if score >= 0 else -1


def _split_arrays(user: UserData, split: str):
    if split == "train":
        return user.train_x, user.train_y
    if split == "test":
        return user.test_x, user.test_y
    raise ValueError("split must be 'train' or 'test'")


def average_accuracy(state: boost.ModelState, dataset: PartitionedDataset,
                     stumps: StumpEnsemble, split: str = "test"):
    """Unweighted mean over users of per-user accuracy on a split.

    Users with no samples in the split get NaN in the per-user vector and
    are excluded from the mean.
    """
    per_user = np.full(dataset.K, np.nan)
    for k, user in enumerate(dataset.users):
        X, y = _split_arrays(user, split)
        if X is None or len(y) == 0:
            continue
        pred = sign_pm(stumps.evaluate(X) @ state.coef(k))
        per_user[k] = float(np.mean(pred == y))
    mean = float(np.nanmean(per_user)) if np.any(~np.isnan(per_user)) else float("nan")
    return mean, per_user


# ---------------------------------------------------------------------------
# boosting baselines
# ---------------------------------------------------------------------------

def run_local_boost(dataset: PartitionedDataset, stumps: StumpEnsemble,
                    beta: float, steps: int, seed: int = 0) -> boost.ModelState:
    """Independent per-user training: unit degree, no smoothness term."""
    hyper = Hyperparams(mu1=0.0, beta=beta)
    state, _ = netsim.run_fixed_graph(dataset, stumps, None, hyper, steps,
                                      seed, local_mode=True)
    return state


def _pool_dataset(dataset: PartitionedDataset) -> PartitionedDataset:
    X = np.vstack([u.train_x for u in dataset.users])
    y = np.concatenate([u.train_y for u in dataset.users])
    return PartitionedDataset(users=[UserData(train_x=X, train_y=y)],
                              feature_dim=dataset.feature_dim)


def run_global_boost(dataset: PartitionedDataset, stumps: StumpEnsemble,
                     beta: float, steps: int, seed: int = 0) -> SparseModel:
    """Single shared ensemble trained on the union of all local datasets."""
    pooled = _pool_dataset(dataset)
    state = run_local_boost(pooled, stumps, beta, steps, seed)
    return state.models[0]


def broadcast_state(model: SparseModel, K: int) -> boost.ModelState:
    """Replicate one shared model across all users for evaluation."""
    return boost.ModelState([model.copy() for _ in range(K)])


# ---------------------------------------------------------------------------
# linear baselines
# ---------------------------------------------------------------------------

@dataclass
class LinearModel:
    """Logistic-regression weights with intercept."""

    w: np.ndarray
    b: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return sign_pm(X @ self.w + self.b)


def _fit_logistic(X: np.ndarray, y: np.ndarray, l2: float,
                  grad_tol: float = 1e-6) -> LinearModel:
    """Minimize mean log(1 + exp(-y (Xw + b))) + l2 ||w||^2 to small gradient."""
    D = X.shape[1]

    def fg(theta):
        w, b = theta[:-1], theta[-1]
        z = y * (X @ w + b)
        loss = float(np.mean(np.logaddexp(0.0, -z)) + l2 * w @ w)
        s = y / (1.0 + np.exp(z))          # y * sigma(-z)
        grad_w = -(X.T @ s) / len(y) + 2.0 * l2 * w
        grad_b = -float(np.mean(s))
        return loss, np.concatenate([grad_w, [grad_b]])

    theta = np.zeros(D + 1)
    for _ in range(5):
        res = minimize(fg, theta, jac=True, method="L-BFGS-B",
                       options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-16})
        theta = res.x
        if np.linalg.norm(fg(theta)[1]) <= grad_tol:
            break
    if np.linalg.norm(fg(theta)[1]) > grad_tol:
        raise RuntimeError("logistic fit did not reach the gradient tolerance")
    return LinearModel(w=theta[:-1], b=float(theta[-1]))


def run_linear_baselines(dataset: PartitionedDataset, mode: str,
                         l2: float = 1e-3):
    """Fit the linear baseline; mode 'global' pools all users, 'local' is per-user.

    Returns one LinearModel (global) or a list of K LinearModels (local).
    """
    if mode == "global":
        pooled = _pool_dataset(dataset)
        u = pooled.users[0]
        return _fit_logistic(u.train_x, u.train_y, l2)
    if mode == "local":
        return [_fit_logistic(u.train_x, u.train_y, l2) for u in dataset.users]
    raise ValueError("mode must be 'global' or 'local'")


def linear_average_accuracy(models, dataset: PartitionedDataset,
                            split: str = "test"):
    """Unweighted mean over users of a linear baseline's accuracy."""
    per_user = np.full(dataset.K, np.nan)
    for k, user in enumerate(dataset.users):
        X, y = _split_arrays(user, split)
        if X is None or len(y) == 0:
            continue
        model = models[k] if isinstance(models, list) else models
        per_user[k] = float(np.mean(model.predict(X) == y))
    mean = float(np.nanmean(per_user)) if np.any(~np.isnan(per_user)) else float("nan")
    return mean, per_user


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CvGrid:
    """Hyperparameter grids for k-fold cross-validation."""

    beta_grid: Sequence[float] = (1.0, 10.0, 100.0, 1000.0)
    mu_grid: Sequence[float] = tuple(10.0 ** e for e in range(-3, 4))
    lambda_grid: Sequence[float] = tuple(10.0 ** e for e in range(-3, 4))
    folds: int = 3

    def validate(self):
        if not (self.beta_grid and self.mu_grid and self.lambda_grid):
            raise ValueError("empty grid")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


def _fold_partition(dataset: PartitionedDataset, folds: int, seed: int):
    """Deterministic per-user round-robin fold assignment after a shuffle."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    assignment = []
    for user in dataset.users:
        perm = rng.permutation(user.m)
        fold_of = np.empty(user.m, dtype=int)
        fold_of[perm] = np.arange(user.m) % folds
        assignment.append(fold_of)
    return assignment


def _fold_dataset(dataset: PartitionedDataset, assignment, fold: int):
    """Training dataset for one fold plus the held-out rows.

    Users whose training part would be empty in this fold are left out of
    the fold dataset entirely (and are not scored on it); users with no
    held-out rows are trained on but not scored.
    """
    users, val = [], []
    for k, user in enumerate(dataset.users):
        mask_val = assignment[k] == fold
        if np.all(mask_val):
            continue
        users.append(UserData(
            train_x=user.train_x[~mask_val], train_y=user.train_y[~mask_val],
            angle_deg=user.angle_deg))
        if np.any(mask_val):
            val.append((len(users) - 1, user.train_x[mask_val],
                        user.train_y[mask_val]))
    sub = PartitionedDataset(users=users, feature_dim=dataset.feature_dim)
    conf = confidences(sub)
    for k, u in enumerate(sub.users):
        u.confidence = float(conf[k])
    return sub, val


def _run_method(method: str, sub: PartitionedDataset, stumps: StumpEnsemble,
                hyper: Hyperparams, sched: netsim.ScheduleConfig,
                steps: int, seed: int, l2: float):
    """Train one method on a fold dataset; returns a per-user predictor."""
    if method == "local_boost":
        state = run_local_boost(sub, stumps, hyper.beta, steps, seed)
    elif method == "global_boost":
        state = broadcast_state(run_global_boost(sub, stumps, hyper.beta,
                                                 steps, seed), sub.K)
    elif method == "dada_learned":
        sched = replace(sched, seed=seed)
        state, _, _ = netsim.run_alternating(sub, stumps, hyper, sched)
    elif method == "dada_oracle":
        angles = [u.angle_deg for u in sub.users]
        if any(a is None for a in angles):
            raise ValueError("oracle method needs per-user angle metadata")
        g = oracle_graph(angles)
        sched = replace(sched, seed=seed)
        total = sched.model_steps_per_phase * max(sched.total_phases, 1)
        state, _ = netsim.run_fixed_graph(sub, stumps, g, hyper, total, seed)
    elif method in ("local_linear", "global_linear"):
        models = run_linear_baselines(sub, method.split("_")[0], l2=l2)
        return lambda k, X: (models[k] if isinstance(models, list) else models).predict(X)
    else:
        raise ValueError("unknown method %r" % method)
    return lambda k, X: sign_pm(stumps.evaluate(X) @ state.coef(k))


def cross_validate(dataset: PartitionedDataset, grid: CvGrid, method: str,
                   stumps: StumpEnsemble, base_hyper: Hyperparams,
                   sched: netsim.ScheduleConfig, steps: int = 1000,
                   seed: int = 0) -> Hyperparams:
    """Grid search by k-fold cross-validation on the users' training data.

    Maximizes the mean over folds of the mean-over-users held-out accuracy.
    Ties break toward the lexicographically smallest (beta, mu, lambda).
    Grid axes a method does not use are collapsed (e.g. the boosting
    baselines only see beta; the linear baselines reuse the lambda grid as
    the L2 regularization grid).
    """
    grid.validate()
    assignment = _fold_partition(dataset, grid.folds, seed)
    folds = [_fold_dataset(dataset, assignment, f) for f in range(grid.folds)]

    if method in ("local_boost", "global_boost"):
        points = [(b, base_hyper.mu1, base_hyper.lam) for b in sorted(grid.beta_grid)]
    elif method in ("local_linear", "global_linear"):
        points = [(base_hyper.beta, base_hyper.mu1, l) for l in sorted(grid.lambda_grid)]
    elif method == "dada_oracle":
        points = [(b, m, base_hyper.lam) for b in sorted(grid.beta_grid)
                  for m in sorted(grid.mu_grid)]
    else:
        points = [(b, m, l) for b in sorted(grid.beta_grid)
                  for m in sorted(grid.mu_grid) for l in sorted(grid.lambda_grid)]

    best_point, best_score = None, -np.inf
    for b, m, l in points:
        hyper = replace(base_hyper, beta=b, mu1=m, lam=l, mu2=None)
        fold_scores = []
        for f, (sub, val) in enumerate(folds):
            if not val:
                continue
            predictor = _run_method(method, sub, stumps, hyper, sched, steps,
                                    seed=seed + 1000 * f, l2=l)
            accs = [float(np.mean(predictor(k, X) == y)) for k, X, y in val]
            fold_scores.append(float(np.mean(accs)))
        score = float(np.mean(fold_scores)) if fold_scores else float("nan")
        if score > best_score:
            best_point, best_score = (b, m, l), score
    if best_point is None:
        raise ValueError("cross-validation produced no scores")
    b, m, l = best_point
    return replace(base_hyper, beta=b, mu1=m, lam=l, mu2=None)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def local_loss_terms(dataset: PartitionedDataset, stumps: StumpEnsemble,
                     state: boost.ModelState) -> np.ndarray:
    """Per-user c_k * L_k(alpha_k) for a trained model state."""
    from .domain import margin_matrix
    conf = confidences(dataset)
    return np.array([
        float(conf[k]) * boost.local_loss(margin_matrix(dataset.users[k], stumps),
                                          state.models[k])
        for k in range(dataset.K)
    ])


def graph_optimum_reference(model_coefs: Sequence[np.ndarray],
                            loss_terms: Sequence[float],
                            hyper: Hyperparams) -> float:
    """Reference optimum of the graph objective via bound-constrained L-BFGS.

    Used to derive sweep targets; the convergence tests use an independent
    projected-gradient oracle instead.
    """
    K = len(model_coefs)
    iu, il = np.triu_indices(K, k=1)
    loss_terms = np.asarray(loss_terms, dtype=float)
    pair_loss = loss_terms[iu] + loss_terms[il]
    coefs = np.asarray(model_coefs)
    sq = ((coefs[iu] - coefs[il]) ** 2).sum(axis=1)
    lin = pair_loss + 0.5 * hyper.mu1 * sq

    def fg(w):
        deg = np.zeros(K)
        np.add.at(deg, iu, w)
        np.add.at(deg, il, w)
        val = float(lin @ w + hyper.mu2 * (hyper.lam * w @ w
                    - np.sum(np.log(deg + hyper.delta))))
        bar = 1.0 / (deg + hyper.delta)
        grad = lin + hyper.mu2 * (2.0 * hyper.lam * w - bar[iu] - bar[il])
        return val, grad

    w0 = np.zeros(len(iu))
    res = minimize(fg, w0, jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * len(iu),
                   options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-12})
    return float(res.fun)


@dataclass
class KappaSweepRow:
    kappa: int
    rounds: int
    bits: int
    reached: bool


def sweep_kappa(model_coefs: Sequence[np.ndarray], loss_terms: Sequence[float],
                hyper: Hyperparams, kappa_list: Sequence[int], target_h: float,
                *, seed: int = 0, max_steps: int = 200_000,
                cached: bool = True) -> list:
    """Graph learning from fixed models for each kappa until h <= target_h.

    Returns one row per kappa with the rounds and ledger bits spent;
    ``reached`` is False when the cap was hit first ("capped").
    """
    rows = []
    for kappa in kappa_list:
        res = netsim.run_graph_learning(
            model_coefs, loss_terms, hyper, kappa=kappa, target_h=target_h,
            max_steps=max_steps, seed=seed, cached=cached)
        rows.append(KappaSweepRow(kappa=int(kappa), rounds=res.steps_run,
                                  bits=res.ledger.graph_bits,
                                  reached=res.reached))
    return rows


@dataclass
class LambdaSweepRow:
    lam: float
    edges: int
    mean_degree: float
    train_acc: float
    test_acc: float
    model_bits: int
    graph_bits: int


def sweep_lambda(dataset: PartitionedDataset, stumps: StumpEnsemble,
                 base_hyper: Hyperparams, lambda_list: Sequence[float],
                 sched: netsim.ScheduleConfig) -> list:
    """Full alternating run per lambda; records final sparsity and accuracy."""
    rows = []
    for lam in lambda_list:
        hyper = replace(base_hyper, lam=float(lam), mu2=None)
        state, graph, log = netsim.run_alternating(dataset, stumps, hyper, sched)
        train_acc, _ = average_accuracy(state, dataset, stumps, "train")
        test_acc, _ = average_accuracy(state, dataset, stumps, "test")
        rows.append(LambdaSweepRow(
            lam=float(lam), edges=graph.edge_count,
            mean_degree=graph.mean_degree(), train_acc=train_acc,
            test_acc=test_acc,
            model_bits=log.column("model_bits")[-1] if log.rows else 0,
            graph_bits=log.column("graph_bits")[-1] if log.rows else 0))
    return rows
