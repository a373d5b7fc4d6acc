"""Event-driven simulator for the decentralized learning protocol.

A global clock ticks once per user activation (equivalent in distribution to
independent local Poisson clocks).  At each tick one uniformly random user
wakes up and performs either a greedy model update (sent to its current
neighbors) or a graph block update (negotiated with a peer-sampled set).
Message delivery is reliable and instantaneous; there is no failure or
latency model.

Every bit that crosses the simulated network is accounted for:

* model update: one (index, value) pair to each neighbor,
  (Z + ceil(log2 n)) * |N_k| bits;
* graph update: per contacted peer, 3Z bits (loss, degree, returned weight)
  plus the peer's sparse model at nnz * (Z + ceil(log2 n)) bits, skipped in
  caching mode when that peer was contacted before and its model is
  unchanged;
* edge creation between phases: both endpoints exchange their full sparse
  models so neighbor copies are never stale, charged at the same sparse rate
  (the analysis is silent on this cost; it is a convention of this
  simulator, charged to the model counter).

The alternating pipeline: (i) train purely local models, (ii) learn an
initial graph from them, (iii) repeat [model phase, graph phase].  A single
global step counter drives the step-size schedule across the whole pipeline:
only model updates advance it and it is never reset across phases, so the
alternation refines the pretrained local models instead of discarding them
(set ``gamma_reset_per_phase`` to restart the schedule at every model phase
instead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import boost, graphlearn
from .domain import (
    CollaborationGraph,
    Hyperparams,
    PartitionedDataset,
    SparseModel,
    StumpEnsemble,
    confidences,
    margin_matrix,
    sign_pm,
)

__all__ = [
    "ScheduleConfig",
    "CommLedger",
    "MetricsLog",
    "METRICS_COLUMNS",
    "index_bits",
    "model_step_cost",
    "model_resend_cost",
    "graph_step_cost",
    "memory_footprint",
    "MemoryReport",
    "broadcast_reference_bits",
    "Simulator",
    "run_alternating",
    "run_fixed_graph",
    "run_graph_learning",
    "GraphLearnResult",
]


# ---------------------------------------------------------------------------
# communication and memory accounting
# ---------------------------------------------------------------------------

def index_bits(n: int) -> int:
    """Bits to address one of n base predictors: ceil(log2 n), at least 1."""
    if n < 1:
        raise ValueError("need at least one base predictor")
    return max(1, int(math.ceil(math.log2(n)))) if n > 1 else 1


def model_step_cost(z_bits: int, n: int, neighbor_count: int) -> int:
    """Bits for one model update: one (index, value) pair per neighbor."""
    return (z_bits + index_bits(n)) * neighbor_count


def model_resend_cost(z_bits: int, n: int, nnz: int) -> int:
    """Bits to ship one full sparse model: nnz (index, value) pairs."""
    return nnz * (z_bits + index_bits(n))


def graph_step_cost(z_bits: int, n: int, nnz_models: Sequence[int],
                    cached_flags: Optional[Sequence[bool]] = None) -> int:
    """Bits for one graph update contacting len(nnz_models) peers.

    Per peer: 3Z (loss value, degree, returned weight) plus the peer's
    sparse model; the model term is skipped for peers whose cached flag is
    set (already contacted with an unchanged model).
    """
    if cached_flags is None:
        cached_flags = [False] * len(nnz_models)
    total = 0
    for nnz, cached in zip(nnz_models, cached_flags):
        total += 3 * z_bits
        if not cached:
            total += model_resend_cost(z_bits, n, nnz)
    return total


@dataclass
class MemoryReport:
    """Dense and sparse-representation memory footprints, in bits."""

    dense_bits: int
    sparse_model_bits: Optional[int] = None


def memory_footprint(K: int, M: int, n: int, z_bits: int,
                     update_counts: Optional[Sequence[int]] = None) -> MemoryReport:
    """Network-wide memory cost Z (K n + 2 M (n + 1)) for dense models.

    Each user stores its own model, a copy of each neighbor's model and the
    incident weights.  When per-user update counts t_k are given, also
    reports the sparse alternative sum_k t_k (Z + ceil(log2 n)).
    """
    dense = z_bits * (K * n + 2 * M * (n + 1))
    sparse = None
    if update_counts is not None:
        sparse = sum(int(t) for t in update_counts) * (z_bits + index_bits(n))
    return MemoryReport(dense_bits=dense, sparse_model_bits=sparse)


def broadcast_reference_bits(K: int, z_bits: int) -> int:
    """Cost of sending all K(K-1)/2 weights to every user once: Z K^2 (K-1)/2."""
    return z_bits * K * K * (K - 1) // 2


# ---------------------------------------------------------------------------
# schedule and ledger
# ---------------------------------------------------------------------------

@dataclass
class ScheduleConfig:
    """Alternation schedule for the simulator.

    ``graph_steps_per_phase`` and ``kappa`` default to K and the
    hyperparameter value at run time when left as None.  ``prune_keep``
    restricts peer sampling to the closest-model candidates.
    """

    model_steps_per_phase: int = 100
    graph_steps_per_phase: Optional[int] = None
    total_phases: int = 20
    kappa: Optional[int] = None
    seed: int = 0
    prune_keep: Optional[int] = None
    cache_peer_models: bool = True
    gamma_reset_per_phase: bool = False
    initial_graph_steps: Optional[int] = None
    log_every: Optional[int] = None

    def validate(self) -> None:
        if self.model_steps_per_phase < 0 or self.total_phases < 0:
            raise ValueError("schedule counts must be nonnegative")
        for v in (self.graph_steps_per_phase, self.initial_graph_steps):
            if v is not None and v < 0:
                raise ValueError("schedule counts must be nonnegative")


class CommLedger:
    """Monotone bit counters for everything the protocol puts on the wire."""

    def __init__(self, K: int, n: int, z_bits: int):
        self.K = K
        self.n = n
        self.z_bits = z_bits
        self.model_bits = 0
        self.graph_bits = 0
        self.model_msgs = np.zeros(K, dtype=np.int64)
        self.graph_msgs = np.zeros(K, dtype=np.int64)

    def charge_model_step(self, k: int, neighbor_count: int) -> None:
        self.model_bits += model_step_cost(self.z_bits, self.n, neighbor_count)
        self.model_msgs[k] += neighbor_count

    def charge_model_resend(self, k: int, nnz: int) -> None:
        self.model_bits += model_resend_cost(self.z_bits, self.n, nnz)
        self.model_msgs[k] += 1

    def charge_graph_step(self, k: int, nnz_models: Sequence[int],
                          cached_flags: Sequence[bool]) -> None:
        self.graph_bits += graph_step_cost(self.z_bits, self.n, nnz_models,
                                           cached_flags)
        self.graph_msgs[k] += len(nnz_models)

    def total_bits(self) -> int:
        return self.model_bits + self.graph_bits

    def to_json_dict(self) -> dict:
        return {
            "model_bits": int(self.model_bits),
            "graph_bits": int(self.graph_bits),
            "model_msgs": self.model_msgs.tolist(),
            "graph_msgs": self.graph_msgs.tolist(),
            "Z": self.z_bits,
            "n": self.n,
        }


METRICS_COLUMNS = (
    "global_step", "phase", "f", "h", "gap", "train_acc", "test_acc",
    "edges", "mean_degree", "model_bits", "graph_bits",
)


class MetricsLog:
    """Per-interval metric rows plus diagnostic traces.

    ``rows`` carry exactly METRICS_COLUMNS; ``activations`` records the
    (kind, user) event sequence so runs can be replayed or audited, and
    ``model_steps``/``graph_steps`` per row let either step counter serve as
    a plotting axis.
    """

    def __init__(self):
        self.rows: list = []
        self.activations: list = []
        self.model_steps: list = []
        self.graph_steps: list = []

    def append(self, row: dict, model_steps: int, graph_steps: int) -> None:
        self.rows.append(tuple(row[c] for c in METRICS_COLUMNS))
        self.model_steps.append(model_steps)
        self.graph_steps.append(graph_steps)

    def column(self, name: str) -> list:
        i = METRICS_COLUMNS.index(name)
        return [r[i] for r in self.rows]

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_COLUMNS)
            writer.writerows(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricsLog) and self.rows == other.rows


# ---------------------------------------------------------------------------
# the simulator
# ---------------------------------------------------------------------------

class Simulator:
    """Sequential, deterministic reference implementation of the protocol.

    The (user, action) sequence is a pure function of the seed and the
    schedule: three independent RNG streams (model activations, graph
    activations, peer sampling) are spawned from the seed in a fixed order.

    Each user's model updates read only that user's mailbox of received
    neighbor models; the mailbox is kept current by immediate delivery and
    by full-model exchanges whenever an edge appears.
    """

    def __init__(self, dataset: PartitionedDataset, stumps: StumpEnsemble,
                 hyper: Hyperparams, sched: ScheduleConfig,
                 graph: Optional[CollaborationGraph] = None):
        sched.validate()
        dataset.validate()
        self.dataset = dataset
        self.stumps = stumps
        self.hyper = hyper
        self.sched = sched
        self.K = dataset.K
        self.n = stumps.n
        self.conf = confidences(dataset)
        self.margins = [margin_matrix(u, stumps) for u in dataset.users]
        self.H_test = [stumps.evaluate(u.test_x) if u.test_x is not None else None
                       for u in dataset.users]

        ss = np.random.SeedSequence(sched.seed)
        kids = ss.spawn(3)
        self.model_rng = np.random.Generator(np.random.PCG64(kids[0]))
        self.graph_rng = np.random.Generator(np.random.PCG64(kids[1]))
        self.peer_rng = np.random.Generator(np.random.PCG64(kids[2]))

        self.graph = graph.copy() if graph is not None else CollaborationGraph(self.K)
        self.state = boost.ModelState(
            [SparseModel.zeros(self.n, hyper.beta) for _ in range(self.K)], t=0)
        self.ledger = CommLedger(self.K, self.n, hyper.z_bits)
        self.log = MetricsLog()
        self.gamma_t = 0
        self.model_steps = 0
        self.graph_steps = 0
        self.phase = 0

        # per-user mailbox of neighbor models and graph-phase contact cache
        self.copies: list = [dict() for _ in range(self.K)]
        self.contacted: list = [dict() for _ in range(self.K)]
        self.fresh_per_step: list = []
        self._seed_mailboxes_for_edges(list(self.graph.edges()), charge=True)

    # -- mailbox maintenance -------------------------------------------------

    def _seed_mailboxes_for_edges(self, edges, charge: bool) -> None:
        for k, l, _w in edges:
            self.copies[k][l] = self.state.coef(l)
            self.copies[l][k] = self.state.coef(k)
            if charge:
                self.ledger.charge_model_resend(k, self.state.models[k].nnz())
                self.ledger.charge_model_resend(l, self.state.models[l].nnz())

    def _sync_mailboxes(self, old_edges: set) -> None:
        """Reconcile mailboxes with an updated edge set, charging new sends."""
        new_edges = {(k, l) for k, l, _ in self.graph.edges()}
        for k, l in new_edges - old_edges:
            self.copies[k][l] = self.state.coef(l)
            self.copies[l][k] = self.state.coef(k)
            self.ledger.charge_model_resend(k, self.state.models[k].nnz())
            self.ledger.charge_model_resend(l, self.state.models[l].nnz())
        for k, l in old_edges - new_edges:
            self.copies[k].pop(l, None)
            self.copies[l].pop(k, None)

    # -- phases ---------------------------------------------------------------

    def _model_step(self, local_mode: bool, kind: str) -> None:
        k = int(self.model_rng.integers(self.K))
        model = self.state.models[k]
        if local_mode:
            grad = boost.gradient_from_parts(
                self.margins[k], model.coef, 1.0, float(self.conf[k]), 0.0,
                np.zeros(self.n))
        else:
            nbr_sum = np.zeros(self.n)
            for l in self.copies[k]:
                nbr_sum += self.graph.weight(k, l) * self.copies[k][l]
            grad = boost.gradient_from_parts(
                self.margins[k], model.coef, self.graph.degree(k),
                float(self.conf[k]), self.hyper.mu1, nbr_sum)
        gamma = boost.step_size(self.gamma_t, self.K)
        new_model = boost.fw_step(model, boost.fw_lmo(grad, model.l1_budget), gamma)
        self.state.models[k] = new_model
        self.state.t += 1
        self.gamma_t += 1
        self.model_steps += 1
        neighbors = self.graph.neighbors(k)
        for l in neighbors:
            self.copies[l][k] = new_model.coef
        self.ledger.charge_model_step(k, len(neighbors))
        self.log.activations.append((kind, k))

    def model_phase(self, steps: int, local_mode: bool = False,
                    kind: str = "model") -> None:
        for _ in range(steps):
            self._model_step(local_mode, kind)

    def _graph_ctx(self) -> graphlearn.GraphObjectiveCtx:
        loss_terms = np.array([
            float(self.conf[k]) * boost.local_loss(self.margins[k], self.state.models[k])
            for k in range(self.K)
        ])
        return graphlearn.GraphObjectiveCtx(
            loss_terms=loss_terms,
            model_coefs=[m.coef for m in self.state.models],
            mu1=self.hyper.mu1, mu2=self.hyper.mu2,
            lam=self.hyper.lam, delta=self.hyper.delta)

    def _graph_step(self, ctx: graphlearn.GraphObjectiveCtx, kappa: int) -> None:
        k = int(self.graph_rng.integers(self.K))
        candidates = None
        if self.sched.prune_keep is not None:
            candidates = graphlearn.prune_candidates(
                k, ctx.coef_matrix(), self.sched.prune_keep)
        peers = graphlearn.peer_sample(k, kappa, self.K, self.peer_rng,
                                       candidates=candidates)
        nnz = [self.state.models[l].nnz() for l in peers]
        versions = [self.state.models[l].update_count for l in peers]
        cached_flags = []
        fresh = 0
        for l, v in zip(peers, versions):
            seen_version = self.contacted[k].get(l)
            if seen_version is None:
                fresh += 1
            cached_flags.append(self.sched.cache_peer_models and seen_version == v)
            self.contacted[k][l] = v
        self.fresh_per_step.append(fresh)
        self.ledger.charge_graph_step(k, nnz, cached_flags)
        graphlearn.pcd_update(self.graph, k, peers, ctx)
        self.graph_steps += 1
        self.log.activations.append(("graph", k))

    def graph_phase(self, steps: int, kappa: int) -> None:
        ctx = self._graph_ctx()
        old_edges = {(k, l) for k, l, _ in self.graph.edges()}
        for _ in range(steps):
            self._graph_step(ctx, kappa)
        self._sync_mailboxes(old_edges)

    # -- metrics ---------------------------------------------------------------

    def _accuracies(self) -> tuple:
        train, test = [], []
        for k in range(self.K):
            marg = self.margins[k] @ self.state.coef(k)
            y = self.dataset.users[k].train_y
            ok = (marg > 0) | ((marg == 0) & (y > 0))
            train.append(float(np.mean(ok)))
            if self.H_test[k] is not None:
                score = self.H_test[k] @ self.state.coef(k)
                pred = sign_pm(score)
                test.append(float(np.mean(pred == self.dataset.users[k].test_y)))
        train_acc = float(np.mean(train)) if train else float("nan")
        test_acc = float(np.mean(test)) if test else float("nan")
        return train_acc, test_acc

    def log_row(self) -> None:
        f = boost.objective_f(self.state, self.graph, self.margins, self.conf,
                              self.hyper.mu1)
        gap = boost.duality_gap(self.state, self.graph, self.margins, self.conf,
                                self.hyper.mu1)
        h = graphlearn.graph_objective(self.graph, self._graph_ctx())
        train_acc, test_acc = self._accuracies()
        self.log.append({
            "global_step": self.model_steps + self.graph_steps,
            "phase": self.phase,
            "f": f, "h": h, "gap": gap,
            "train_acc": train_acc, "test_acc": test_acc,
            "edges": self.graph.edge_count,
            "mean_degree": self.graph.mean_degree(),
            "model_bits": self.ledger.model_bits,
            "graph_bits": self.ledger.graph_bits,
        }, self.model_steps, self.graph_steps)

    def certificates(self) -> boost.FwCertificates:
        f = boost.objective_f(self.state, self.graph, self.margins, self.conf,
                              self.hyper.mu1)
        gap = boost.duality_gap(self.state, self.graph, self.margins, self.conf,
                                self.hyper.mu1)
        norms = [boost.margin_one_norm(A) for A in self.margins]
        curv = boost.curvature_bound(self.graph, self.conf, norms,
                                     self.hyper.beta, self.hyper.mu1)
        zero_state = boost.ModelState(
            [SparseModel.zeros(self.n, self.hyper.beta) for _ in range(self.K)])
        p0 = boost.duality_gap(zero_state, self.graph, self.margins, self.conf,
                               self.hyper.mu1)
        return boost.FwCertificates(objective=f, gap=gap, curvature_bound=curv,
                                    initial_gap=p0)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def run_alternating(dataset: PartitionedDataset, stumps: StumpEnsemble,
                    hyper: Hyperparams, sched: ScheduleConfig,
                    initial_graph: Optional[CollaborationGraph] = None,
                    on_phase_end=None):
    """Full alternating pipeline.

    Without an input graph: (i) train purely local models for
    model_steps_per_phase * K steps (unit degree, no collaboration), (ii) run
    one initial graph phase from those models starting at w = 0 (its budget
    ``initial_graph_steps`` defaults to 100 activations per user, enough for
    the linearly converging graph subproblem to settle), then (iii) alternate
    [model phase, graph phase] for ``total_phases``, continuing from the
    local models.  With ``initial_graph`` given, stages (i) and (ii) are
    skipped and the models start at zero.

    ``on_phase_end(sim, phase)`` is invoked at every phase boundary, e.g. to
    write checkpoints.  Returns (ModelState, CollaborationGraph,
    MetricsLog); deterministic given the seed.
    """
    sim = Simulator(dataset, stumps, hyper, sched, graph=initial_graph)
    kappa = sched.kappa if sched.kappa is not None else hyper.kappa
    graph_steps = (sched.graph_steps_per_phase
                   if sched.graph_steps_per_phase is not None else sim.K)

    if initial_graph is None:
        pretrain = sched.model_steps_per_phase * sim.K
        sim.model_phase(pretrain, local_mode=True, kind="pretrain")
        if pretrain > 0:
            sim.log_row()
        initial_steps = (sched.initial_graph_steps
                         if sched.initial_graph_steps is not None
                         else 100 * sim.K)
        if graph_steps > 0 and initial_steps > 0:
            sim.graph_phase(initial_steps, kappa)
            sim.log_row()
        if on_phase_end is not None:
            on_phase_end(sim, 0)

    for phase in range(1, sched.total_phases + 1):
        sim.phase = phase
        if sched.gamma_reset_per_phase:
            sim.gamma_t = 0
        if sched.model_steps_per_phase > 0:
            sim.model_phase(sched.model_steps_per_phase)
            sim.log_row()
        if graph_steps > 0:
            sim.graph_phase(graph_steps, kappa)
            sim.log_row()
        if on_phase_end is not None:
            on_phase_end(sim, phase)
    return sim.state, sim.graph, sim.log


def run_fixed_graph(dataset: PartitionedDataset, stumps: StumpEnsemble,
                    graph: Optional[CollaborationGraph], hyper: Hyperparams,
                    steps: int, seed: int, log_every: Optional[int] = None,
                    local_mode: bool = False):
    """Model learning only; the graph is never mutated.

    ``local_mode`` forces unit degrees and drops the smoothness term, which
    turns the run into independent per-user training (the graph is ignored).

    Returns (ModelState, MetricsLog).
    """
    sched = ScheduleConfig(seed=seed, total_phases=0)
    sim = Simulator(dataset, stumps, hyper, sched,
                    graph=None if local_mode else graph)
    if log_every is None:
        log_every = steps if steps > 0 else 1
    done = 0
    while done < steps:
        chunk = min(log_every, steps - done)
        sim.phase += 1
        sim.model_phase(chunk, local_mode=local_mode)
        sim.log_row()
        done += chunk
    return sim.state, sim.log


@dataclass
class GraphLearnResult:
    """Outcome of a pure graph-learning run."""

    graph: CollaborationGraph
    ledger: CommLedger
    steps_run: int
    reached: bool
    h_trace: list
    bits_trace: list
    fresh_trace: list


def run_graph_learning(model_coefs: Sequence[np.ndarray],
                       loss_terms: Sequence[float], hyper: Hyperparams,
                       *, kappa: int, steps: Optional[int] = None,
                       target_h: Optional[float] = None,
                       max_steps: int = 200_000, seed: int = 0,
                       w0: Optional[CollaborationGraph] = None,
                       cached: bool = True,
                       prune_keep: Optional[int] = None,
                       trace_every: int = 1) -> GraphLearnResult:
    """Randomized block graph learning from fixed models.

    Runs until ``steps`` activations have executed, or until the objective
    h(w) drops to ``target_h`` (whichever is configured; ``max_steps`` caps
    the target mode).  The objective is maintained incrementally in O(kappa)
    per step and re-synced against a full evaluation every 1000 steps.
    """
    K = len(model_coefs)
    n = len(model_coefs[0])
    ctx = graphlearn.GraphObjectiveCtx(
        loss_terms=np.asarray(loss_terms, dtype=float),
        model_coefs=list(model_coefs),
        mu1=hyper.mu1, mu2=hyper.mu2, lam=hyper.lam, delta=hyper.delta)
    graph = w0.copy() if w0 is not None else CollaborationGraph(K)
    ledger = CommLedger(K, n, hyper.z_bits)
    nnz = [int(np.count_nonzero(c)) for c in model_coefs]

    ss = np.random.SeedSequence(seed)
    kids = ss.spawn(2)
    user_rng = np.random.Generator(np.random.PCG64(kids[0]))
    peer_rng = np.random.Generator(np.random.PCG64(kids[1]))

    contacted: list = [dict() for _ in range(K)]
    h = graphlearn.graph_objective(graph, ctx)
    h_trace, bits_trace, fresh_trace = [], [], []
    limit = steps if steps is not None else max_steps
    reached = target_h is not None and h <= target_h
    t = 0
    while t < limit and not (target_h is not None and reached):
        k = int(user_rng.integers(K))
        candidates = None
        if prune_keep is not None:
            candidates = graphlearn.prune_candidates(k, ctx.coef_matrix(), prune_keep)
        peers = graphlearn.peer_sample(k, kappa, K, peer_rng, candidates=candidates)

        fresh = sum(1 for l in peers if l not in contacted[k])
        cached_flags = [cached and (l in contacted[k]) for l in peers]
        for l in peers:
            contacted[k][l] = 0
        ledger.charge_graph_step(k, [nnz[l] for l in peers], cached_flags)

        # incremental objective update from the touched block
        old_w = np.array([graph.weight(k, l) for l in peers])
        old_dk = graph.degree(k)
        old_dl = np.array([graph.degree(l) for l in peers])
        new_w = graphlearn.pcd_update(graph, k, peers, ctx)
        dw = new_w - old_w
        h += float(dw @ (ctx.loss_terms[k] + ctx.loss_terms[np.asarray(peers)]))
        h += 0.5 * ctx.mu1 * float(dw @ np.array([ctx.sq_dist(k, l) for l in peers]))
        h += ctx.mu2 * ctx.lam * float(new_w @ new_w - old_w @ old_w)
        h -= ctx.mu2 * (math.log(graph.degree(k) + ctx.delta)
                        - math.log(old_dk + ctx.delta))
        for i, l in enumerate(peers):
            h -= ctx.mu2 * (math.log(graph.degree(l) + ctx.delta)
                            - math.log(old_dl[i] + ctx.delta))

        t += 1
        if t % 1000 == 0:
            h = graphlearn.graph_objective(graph, ctx)
        if t % trace_every == 0:
            h_trace.append(h)
            bits_trace.append(ledger.graph_bits)
            fresh_trace.append(fresh)
        if target_h is not None and h <= target_h:
            h = graphlearn.graph_objective(graph, ctx)
            reached = h <= target_h
    return GraphLearnResult(graph=graph, ledger=ledger, steps_run=t,
                            reached=bool(reached), h_trace=h_trace,
                            bits_trace=bits_trace, fresh_trace=fresh_trace)
