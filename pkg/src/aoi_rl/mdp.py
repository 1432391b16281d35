"""Exact treatment of the scheduling MDP on the enumerated state space.

State indexing, the factored transition kernel, relative value iteration
for the average-cost (age) and average-reward (throughput) objectives, an
exhaustive policy-enumeration oracle for tiny instances, and exact policy
evaluation through the stationary distribution of the induced chain.

The kernel is kept in factored form: the battery/AoI successor of a
(state, action) pair is deterministic, and the next channel levels are an
independent product of per-link pmfs. Rows of the full transition matrix
are materialized on demand only.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import splu, spsolve

from .channel import FadingQuantizer
from .env import HARVEST, SystemConfig, action_name, energy_tables, parse_action
from .errors import (
    ContractError,
    ConvergenceError,
    InfeasibleActionError,
    SizeLimitError,
)

DEFAULT_STATE_LIMIT = 20_000_000


@dataclass(frozen=True)
class StateIndexer:
    """Bijection between system states and dense indices.

    Variables are stored 0-based internally: battery quanta as-is, AoI as
    value-1, channel levels as level-1. For the age objective the variable
    order is (b_i, A_i, g_i, h_i) per source; the throughput objective
    (single source) drops the AoI axis.
    """

    objective: str  # "age" | "throughput"
    dims: tuple[int, ...]
    var_names: tuple[str, ...]
    num_sources: int

    @property
    def total_states(self) -> int:
        return int(np.prod([int(d) for d in self.dims], dtype=object))

    @property
    def vars_per_source(self) -> int:
        return 4 if self.objective == "age" else 3

    def state_to_index(self, values) -> int:
        return int(np.ravel_multi_index(tuple(values), self.dims))

    def index_to_state(self, index: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(index, self.dims))

    def grids(self) -> list[np.ndarray]:
        """One flat array per variable, over all dense indices."""
        return [g.astype(np.int64) for g in np.unravel_index(np.arange(self.total_states), self.dims)]

    def canonical_start_index(self) -> int:
        """Full batteries, AoI 1, lowest channel levels."""
        values = []
        for k, name in enumerate(self.var_names):
            values.append(self.dims[k] - 1 if name.startswith("b_") else 0)
        return self.state_to_index(values)


def enumerate_states(
    config: SystemConfig, objective: str = "age", limit: int = DEFAULT_STATE_LIMIT
) -> StateIndexer:
    if objective not in ("age", "throughput"):
        raise ValueError(f"unknown objective {objective!r}")
    if objective == "throughput" and config.num_sources != 1:
        raise ContractError("throughput objective is defined for a single source only")
    dims: list[int] = []
    names: list[str] = []
    for i, spec in enumerate(config.sources, start=1):
        dims.append(spec.battery_quanta + 1)
        names.append(f"b_{i}")
        if objective == "age":
            dims.append(spec.aoi_cap)
            names.append(f"A_{i}")
        dims.append(spec.link.levels_downlink)
        names.append(f"g_{i}")
        dims.append(spec.link.levels_uplink)
        names.append(f"h_{i}")
    total = int(np.prod([int(d) for d in dims], dtype=object))
    if total > limit:
        raise SizeLimitError(
            f"state space has {total} states, exceeding the limit of {limit}"
        )
    return StateIndexer(
        objective=objective,
        dims=tuple(dims),
        var_names=tuple(names),
        num_sources=config.num_sources,
    )


def _strides(dims) -> np.ndarray:
    s = np.ones(len(dims), dtype=np.int64)
    for k in range(len(dims) - 2, -1, -1):
        s[k] = s[k + 1] * dims[k + 1]
    return s


class TransitionKernel:
    """Factored kernel plus per-(state, action) stage cost or reward."""

    def __init__(self, config: SystemConfig, indexer: StateIndexer):
        self.config = config
        self.indexer = indexer
        self.objective = indexer.objective
        n = indexer.total_states
        N = config.num_sources
        self.num_actions = N + 1 if self.objective == "age" else 2
        dims = np.array(indexer.dims, dtype=np.int64)
        fstr = _strides(dims)
        vps = indexer.vars_per_source
        grids = indexer.grids()

        e_h, e_t = energy_tables(config)
        self.e_h, self.e_t = e_h, e_t

        b = [grids[vps * i] for i in range(N)]
        if self.objective == "age":
            A = [grids[vps * i + 1] for i in range(N)]
            g = [grids[vps * i + 2] for i in range(N)]
            h = [grids[vps * i + 3] for i in range(N)]
        else:
            A = None
            g = [grids[vps * i + 1] for i in range(N)]
            h = [grids[vps * i + 2] for i in range(N)]

        # Channel groups: per source either two independent axes (g then h)
        # or, with reciprocal links, one group whose support is the diagonal
        # g = h. Each group is (axes, per-combo level rows, combo pmf).
        chan_groups: list[tuple[tuple[int, ...], np.ndarray, np.ndarray]] = []
        chan_axes: list[int] = []
        for i in range(N):
            off = vps * i + (2 if self.objective == "age" else 1)
            down = config.downlink_quantizers[i].level_pmf
            up = config.uplink_quantizers[i].level_pmf
            if config.correlated_links:
                L = len(down)
                diag = np.arange(L, dtype=np.int64)
                chan_groups.append(((off, off + 1), np.stack([diag, diag]), down))
            else:
                chan_groups.append(((off,), np.arange(len(down), dtype=np.int64)[None, :], down))
                chan_groups.append(((off + 1,), np.arange(len(up), dtype=np.int64)[None, :], up))
            chan_axes.extend((off, off + 1))
        self._chan_groups = chan_groups
        self._chan_axes = chan_axes
        offsets = np.zeros(1, dtype=np.int64)
        probs = np.ones(1)
        for axes, levels, pmf in chan_groups:
            step_off = np.zeros(levels.shape[1], dtype=np.int64)
            for k, ax in enumerate(axes):
                step_off += levels[k] * fstr[ax]
            offsets = (offsets[:, None] + step_off[None, :]).ravel()
            probs = (probs[:, None] * pmf[None, :]).ravel()
        self.chan_offsets = offsets
        self.chan_probs = probs

        # core (non-channel) dims used during the RVIA channel contraction
        core_axes = [k for k in range(len(indexer.dims)) if k not in set(chan_axes)]
        self._core_axes = core_axes
        cdims = dims[core_axes]
        cstr = _strides(cdims)

        feasible = np.zeros((n, self.num_actions), dtype=bool)
        feasible[:, HARVEST] = True
        succ_small = np.full((n, self.num_actions), -1, dtype=np.int64)
        succ_full = np.full((n, self.num_actions), -1, dtype=np.int64)

        caps = np.array([s.battery_quanta for s in config.sources], dtype=np.int64)
        aoi_caps = np.array([s.aoi_cap for s in config.sources], dtype=np.int64)

        def encode(next_b, next_A):
            """Flat core-space and full-space contributions of (b', A')."""
            small = np.zeros(n, dtype=np.int64)
            full = np.zeros(n, dtype=np.int64)
            for i in range(N):
                ci = 2 * i if self.objective == "age" else i
                small += next_b[i] * cstr[ci]
                full += next_b[i] * fstr[vps * i]
                if self.objective == "age":
                    small += next_A[i] * cstr[ci + 1]
                    full += next_A[i] * fstr[vps * i + 1]
            return small, full

        # harvest
        hb = [np.minimum(caps[i], b[i] + e_h[i][g[i]]) for i in range(N)]
        hA = [np.minimum(aoi_caps[i] - 1, A[i] + 1) for i in range(N)] if A is not None else None
        succ_small[:, HARVEST], succ_full[:, HARVEST] = encode(hb, hA)

        # transmit from source j
        for j in range(N):
            a = j + 1
            cost_j = e_t[j][h[j]]
            feas = b[j] >= cost_j
            feasible[:, a] = feas
            tb = [b[i].copy() for i in range(N)]
            tb[j] = b[j] - np.where(feas, cost_j, 0)
            if A is not None:
                tA = [np.minimum(aoi_caps[i] - 1, A[i] + 1) for i in range(N)]
                tA[j] = np.zeros(n, dtype=np.int64)
            else:
                tA = None
            small, full = encode(tb, tA)
            succ_small[:, a] = np.where(feas, small, -1)
            succ_full[:, a] = np.where(feas, full, -1)

        self.feasible = feasible
        self.succ_small = succ_small
        self.succ_full = succ_full
        self._core_size = int(np.prod(cdims)) if len(cdims) else 1

        if self.objective == "age":
            weights = np.array([s.weight for s in config.sources])
            cost = np.zeros(n)
            for i in range(N):
                cost += weights[i] * (A[i] + 1)
            self.cost = cost
            self.reward_sa = None
        else:
            self.cost = None
            reward = np.zeros((n, 2))
            reward[:, 1] = np.where(feasible[:, 1], config.packet_bits, 0.0)
            self.reward_sa = reward

    @property
    def total_states(self) -> int:
        return self.indexer.total_states

    @property
    def start_index(self) -> int:
        return self.indexer.canonical_start_index()

    def stage(self, s: int, a: int) -> float:
        if self.objective == "age":
            return float(self.cost[s])
        return float(self.reward_sa[s, a])

    def stage_matrix(self) -> np.ndarray:
        if self.objective == "age":
            return np.broadcast_to(self.cost[:, None], (self.total_states, self.num_actions))
        return self.reward_sa

    def contract_channels(self, values: np.ndarray) -> np.ndarray:
        """Expected value over next channel levels, flat over the core dims.

        Groups are contracted from the highest axis down so that removing a
        group's axes leaves the positions of lower axes unchanged. Reciprocal
        links contract the (g, h) pair over its diagonal support.
        """
        v = values.reshape(self.indexer.dims)
        for axes, _, pmf in sorted(self._chan_groups, key=lambda t: -t[0][0]):
            if len(axes) == 2:
                v = np.diagonal(v, axis1=axes[0], axis2=axes[1])  # diag -> last axis
                v = np.tensordot(v, pmf, axes=([v.ndim - 1], [0]))
            else:
                v = np.tensordot(v, pmf, axes=([axes[0]], [0]))
        return v.ravel()

    def row(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Sparse successor distribution of one (state, action) pair."""
        if not self.feasible[s, a]:
            raise InfeasibleActionError(
                f"action {action_name(a)} infeasible in state {self.indexer.index_to_state(s)}"
            )
        return self.succ_full[s, a] + self.chan_offsets, self.chan_probs

    def feasible_action_list(self, s: int) -> list[int]:
        return [a for a in range(self.num_actions) if self.feasible[s, a]]


def build_kernel(
    config: SystemConfig, indexer: StateIndexer, objective: Optional[str] = None
) -> TransitionKernel:
    if objective is not None and objective != indexer.objective:
        raise ContractError(
            f"indexer was enumerated for {indexer.objective!r}, not {objective!r}"
        )
    return TransitionKernel(config, indexer)


@dataclass
class ValueTable:
    values: np.ndarray
    gain: float


@dataclass
class PolicyTable:
    actions: np.ndarray
    gain: float


def solve_rvia(
    kernel: TransitionKernel,
    epsilon: float = 1e-9,
    max_sweeps: int = 200_000,
    initial_values: Optional[np.ndarray] = None,
    reference_state: int = 0,
    damping: float = 0.5,
) -> tuple[ValueTable, PolicyTable]:
    """Relative value iteration until the Bellman-update span drops below
    ``epsilon``. Gain is the midpoint of the final update differences,
    which bracket the optimal average for any iterate.

    The damped update mixes the previous iterate back in; policy-induced
    chains here can be periodic (deterministic harvest/transmit cycles),
    and undamped value iteration would oscillate on them.
    """
    n = kernel.total_states
    minimize = kernel.objective == "age"
    v = np.zeros(n) if initial_values is None else np.asarray(initial_values, dtype=float).copy()
    stage = kernel.stage_matrix()
    bad = np.inf if minimize else -np.inf
    q = None
    for _ in range(max_sweeps):
        w = kernel.contract_channels(v)
        q = stage + w[kernel.succ_small]
        q = np.where(kernel.feasible, q, bad)
        tv = q.min(axis=1) if minimize else q.max(axis=1)
        diff = tv - v
        lo, hi = diff.min(), diff.max()
        v = (1.0 - damping) * v + damping * (tv - tv[reference_state])
        # span tolerance is relative to the gain magnitude once it exceeds
        # unity (throughput rewards are in bits and far above fp resolution
        # at an absolute 1e-9)
        if hi - lo < epsilon * max(1.0, 0.5 * abs(hi + lo)):
            gain = 0.5 * (hi + lo)
            actions = q.argmin(axis=1) if minimize else q.argmax(axis=1)
            return ValueTable(values=v, gain=float(gain)), PolicyTable(
                actions=actions.astype(np.int64), gain=float(gain)
            )
    raise ConvergenceError(
        f"no convergence after {max_sweeps} sweeps; current span {hi - lo:.3e}"
    )


# ---------------------------------------------------------------------------
# exact long-run averages of policy-induced chains


def _class_gain(P: sp.csr_matrix, members: np.ndarray, stage: np.ndarray) -> float:
    """Average stage value under the stationary distribution of one
    recurrent class."""
    m = len(members)
    if m == 1:
        return float(stage[members[0]])
    sub = P[members][:, members]
    if m <= 2000:
        mat = sub.T.toarray() - np.eye(m)
        mat[-1, :] = 1.0
        rhs = np.zeros(m)
        rhs[-1] = 1.0
        pi = np.linalg.solve(mat, rhs)
    else:
        mat = (sub.T - sp.identity(m)).tolil()
        mat[-1, :] = 1.0
        rhs = np.zeros(m)
        rhs[-1] = 1.0
        pi = spsolve(mat.tocsc(), rhs)
    return float(pi @ stage[members])


def markov_chain_gain(P: sp.csr_matrix, stage: np.ndarray, start: int) -> float:
    """Long-run average stage value of a Markov chain started at ``start``.

    Gains of the recurrent classes reachable from the start are weighted by
    their absorption probabilities.
    """
    n = P.shape[0]
    _, labels = connected_components(P, directed=True, connection="strong")
    rows_of_nz = np.repeat(np.arange(n), np.diff(P.indptr))
    leaving = labels[rows_of_nz] != labels[P.indices]
    open_classes = set(np.unique(labels[rows_of_nz[leaving]]))
    if labels[start] not in open_classes:
        members = np.flatnonzero(labels == labels[start])
        return _class_gain(P, members, stage)

    order = breadth_first_order(P, start, directed=True, return_predecessors=False)
    reach = np.zeros(n, dtype=bool)
    reach[order] = True
    closed_per_state = ~np.isin(labels, sorted(open_classes))
    closed_reach = sorted(set(labels[reach & closed_per_state]))

    trans_idx = np.flatnonzero(reach & ~closed_per_state)
    pos = {s: k for k, s in enumerate(trans_idx)}
    P_tt = P[trans_idx][:, trans_idx]
    lu = splu(sp.identity(len(trans_idx), format="csc") - P_tt.tocsc())
    gain = 0.0
    for cls in closed_reach:
        members = np.flatnonzero(labels == cls)
        rhs = np.asarray(P[trans_idx][:, members].sum(axis=1)).ravel()
        absorb = lu.solve(rhs)
        p = float(absorb[pos[start]])
        if p > 0:
            gain += p * _class_gain(P, members, stage)
    return gain


def induced_chain(kernel: TransitionKernel, policy: np.ndarray, nnz_limit: int = 50_000_000):
    """Sparse transition matrix and stage vector of the policy's chain."""
    policy = np.asarray(policy, dtype=np.int64)
    n = kernel.total_states
    if policy.shape != (n,):
        raise ContractError(f"policy has shape {policy.shape}, expected ({n},)")
    feas = kernel.feasible[np.arange(n), policy]
    if not feas.all():
        s = int(np.flatnonzero(~feas)[0])
        raise InfeasibleActionError(
            f"policy takes {action_name(int(policy[s]))} in state "
            f"{kernel.indexer.index_to_state(s)} where it is infeasible"
        )
    m = len(kernel.chan_offsets)
    if n * m > nnz_limit:
        raise SizeLimitError(f"induced chain would hold {n * m} nonzeros")
    base = kernel.succ_full[np.arange(n), policy]
    cols = (base[:, None] + kernel.chan_offsets[None, :]).ravel()
    rows = np.repeat(np.arange(n), m)
    data = np.tile(kernel.chan_probs, n)
    P = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    if kernel.objective == "age":
        stage = kernel.cost
    else:
        stage = kernel.reward_sa[np.arange(n), policy]
    return P, stage


def evaluate_policy(kernel: TransitionKernel, policy: np.ndarray) -> float:
    """Exact long-run average cost/reward of a deterministic policy,
    started from the full-battery / fresh-information state."""
    P, stage = induced_chain(kernel, policy)
    return markov_chain_gain(P, stage, kernel.start_index)


# ---------------------------------------------------------------------------
# brute-force oracle (independent of the RVIA path)


def _bool_closure(adj: np.ndarray) -> np.ndarray:
    reach = adj | np.eye(adj.shape[0], dtype=bool)
    while True:
        nxt = reach @ reach
        if (nxt == reach).all():
            return reach
        reach = nxt


def _dense_chain_gain(P: np.ndarray, stage: np.ndarray, start: int) -> float:
    """Long-run average of a small dense chain from ``start``. Written
    independently of the sparse machinery above."""
    n = P.shape[0]
    reach = _bool_closure(P > 0)
    mutual = reach & reach.T
    recurrent = np.all(~reach | reach.T, axis=1)

    assigned = np.zeros(n, dtype=bool)
    classes = []
    for s in range(n):
        if recurrent[s] and not assigned[s]:
            members = np.flatnonzero(mutual[s] & recurrent)
            assigned[members] = True
            classes.append(members)

    def stationary_gain(members):
        m = len(members)
        if m == 1:
            return float(stage[members[0]])
        mat = P[np.ix_(members, members)].T - np.eye(m)
        mat[-1, :] = 1.0
        rhs = np.zeros(m)
        rhs[-1] = 1.0
        pi = np.linalg.solve(mat, rhs)
        return float(pi @ stage[members])

    if recurrent[start]:
        for members in classes:
            if start in members:
                return stationary_gain(members)

    trans = np.flatnonzero(~recurrent)
    pos = {s: k for k, s in enumerate(trans)}
    A = np.eye(len(trans)) - P[np.ix_(trans, trans)]
    gain = 0.0
    for members in classes:
        if not reach[start, members].any():
            continue
        rhs = P[np.ix_(trans, members)].sum(axis=1)
        absorb = np.linalg.solve(A, rhs)
        p = float(absorb[pos[start]])
        if p > 0:
            gain += p * stationary_gain(members)
    return gain


def brute_force_oracle(kernel, max_states: int = 12, max_actions: int = 3):
    """Enumerate every stationary deterministic feasible policy, evaluate
    each induced chain exactly, and return the best (gain, PolicyTable).

    Works against any object exposing total_states, num_actions, feasible,
    row(s, a), stage(s, a), objective, and start_index.
    """
    n = kernel.total_states
    A = kernel.num_actions
    if n > max_states:
        raise SizeLimitError(f"oracle limited to {max_states} states, got {n}")
    if A > max_actions:
        raise SizeLimitError(f"oracle limited to {max_actions} actions, got {A}")

    dense = np.zeros((n, A, n))
    stage = np.zeros((n, A))
    choices = []
    for s in range(n):
        acts = [a for a in range(A) if kernel.feasible[s, a]]
        choices.append(acts)
        for a in acts:
            cols, probs = kernel.row(s, a)
            np.add.at(dense[s, a], np.asarray(cols), np.asarray(probs))
            stage[s, a] = kernel.stage(s, a)

    minimize = kernel.objective == "age"
    start = kernel.start_index
    best_gain = None
    best_policy = None
    idx = np.arange(n)
    for assignment in itertools.product(*choices):
        pol = np.array(assignment, dtype=np.int64)
        g = _dense_chain_gain(dense[idx, pol], stage[idx, pol], start)
        if best_gain is None or (g < best_gain if minimize else g > best_gain):
            best_gain = g
            best_policy = pol
    return float(best_gain), PolicyTable(actions=best_policy, gain=float(best_gain))


# ---------------------------------------------------------------------------
# CSV export / import of policies and value tables


def export_policy_csv(
    path,
    indexer: StateIndexer,
    policy: np.ndarray,
    values: Optional[np.ndarray] = None,
) -> None:
    """Columns: state variables (AoI and levels 1-based), action, value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*indexer.var_names, "action", "value"])
        for s in range(indexer.total_states):
            state = indexer.index_to_state(s)
            display = [
                v if name.startswith("b_") else v + 1
                for name, v in zip(indexer.var_names, state)
            ]
            val = "" if values is None else repr(float(values[s]))
            writer.writerow([*display, action_name(int(policy[s])), val])


def load_policy_csv(path, indexer: StateIndexer):
    """Inverse of export_policy_csv; returns (policy, values-or-None)."""
    policy = np.full(indexer.total_states, -1, dtype=np.int64)
    values = np.full(indexer.total_states, np.nan)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[: len(indexer.var_names)]) != indexer.var_names:
            raise ContractError(
                f"policy file columns {header} do not match indexer {indexer.var_names}"
            )
        any_values = False
        for row in reader:
            raw = [int(x) for x in row[: len(indexer.var_names)]]
            state = [
                v if name.startswith("b_") else v - 1
                for name, v in zip(indexer.var_names, raw)
            ]
            s = indexer.state_to_index(state)
            policy[s] = parse_action(row[len(indexer.var_names)])
            if row[len(indexer.var_names) + 1] != "":
                values[s] = float(row[len(indexer.var_names) + 1])
                any_values = True
    if (policy < 0).any():
        raise ContractError("policy file does not cover the full state space")
    return policy, (values if any_values else None)
