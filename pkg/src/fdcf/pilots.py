"""Pilot assignment: binary heaps, the load-balancing greedy, and baselines.

The greedy minimizes the worst accumulated pilot weight: UEs are delivered in
non-increasing effective-weight order by a max heap, the first tau of them
seed distinct pilots through a seeded random permutation, and every later UE
joins the currently lightest pilot tracked by a min heap (peek, then
replace-root-and-sift-down). This is longest-processing-time scheduling onto
tau identical machines, so the classical (4/3 - 1/(3 tau)) makespan bound
against the exact optimum applies.

Ties are broken deterministically: equal weights extract lowest UE index
first, equal loads prefer the lowest pilot index. The list-scan twin
`assign_pilots_naive` reproduces the greedy exactly and serves as its oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import csv

import numpy as np

from .config import SystemConfig
from .scenario import LargeScale


class HeapError(RuntimeError):
    """Peek/extract on an empty heap."""


class Heap:
    """Array-embedded binary heap over (key, tie, payload) nodes.

    kind "min" orders by (key, tie) ascending; kind "max" by key descending
    with ties still resolved toward the smaller tie value. `sift_ops` counts
    parent/child comparisons, used by the complexity tests.
    """

    def __init__(self, kind: str, keys=(), ties=None, payloads=None):
        if kind not in ("min", "max"):
            raise ValueError(f"heap kind must be 'min' or 'max', got {kind!r}")
        self.kind = kind
        keys = list(keys)
        if ties is None:
            ties = range(len(keys))
        if payloads is None:
            payloads = [None] * len(keys)
        self.nodes = [[float(k), t, p] for k, t, p in zip(keys, ties, payloads)]
        self.sift_ops = 0
        for i in range(len(self.nodes) // 2 - 1, -1, -1):
            self._sift_down(i)

    def __len__(self) -> int:
        return len(self.nodes)

    def _before(self, a, b) -> bool:
        self.sift_ops += 1
        if a[0] != b[0]:
            return a[0] < b[0] if self.kind == "min" else a[0] > b[0]
        return a[1] < b[1]

    def _sift_down(self, i: int) -> None:
        nodes, n = self.nodes, len(self.nodes)
        while True:
            left, right, best = 2 * i + 1, 2 * i + 2, i
            if left < n and self._before(nodes[left], nodes[best]):
                best = left
            if right < n and self._before(nodes[right], nodes[best]):
                best = right
            if best == i:
                return
            nodes[i], nodes[best] = nodes[best], nodes[i]
            i = best

    def _sift_up(self, i: int) -> None:
        nodes = self.nodes
        while i > 0:
            parent = (i - 1) // 2
            if self._before(nodes[i], nodes[parent]):
                nodes[i], nodes[parent] = nodes[parent], nodes[i]
                i = parent
            else:
                return

    def push(self, key: float, tie, payload=None) -> None:
        self.nodes.append([float(key), tie, payload])
        self._sift_up(len(self.nodes) - 1)

    def peek(self):
        if not self.nodes:
            raise HeapError("peek on empty heap")
        k, t, p = self.nodes[0]
        return k, p

    def extract(self):
        if not self.nodes:
            raise HeapError("extract on empty heap")
        root = self.nodes[0]
        last = self.nodes.pop()
        if self.nodes:
            self.nodes[0] = last
            self._sift_down(0)
        return root[0], root[2]

    def replace(self, key: float, payload=None) -> None:
        """Overwrite the root with (key, payload) and restore heap order."""
        if not self.nodes:
            raise HeapError("replace on empty heap")
        tie = self.nodes[0][1]
        self.nodes[0] = [float(key), tie, payload]
        self._sift_down(0)

    def is_ordered(self) -> bool:
        """Full-tree scan of the heap property (test hook)."""
        n = len(self.nodes)
        for i in range(1, n):
            parent = (i - 1) // 2
            if self._before(self.nodes[i], self.nodes[parent]):
                return False
        return True


def heap_generate(keys, payloads=None, kind: str = "min", ties=None) -> Heap:
    return Heap(kind, keys=keys, ties=ties, payloads=payloads)


def heap_peek(h: Heap):
    return h.peek()


def heap_extract(h: Heap):
    return h.extract()


def heap_replace_siftdown(h: Heap, key: float, payload=None) -> None:
    h.replace(key, payload)


@dataclass
class PilotAssignment:
    """Binary pilot-to-UE map with per-pilot accumulated weight."""

    upsilon: np.ndarray          # (tau, U) one-hot columns
    pilot_of: np.ndarray         # (U,) pilot index per UE
    loads: np.ndarray | None     # (tau,) accumulated weight, None if no weights known

    @property
    def num_pilots(self) -> int:
        return self.upsilon.shape[0]

    @property
    def num_ues(self) -> int:
        return self.upsilon.shape[1]

    def is_complete(self) -> bool:
        return bool(np.all(self.pilot_of >= 0))

    @classmethod
    def from_pilot_of(cls, pilot_of: np.ndarray, tau: int, beta_tilde=None) -> "PilotAssignment":
        pilot_of = np.asarray(pilot_of, dtype=int)
        ups = np.zeros((tau, pilot_of.size), dtype=np.int8)
        ups[pilot_of, np.arange(pilot_of.size)] = 1
        loads = None
        if beta_tilde is not None:
            loads = np.bincount(pilot_of, weights=np.asarray(beta_tilde, float), minlength=tau)
        return cls(upsilon=ups, pilot_of=pilot_of, loads=loads)


def effective_weights(ls: LargeScale, cfg: SystemConfig, ue_set: str) -> np.ndarray:
    """Per-UE contamination weight: antennas * tau * train power * summed beta.

    ue_set selects "ul" UEs, "dl" UEs, or "both" (UL indices first, then DL),
    the latter being the joint half-duplex pilot pool.
    """
    scale = cfg.antennas_per_ap * cfg.pilot_len * cfg.train_power_w
    if ue_set == "ul":
        w = scale * ls.beta_ul.sum(axis=0)
    elif ue_set == "dl":
        w = scale * ls.beta_dl.sum(axis=1)
    elif ue_set == "both":
        w = scale * np.concatenate([ls.beta_ul.sum(axis=0), ls.beta_dl.sum(axis=1)])
    else:
        raise ValueError(f"ue_set must be 'ul', 'dl', or 'both', got {ue_set!r}")
    if w.size == 0:
        raise ValueError("empty UE set")
    return w


def _check_weights(beta_tilde) -> np.ndarray:
    w = np.asarray(beta_tilde, dtype=float)
    if w.size == 0:
        raise ValueError("empty weight vector")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    return w


def assign_pilots_heap(beta_tilde, tau: int, rng=None, seed_permutation=None, stats=None) -> PilotAssignment:
    """Heap-based greedy pilot assignment (see module docstring).

    The seeding permutation (pilot labels for the tau heaviest UEs) comes
    from `rng` unless `seed_permutation` is injected for oracle tests.
    If there are at most tau UEs everyone gets a distinct pilot.
    """
    w = _check_weights(beta_tilde)
    if tau < 1:
        raise ValueError("need at least one pilot")
    u = w.size
    if seed_permutation is None:
        if rng is None:
            raise ValueError("pass rng or seed_permutation")
        perm = np.asarray(rng.permutation(tau))
    else:
        perm = np.asarray(seed_permutation, dtype=int)
        if sorted(perm.tolist()) != list(range(tau)):
            raise ValueError("seed_permutation must be a permutation of range(tau)")

    order = Heap("max", keys=w, ties=range(u), payloads=range(u))
    pilot_of = np.full(u, -1, dtype=int)
    seeded = []
    for pos in range(min(u, tau)):
        weight, ue = order.extract()
        pilot = int(perm[pos])
        pilot_of[ue] = pilot
        seeded.append((weight, pilot))
    min_heap = Heap(
        "min",
        keys=[s[0] for s in seeded],
        ties=[s[1] for s in seeded],
        payloads=[s[1] for s in seeded],
    )
    while len(order):
        weight, ue = order.extract()
        load, pilot = min_heap.peek()
        pilot_of[ue] = pilot
        min_heap.replace(load + weight, pilot)
    if stats is not None:
        stats["sift_ops"] = order.sift_ops + min_heap.sift_ops
    return PilotAssignment.from_pilot_of(pilot_of, tau, beta_tilde=w)


def assign_pilots_naive(beta_tilde, tau: int, seed_permutation) -> PilotAssignment:
    """O(U * tau) list-scan twin of assign_pilots_heap (oracle)."""
    w = _check_weights(beta_tilde)
    perm = np.asarray(seed_permutation, dtype=int)
    order = np.lexsort((np.arange(w.size), -w))  # weight desc, index asc
    loads = np.zeros(tau)
    pilot_of = np.full(w.size, -1, dtype=int)
    for pos, ue in enumerate(order):
        if pos < tau:
            pilot = int(perm[pos])
        else:
            pilot = 0
            for i in range(1, tau):  # first minimum wins
                if loads[i] < loads[pilot]:
                    pilot = i
        pilot_of[ue] = pilot
        loads[pilot] += w[ue]
    return PilotAssignment.from_pilot_of(pilot_of, tau, beta_tilde=w)


def assign_pilots_random(num_ues: int, tau: int, rng) -> PilotAssignment:
    """Independent uniform pilot draw per UE (baseline)."""
    if num_ues < 1 or tau < 1:
        raise ValueError("need at least one UE and one pilot")
    pilot_of = rng.integers(0, tau, size=num_ues)
    return PilotAssignment.from_pilot_of(pilot_of, tau)


def assignment_cost(assignment: PilotAssignment, beta_tilde) -> float:
    """Worst total weight shared by any UE's pilot (= max pilot load)."""
    w = _check_weights(beta_tilde)
    if not assignment.is_complete():
        raise ValueError("assignment is incomplete")
    if w.size != assignment.num_ues:
        raise ValueError("weight vector does not match assignment size")
    loads = np.bincount(assignment.pilot_of, weights=w, minlength=assignment.num_pilots)
    return float(loads.max())


def brute_force_optimal(beta_tilde, tau: int, limit: int = 10**7) -> tuple[float, PilotAssignment]:
    """Exact minimizer of assignment_cost by exhaustive enumeration.

    Only for small instances (tau**U <= limit); enumeration runs in chunks to
    bound memory.
    """
    w = _check_weights(beta_tilde)
    u = w.size
    total = tau**u
    if total > limit:
        raise ValueError(f"instance too large for enumeration: tau**U = {total}")
    best_cost = np.inf
    best = None
    chunk = 1 << 18
    powers = tau ** np.arange(u)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = (idx[:, None] // powers[None, :]) % tau  # (chunk, U)
        costs = np.zeros(idx.size)
        for pilot in range(tau):
            costs = np.maximum(costs, (digits == pilot) @ w)
        local = int(np.argmin(costs))
        if costs[local] < best_cost:
            best_cost = float(costs[local])
            best = digits[local].astype(int)
    return best_cost, PilotAssignment.from_pilot_of(best, tau, beta_tilde=w)


def heap_fd_strategy(ls: LargeScale, cfg: SystemConfig, rng) -> tuple[PilotAssignment, PilotAssignment]:
    """Two independent greedy runs: UL UEs (phase 1), then DL UEs (phase 2)."""
    a_ul = assign_pilots_heap(effective_weights(ls, cfg, "ul"), cfg.pilot_len, rng)
    a_dl = assign_pilots_heap(effective_weights(ls, cfg, "dl"), cfg.pilot_len, rng)
    return a_ul, a_dl


def heap_hd_strategy(ls: LargeScale, cfg: SystemConfig, rng) -> PilotAssignment:
    """One joint greedy run over all UL+DL UEs (UL indices first)."""
    return assign_pilots_heap(effective_weights(ls, cfg, "both"), cfg.pilot_len, rng)


def rand_fd_strategy(ls: LargeScale, cfg: SystemConfig, rng) -> tuple[PilotAssignment, PilotAssignment]:
    a_ul = assign_pilots_random(cfg.num_ul, cfg.pilot_len, rng)
    a_dl = assign_pilots_random(cfg.num_dl, cfg.pilot_len, rng)
    return a_ul, a_dl


def rand_hd_strategy(ls: LargeScale, cfg: SystemConfig, rng) -> PilotAssignment:
    return assign_pilots_random(cfg.num_ul + cfg.num_dl, cfg.pilot_len, rng)


def write_assignment_csv(assignment: PilotAssignment, beta_tilde, path: str) -> None:
    w = _check_weights(beta_tilde)
    loads = np.bincount(assignment.pilot_of, weights=w, minlength=assignment.num_pilots)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ue_index", "pilot_index", "beta_tilde", "final_load"])
        for ue, pilot in enumerate(assignment.pilot_of):
            writer.writerow([ue, int(pilot), format(w[ue], ".12g"), format(loads[pilot], ".12g")])
