"""Two-tier semantic explanation cache.

Each :class:`CacheTier` stores entries in fixed slots with an exact flat
k-NN index (a dense embedding matrix mirrored slot-for-slot).  A
:class:`TwoTierCache` pairs an edge-server local tier with the shared cloud
global tier; a global hit is promoted into the local tier.

A cached explanation is served only when, in order:

1. its embedding is closer than ``eps_sim`` to the query embedding,
2. its cached prediction equals the prediction the device computed,
3. its model version is current, or lightweight verification passes,
4. its (possibly refreshed) fidelity meets the request's threshold.

Candidates are visited in ascending distance (ties: older ``inserted_at``
first).  The scan is fetched ``k`` at a time and keeps going while the next
batch can still satisfy condition 1, so a lookup returns exactly the first
valid entry in distance order.
"""

from __future__ import annotations

import itertools
import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .explainers import Explanation

DEDUP_TOL = 1e-9


class RWLock:
    """Many concurrent readers, one exclusive writer (writer preference)."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


_entry_ids = itertools.count()


@dataclass(eq=False)
class CacheEntry:
    embedding: np.ndarray
    explanation: Explanation
    model_id: str
    model_version: int
    cached_prediction: int
    fidelity: float
    inserted_at: float = 0.0
    last_access: float = 0.0
    entry_id: int = field(default_factory=lambda: next(_entry_ids))

    @classmethod
    def from_explanation(cls, embedding, expl: Explanation, now: float = 0.0) -> "CacheEntry":
        return cls(np.asarray(embedding, dtype=np.float64), expl, expl.model_id,
                   expl.model_version, expl.cached_prediction, expl.fidelity_estimate,
                   now, now)

    def copy(self, now: Optional[float] = None) -> "CacheEntry":
        t = self.inserted_at if now is None else now
        return CacheEntry(self.embedding, self.explanation, self.model_id, self.model_version,
                          self.cached_prediction, self.fidelity, t,
                          self.last_access if now is None else now)

    def to_record(self) -> dict:
        return {
            "embedding": [float(v) for v in self.embedding],
            "explanation": self.explanation.to_dict(),
            "model_id": self.model_id,
            "model_version": self.model_version,
            "cached_prediction": self.cached_prediction,
            "fidelity": self.fidelity,
            "inserted_at": self.inserted_at,
            "last_access": self.last_access,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CacheEntry":
        return cls(np.asarray(rec["embedding"], dtype=np.float64),
                   Explanation.from_dict(rec["explanation"]), rec["model_id"],
                   int(rec["model_version"]), int(rec["cached_prediction"]),
                   float(rec["fidelity"]), float(rec["inserted_at"]),
                   float(rec["last_access"]))


class CacheTier:
    """Fixed-capacity LRU store with an exact flat nearest-neighbour index."""

    def __init__(self, name: str, capacity: int, dim: int = 32,
                 access_latency_ms: Tuple[float, float] = (5.0, 10.0)):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.name = name
        self.capacity = capacity
        self.dim = dim
        self.access_latency_ms = access_latency_ms
        self._emb = np.zeros((capacity, dim))
        self._occupied = np.zeros(capacity, dtype=bool)
        self._model = np.full(capacity, -1, dtype=np.int64)
        self._inserted = np.zeros(capacity)
        self._seq = np.zeros(capacity, dtype=np.int64)
        self._recency = np.zeros(capacity, dtype=np.int64)
        self._entries: List[Optional[CacheEntry]] = [None] * capacity
        self._slot_of: dict = {}
        self._free = list(range(capacity - 1, -1, -1))
        self._codes: dict = {}
        self._ticks = itertools.count(1)
        self.lock = RWLock()

    def __len__(self) -> int:
        return len(self._slot_of)

    def __contains__(self, entry: CacheEntry) -> bool:
        return entry.entry_id in self._slot_of

    def entries(self) -> List[CacheEntry]:
        """Resident entries in insertion order."""
        with self.lock.read():
            slots = sorted(self._slot_of.values(), key=lambda s: self._seq[s])
            return [self._entries[s] for s in slots]

    def _code(self, model_id: str) -> int:
        code = self._codes.get(model_id)
        if code is None:
            code = self._codes[model_id] = len(self._codes)
        return code

    # -- reads -------------------------------------------------------------

    def _distances(self, e_q: np.ndarray, model_id: str) -> Tuple[np.ndarray, np.ndarray]:
        code = self._codes.get(model_id)
        if code is None:
            return np.empty(0, dtype=np.int64), np.empty(0)
        slots = np.flatnonzero(self._occupied & (self._model == code))
        if slots.size == 0:
            return slots, np.empty(0)
        diff = self._emb[slots] - e_q
        return slots, np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def _order(self, slots: np.ndarray, dist: np.ndarray) -> np.ndarray:
        return np.lexsort((self._seq[slots], self._inserted[slots], dist))

    def knn(self, e_q, k: int, model_id: str) -> List[Tuple[CacheEntry, float]]:
        """Exact top-k entries of ``model_id`` by L2 distance, ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        with self.lock.read():
            slots, dist = self._distances(np.asarray(e_q, dtype=np.float64), model_id)
            if slots.size > k:
                # keep every entry tied with the k-th distance so tie-breaks stay exact
                kth = np.partition(dist, k - 1)[k - 1]
                keep = dist <= kth
                slots, dist = slots[keep], dist[keep]
            order = self._order(slots, dist)[:k]
            return [(self._entries[s], float(dist[i])) for i, s in zip(order, slots[order])]

    def candidates(self, e_q, k: int, model_id: str, eps: float
                   ) -> Iterator[Tuple[CacheEntry, float]]:
        """Entries closer than ``eps`` in k-NN order.

        Equivalent to fetching k nearest neighbours at a time and stopping at
        the first batch that reaches ``eps``; entries at or beyond ``eps``
        could never pass the similarity test, so they are not materialized.
        """
        with self.lock.read():
            slots, dist = self._distances(np.asarray(e_q, dtype=np.float64), model_id)
            within = dist < eps
            slots, dist = slots[within], dist[within]
            order = self._order(slots, dist)
            ranked = [(self._entries[s], float(dist[i])) for i, s in zip(order, slots[order])]
        return iter(ranked)

    # -- writes ------------------------------------------------------------

    def touch(self, entry: CacheEntry, now: float) -> None:
        # relaxed ordering: a racing touch only perturbs LRU order
        slot = self._slot_of.get(entry.entry_id)
        if slot is not None:
            entry.last_access = now
            self._recency[slot] = next(self._ticks)

    def insert(self, entry: CacheEntry) -> Optional[CacheEntry]:
        """Insert, evicting the least recently accessed entry when full.

        An entry with the same model id, version and prediction and an
        embedding within ``DEDUP_TOL`` is replaced in place instead.
        """
        e = np.asarray(entry.embedding, dtype=np.float64)
        with self.lock.write():
            code = self._code(entry.model_id)
            dup = self._find_duplicate(e, code, entry)
            if dup is not None:
                old = self._entries[dup]
                del self._slot_of[old.entry_id]
                self._place(dup, entry, e, code)
                return None
            evicted = None
            if not self._free:
                occ = np.flatnonzero(self._occupied)
                victim = int(occ[np.argmin(self._recency[occ])])
                evicted = self._entries[victim]
                self._clear(victim)
            self._place(self._free.pop(), entry, e, code)
            return evicted

    def _find_duplicate(self, e, code, entry) -> Optional[int]:
        mask = self._occupied & (self._model == code)
        if not mask.any():
            return None
        slots = np.flatnonzero(mask)
        diff = self._emb[slots] - e
        close = slots[np.einsum("ij,ij->i", diff, diff) <= DEDUP_TOL**2]
        for s in close:
            other = self._entries[s]
            if (other.model_version == entry.model_version
                    and other.cached_prediction == entry.cached_prediction):
                return int(s)
        return None

    def _place(self, slot: int, entry: CacheEntry, e: np.ndarray, code: int) -> None:
        self._emb[slot] = e
        self._occupied[slot] = True
        self._model[slot] = code
        self._inserted[slot] = entry.inserted_at
        self._seq[slot] = entry.entry_id
        self._recency[slot] = next(self._ticks)
        self._entries[slot] = entry
        self._slot_of[entry.entry_id] = slot

    def _clear(self, slot: int) -> None:
        entry = self._entries[slot]
        del self._slot_of[entry.entry_id]
        self._entries[slot] = None
        self._occupied[slot] = False
        self._model[slot] = -1
        self._free.append(slot)

    def remove(self, entry: CacheEntry) -> bool:
        with self.lock.write():
            slot = self._slot_of.get(entry.entry_id)
            if slot is None:
                return False
            self._clear(slot)
            return True

    def remove_where(self, pred: Callable[[CacheEntry], bool]) -> int:
        with self.lock.write():
            doomed = [s for s in self._slot_of.values() if pred(self._entries[s])]
            for s in doomed:
                self._clear(s)
            return len(doomed)

    def lru_order(self) -> List[CacheEntry]:
        """Resident entries from least to most recently accessed."""
        with self.lock.read():
            slots = sorted(self._slot_of.values(), key=lambda s: self._recency[s])
            return [self._entries[s] for s in slots]

    def check_mirror(self) -> bool:
        """Index rows agree exactly with the entry table."""
        for slot, entry in enumerate(self._entries):
            if entry is None:
                if self._occupied[slot]:
                    return False
                continue
            if (not self._occupied[slot] or self._slot_of.get(entry.entry_id) != slot
                    or not np.array_equal(self._emb[slot], entry.embedding)
                    or self._model[slot] != self._codes[entry.model_id]):
                return False
        return len(self._slot_of) == int(self._occupied.sum()) <= self.capacity

    # -- persistence -------------------------------------------------------

    def save(self, fh) -> None:
        """One JSON record per line, least recently accessed first."""
        for entry in self.lru_order():
            fh.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")

    def load(self, fh) -> int:
        n = 0
        for line in fh:
            if line.strip():
                self.insert(CacheEntry.from_record(json.loads(line)))
                n += 1
        return n


@dataclass
class CacheConfig:
    eps_sim: float = 0.15
    eps_band: Tuple[float, float] = (0.12, 0.18)
    eps_step: float = 0.01
    k_candidates: int = 8
    window: int = 200
    target_hit: float = 0.70
    max_stale_accept: float = 0.05
    drop_failed: bool = True

    def __post_init__(self):
        lo, hi = self.eps_band
        self.eps_sim = float(min(max(self.eps_sim, lo), hi))


def adapt_threshold(cfg: CacheConfig, hit_rate: float,
                    verification_failure_rate: float) -> float:
    """New similarity threshold after one adaptation window.

    Too many stale entries failing verification tightens the threshold;
    otherwise a hit rate under target loosens it.
    """
    eps = cfg.eps_sim
    if verification_failure_rate > cfg.max_stale_accept:
        eps -= cfg.eps_step
    elif hit_rate < cfg.target_hit:
        eps += cfg.eps_step
    lo, hi = cfg.eps_band
    return round(min(max(eps, lo), hi), 10)


class ThresholdAdapter:
    """Accumulates per-request outcomes and adapts ``cfg.eps_sim`` every window."""

    def __init__(self, cfg: CacheConfig):
        self.cfg = cfg
        self.history: List[float] = [cfg.eps_sim]
        self._n = self._hits = self._ver = self._fail = 0

    def record(self, hit: bool, verifications: int = 0, failures: int = 0) -> None:
        self._n += 1
        self._hits += hit
        self._ver += verifications
        self._fail += failures
        if self._n >= self.cfg.window:
            fail_rate = self._fail / self._ver if self._ver else 0.0
            self.cfg.eps_sim = adapt_threshold(self.cfg, self._hits / self._n, fail_rate)
            self.history.append(self.cfg.eps_sim)
            self._n = self._hits = self._ver = self._fail = 0


# verifier(entry, x_q, model) -> VerificationResult-like with .valid and
# .measured_fidelity; must not mutate the entry.
Verifier = Callable[[CacheEntry, np.ndarray, object], object]


@dataclass
class LookupResult:
    hit: bool
    entry: Optional[CacheEntry] = None
    tier: Optional[str] = None
    verified: bool = False
    examined: int = 0
    verifications: int = 0
    verification_failures: int = 0
    verification_evals: int = 0

    @property
    def explanation(self) -> Optional[Explanation]:
        return self.entry.explanation if self.entry else None


class TwoTierCache:
    def __init__(self, local: CacheTier, global_: Optional[CacheTier], cfg: CacheConfig):
        self.local = local
        self.global_ = global_
        self.cfg = cfg

    def tiers(self) -> List[CacheTier]:
        return [t for t in (self.local, self.global_) if t is not None]

    def insert(self, entry: CacheEntry) -> None:
        self.local.insert(entry)
        if self.global_ is not None:
            self.global_.insert(entry.copy())


def scan_tier(tier: CacheTier, e_q, prediction_q: int, model, rho_fid: float,
              cfg: CacheConfig, verifier: Optional[Verifier], x_q, now: float,
              result: LookupResult) -> Optional[CacheEntry]:
    """Apply the four validity conditions to one tier's candidates."""
    for entry, dist in tier.candidates(e_q, cfg.k_candidates, model.model_id, cfg.eps_sim):
        result.examined += 1
        if not dist < cfg.eps_sim:
            continue
        if entry.cached_prediction != prediction_q:
            continue
        verified = False
        if entry.model_version != model.version:
            if verifier is not None:
                res = verifier(entry, x_q, model)
                result.verifications += 1
                result.verification_evals += res.evals_used
                if not res.valid:
                    result.verification_failures += 1
                    if cfg.drop_failed:
                        tier.remove(entry)
                    continue
                entry.fidelity = res.measured_fidelity
                entry.model_version = model.version
                verified = True
        if entry.fidelity >= rho_fid:
            tier.touch(entry, now)
            result.verified = verified
            return entry
    return None


def lookup(x_q, prediction_q: int, model, rho_fid: float, cache: TwoTierCache,
           verifier: Optional[Verifier], *, e_q, now: float = 0.0,
           tiers: Iterable[str] = ("local", "global")) -> LookupResult:
    """Semantic lookup across the requested tiers.

    ``verifier=None`` accepts stale-version entries unverified (the
    no-verification ablation).  A global hit is copied into the local tier.
    """
    result = LookupResult(hit=False)
    for name in tiers:
        tier = cache.local if name == "local" else cache.global_
        if tier is None:
            continue
        entry = scan_tier(tier, e_q, prediction_q, model, rho_fid, cache.cfg, verifier,
                          x_q, now, result)
        if entry is not None:
            if name == "global":
                cache.local.insert(entry.copy(now=now))
            result.hit, result.entry, result.tier = True, entry, name
            return result
    return result


def invalidate_stale(cache: TwoTierCache, model_id: str, current_version: int,
                     mode: str = "lazy") -> int:
    """Eager mode drops entries older than ``current_version``; lazy is a no-op."""
    if mode == "lazy":
        return 0
    if mode != "eager":
        raise ValueError(f"unknown invalidation mode {mode!r}")
    return sum(t.remove_where(lambda e: e.model_id == model_id
                              and e.model_version < current_version)
               for t in cache.tiers())
