"""Duplicate-tag directory segment, pending bits, speculative bits, and GAD.

Storage is functional: operations apply immediately and return the cycle
latency the owning engine must account for, which keeps the structures
independently testable while the engines do the scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .protocol import CoherenceState, I, S, E, M, O, F, OWNER_STATES

# Victim states that require an explicit writeback flow.  S and F victims
# are clean non-exclusive copies and are dropped silently when overwritten
# (the controller tables define no ST-WB action for them).
REPLACEMENT_STATES = frozenset({E, M, O})

PENDING_COUNTER_MAX = 15  # 4-bit counters; overflow is a protocol bug


class OutOfRange(Exception):
    pass


class Underflow(Exception):
    pass


class DoubleSpeculation(Exception):
    pass


class MultipleOwners(Exception):
    pass


@dataclass(frozen=True)
class SegmentConfig:
    num_caches: int
    assoc: int = 8
    sets_per_cache: int = 64
    tag_bits: int = 28
    state_bits: int = 3
    tag_sets_per_row: int = 2
    block_bytes: int = 64

    def __post_init__(self):
        if self.tag_sets_per_row & (self.tag_sets_per_row - 1):
            raise ValueError("tag_sets_per_row must be a power of two")

    @property
    def rows_per_set(self) -> int:
        return math.ceil(self.num_caches / self.tag_sets_per_row)

    @property
    def way_group_read_latency(self) -> int:
        return 1 + self.rows_per_set

    def set_index(self, addr: int) -> int:
        return (addr // self.block_bytes) % self.sets_per_cache

    def tag_of(self, addr: int) -> int:
        return (addr // self.block_bytes) // self.sets_per_cache


def way_group_index(addr: int, cfg: SegmentConfig) -> int:
    """Way group of a block: all addresses with the same set index collide."""
    return cfg.set_index(addr)


def way_group_home(set_idx: int, num_cces: int) -> tuple:
    """Stripe way groups round-robin across CCEs by low set-index bits.

    Returns (cce_id, local_way_group_index).
    """
    return set_idx % num_cces, set_idx // num_cces


@dataclass
class TagSetEntry:
    tag: int = 0
    state: CoherenceState = I


@dataclass(frozen=True)
class SharersVectors:
    hits: list
    states: list
    ways: list


@dataclass(frozen=True)
class LruEntry:
    lru_tag: int
    lru_state: CoherenceState
    lru_way: int


class DirectorySegment:
    """Duplicate tags for every (cache, set, way) of one cache type.

    Cache c's tag sets live in row block c // tag_sets_per_row at horizontal
    offset c % tag_sets_per_row; each block holds sets_per_cache sequential
    rows (cache-major interleaving of additional row blocks).
    """

    def __init__(self, cfg: SegmentConfig, cce_id: int = 0, num_cces: int = 1):
        self.cfg = cfg
        self.cce_id = cce_id
        self.num_cces = num_cces
        self.num_rows = cfg.rows_per_set * cfg.sets_per_cache
        self.rows = [
            [[TagSetEntry() for _ in range(cfg.assoc)]
             for _ in range(cfg.tag_sets_per_row)]
            for _ in range(self.num_rows)
        ]

    def _coords(self, addr: int, lce: int) -> tuple:
        cfg = self.cfg
        if not (0 <= lce < cfg.num_caches):
            raise OutOfRange(f"cache id {lce}")
        set_idx = cfg.set_index(addr)
        home, _ = way_group_home(set_idx, self.num_cces)
        if home != self.cce_id:
            raise OutOfRange(f"addr {addr:#x} belongs to CCE {home}")
        row = (lce // cfg.tag_sets_per_row) * cfg.sets_per_cache + set_idx
        return row, lce % cfg.tag_sets_per_row

    def _tag_set(self, addr: int, lce: int):
        row, col = self._coords(addr, lce)
        return self.rows[row][col]

    def read_way_group(self, addr: int, req_lce: int, lru_way: int):
        """Read every cache's tag set for the addressed set.

        Returns (SharersVectors, LruEntry, latency).  The LRU entry comes
        from the requesting cache's tag set at the request-supplied way.
        """
        cfg = self.cfg
        tag = cfg.tag_of(addr)
        hits, states, ways = [], [], []
        for c in range(cfg.num_caches):
            tag_set = self._tag_set(addr, c)
            hit_way = None
            for w, entry in enumerate(tag_set):
                if entry.state is not I and entry.tag == tag:
                    hit_way = w
                    break
            hits.append(hit_way is not None)
            states.append(tag_set[hit_way].state if hit_way is not None else I)
            ways.append(hit_way if hit_way is not None else 0)
        if not (0 <= lru_way < cfg.assoc):
            raise OutOfRange(f"lru way {lru_way}")
        lru_ent = self._tag_set(addr, req_lce)[lru_way]
        lru = LruEntry(lru_tag=lru_ent.tag, lru_state=lru_ent.state,
                       lru_way=lru_way)
        return SharersVectors(hits, states, ways), lru, cfg.way_group_read_latency

    def read_entry(self, addr: int, lce: int, way: int):
        if not (0 <= way < self.cfg.assoc):
            raise OutOfRange(f"way {way}")
        entry = self._tag_set(addr, lce)[way]
        return TagSetEntry(entry.tag, entry.state), 2

    def write_entry(self, addr: int, lce: int, way: int,
                    tag: Optional[int] = None,
                    state: CoherenceState = I) -> int:
        if not (0 <= way < self.cfg.assoc):
            raise OutOfRange(f"way {way}")
        entry = self._tag_set(addr, lce)[way]
        entry.tag = self.cfg.tag_of(addr) if tag is None else tag
        entry.state = state
        return 1

    def write_state(self, addr: int, lce: int, way: int,
                    state: CoherenceState) -> int:
        if not (0 <= way < self.cfg.assoc):
            raise OutOfRange(f"way {way}")
        self._tag_set(addr, lce)[way].state = state
        return 1

    def clear_row(self, addr: int, lce: int) -> int:
        """Clear the physical row holding this cache's tag set (reset state)."""
        row, _ = self._coords(addr, lce)
        for tag_set in self.rows[row]:
            for entry in tag_set:
                entry.tag = 0
                entry.state = I
        return 1

    def snapshot(self):
        """Quiescent view: {(lce, set, way): (tag, state)} of valid entries."""
        out = {}
        cfg = self.cfg
        for c in range(cfg.num_caches):
            for row_off in range(cfg.sets_per_cache):
                row = (c // cfg.tag_sets_per_row) * cfg.sets_per_cache + row_off
                tag_set = self.rows[row][c % cfg.tag_sets_per_row]
                for w, entry in enumerate(tag_set):
                    if entry.state is not I:
                        out[(c, row_off, w)] = (entry.tag, entry.state)
        return out


class PendingBits:
    """Per-way-group transaction counters; 'pending' means non-zero."""

    def __init__(self, num_way_groups: int):
        self.counters = [0] * num_way_groups

    def read(self, wg: int) -> bool:
        return self.counters[wg] != 0

    def adjust(self, wg: int, delta: int):
        if delta not in (1, -1):
            raise ValueError("delta must be +1 or -1")
        value = self.counters[wg] + delta
        if value < 0:
            raise Underflow(f"pending counter for way group {wg}")
        assert value <= PENDING_COUNTER_MAX, "pending counter overflow"
        self.counters[wg] = value

    def clear(self, wg: int):
        self.counters[wg] = 0


@dataclass
class SpecRecord:
    spec: bool = False
    squash: bool = False
    fwd_mod: bool = False
    state: CoherenceState = I


class SpecBits:
    """Per-way-group speculative memory read resolution bits."""

    def __init__(self, num_way_groups: int):
        self.records = [SpecRecord() for _ in range(num_way_groups)]

    def read(self, wg: int) -> SpecRecord:
        return self.records[wg]

    def set(self, wg: int):
        rec = self.records[wg]
        if rec.spec:
            raise DoubleSpeculation(f"way group {wg}")
        self.records[wg] = SpecRecord(spec=True)

    def squash(self, wg: int):
        rec = self.records[wg]
        rec.spec = False
        rec.squash = True
        rec.fwd_mod = False

    def fwd_mod(self, wg: int, state: CoherenceState):
        rec = self.records[wg]
        rec.spec = False
        rec.squash = False
        rec.fwd_mod = True
        rec.state = state

    def unset(self, wg: int):
        self.records[wg] = SpecRecord()


@dataclass(frozen=True)
class GadRequest:
    """The request summary the GAD unit needs."""

    lce: int
    write: bool
    non_exclusive: bool = False
    atomic: bool = False


@dataclass
class GadResult:
    cached_s: bool = False
    cached_e: bool = False
    cached_m: bool = False
    cached_o: bool = False
    cached_f: bool = False
    replacement: bool = False
    upgrade: bool = False
    owner: Optional[tuple] = None  # (cache, way, state)
    req_way_hit: Optional[int] = None

    def cached_flag(self, state: CoherenceState) -> bool:
        return {S: self.cached_s, E: self.cached_e, M: self.cached_m,
                O: self.cached_o, F: self.cached_f}[state]


def gad(sv: SharersVectors, lru: LruEntry, req: GadRequest) -> GadResult:
    """Single-cycle digest of a way-group read into MSHR control flags.

    Cached-state flags consider every cache except the requester; the owner
    may be any cache, including the requester.
    """
    res = GadResult()
    owner = None
    for c, hit in enumerate(sv.hits):
        if not hit:
            continue
        state = sv.states[c]
        if state in OWNER_STATES:
            if owner is not None:
                raise MultipleOwners(f"caches {owner[0]} and {c}")
            owner = (c, sv.ways[c], state)
        if c == req.lce:
            res.req_way_hit = sv.ways[c]
            continue
        if state is S:
            res.cached_s = True
        elif state is E:
            res.cached_e = True
        elif state is M:
            res.cached_m = True
        elif state is O:
            res.cached_o = True
        elif state is F:
            res.cached_f = True
    res.owner = owner
    req_hit = sv.hits[req.lce]
    req_state = sv.states[req.lce]
    res.upgrade = bool(req.write and req_hit and req_state in (S, O, F))
    res.replacement = bool(not req_hit and lru.lru_state in REPLACEMENT_STATES)
    return res
