import random

from vrcsim.audit import Structure
from vrcsim.memhier import (CacheConfig, L1_HIT, L1_MISS, MSHR_HIT,
                            MemHierState, replay_log)

BIG = 10_000_000


def _drain(mem, now=BIG):
    mem.advance(now)


def test_lookup_classes():
    mem = MemHierState()
    assert mem.lookup(0x1000).kind == L1_MISS
    ready, stalled = mem.access_load(0x1000, 0, False, 0, False)
    assert not stalled
    assert mem.lookup(0x1000).kind == MSHR_HIT
    assert mem.lookup(0x1000).ready_cycle == ready
    _drain(mem)
    assert mem.lookup(0x1000).kind == L1_HIT
    assert mem.lookup(0x1040).kind == L1_MISS


def test_latency_formulas():
    cfg = CacheConfig()
    mem = MemHierState(cfg)
    # cold line: memory access = 2 + 20 + mem_latency
    ready, _ = mem.access_load(0x2000, 100, False, 0, False)
    assert ready == 100 + 2 + 20 + cfg.mem_latency
    _drain(mem)
    # resident: 2-cycle hit
    ready, _ = mem.access_load(0x2000, 1000, False, 1, False)
    assert ready == 1002
    # L2 hit: evict from L1 by filling 8 more lines in the same set, line stays in L2
    set_stride = cfg.l1_sets * cfg.line_bytes
    for i in range(1, 9):
        mem.access_load(0x2000 + i * set_stride, 2000 + i, False, 2, False)
        _drain(mem)
    assert mem.lookup(0x2000).kind == L1_MISS
    assert mem.lookup(0x2000).l2_hit is True
    ready, _ = mem.access_load(0x2000, 5000, False, 3, False)
    assert ready == 5000 + 2 + 20


def test_mshr_coalescing():
    mem = MemHierState()
    r1, _ = mem.access_load(0x3000, 0, False, 0, False)
    assert len(mem.l1_mshr) == 1
    lk = mem.lookup(0x3008)  # same line
    assert lk.kind == MSHR_HIT
    r2, _ = mem.access_load(0x3008, 5, False, 1, False)
    assert len(mem.l1_mshr) == 1  # no second allocation
    assert r2 == r1  # waiters wake at the fill


def test_mshr_exhaustion_stalls():
    mem = MemHierState(CacheConfig(mshrs=1))
    _, stalled = mem.access_load(0x1000, 0, False, 0, False)
    assert not stalled
    _, stalled = mem.access_load(0x9000, 0, False, 1, False)
    assert stalled


def test_deferred_apply_and_squash():
    mem = MemHierState()
    mem.access_load(0x1000, 0, False, 0, False)
    mem.access_load(0x1040, 0, False, 0, False)  # same set companions
    _drain(mem)
    before = mem.snapshot_digest()
    # speculative hit defers the LRU update
    ready, _ = mem.access_load(0x1000, 100, True, 1, True, defer_key="a")
    assert ready == 102
    assert mem.snapshot_digest() == before
    mem.squash_deferred("a")
    assert mem.snapshot_digest() == before
    # now defer and apply: line becomes MRU
    mem.access_load(0x1000, 200, True, 2, True, defer_key="b")
    mem.apply_deferred("b", 210, 2)
    assert mem.l1.data[mem.l1.set_index(0x1000)][0] == 0x1000


def test_deferred_order_preserving():
    cfg = CacheConfig()
    mem = MemHierState(cfg)
    lines = [0x1000 + i * cfg.l1_sets * cfg.line_bytes for i in range(3)]
    for ln in lines:
        mem.access_load(ln, 0, False, 0, False)
        _drain(mem)
    mem.access_load(lines[0], 100, True, 1, True, defer_key="k1")
    mem.access_load(lines[1], 101, True, 2, True, defer_key="k2")
    mem.apply_deferred("k1", 110, 1)
    mem.apply_deferred("k2", 111, 2)
    s = mem.l1.data[mem.l1.set_index(lines[0])]
    assert s[0] == lines[1] and s[1] == lines[0]  # application order = LRU order


def test_store_write_allocate_dirty():
    mem = MemHierState()
    mem.access_store(0x4000, 0, 0)
    _drain(mem)
    line = mem.line_of(0x4000)
    assert line in mem.l1.dirty
    # store hit sets dirty on a clean resident line
    mem.access_load(0x5000, 0, False, 1, False)
    _drain(mem)
    mem.access_store(0x5000, 100, 2)
    assert mem.line_of(0x5000) in mem.l1.dirty


def test_inclusive_eviction_logs_l1_evict():
    cfg = CacheConfig(l1_bytes=512, l1_ways=8, l2_bytes=512, l2_ways=8,
                      mem_latency=10)
    mem = MemHierState(cfg)
    for i in range(9):
        mem.access_load(0x1000 + i * 64, i * 1000, False, i, False)
        _drain(mem)
    evicts = [r for r in mem.log if r.structure is Structure.L1_TAG
              and r.op == "evict"]
    assert evicts, "L2 eviction must drop the L1 copy"
    assert not mem.l1.contains(0x1000)


def test_snapshot_digests():
    a, b = MemHierState(), MemHierState()
    assert a.snapshot_digest() == b.snapshot_digest()
    a.access_load(0x1000, 0, False, 0, False)
    _drain(a)
    assert a.snapshot_digest() != b.snapshot_digest()
    b.access_load(0x1000, 0, False, 0, False)
    _drain(b)
    assert a.snapshot_digest() == b.snapshot_digest()


def test_log_replay_reproduces_digest():
    mem = MemHierState()
    rng = random.Random(42)
    now = 0
    for _ in range(300):
        addr = rng.randrange(0, 1 << 20) & ~7
        now += rng.randrange(1, 300)
        if rng.random() < 0.3:
            mem.access_store(addr, now, 0)
        else:
            mem.access_load(addr, now, False, 0, False)
        mem.advance(now)
    _drain(mem)
    assert replay_log(mem.log, mem.config) == mem.snapshot_digest()


# ---------------------------------------------------------------------------
# differential test against an independent textbook write-back LRU model

class NaiveLevel:
    def __init__(self, sets, ways, line):
        self.sets = [[] for _ in range(sets)]
        self.ways = ways
        self.line = line
        self.dirty = set()

    def index(self, addr):
        return (addr // self.line) % len(self.sets)

    def probe(self, line):
        return line in self.sets[self.index(line)]

    def touch(self, line):
        s = self.sets[self.index(line)]
        s.remove(line)
        s.insert(0, line)

    def fill(self, line):
        s = self.sets[self.index(line)]
        victim, victim_dirty = None, False
        if len(s) >= self.ways:
            victim = s.pop()
            victim_dirty = victim in self.dirty
            self.dirty.discard(victim)
        s.insert(0, line)
        return victim, victim_dirty


class NaiveHierarchy:
    """Instant-fill inclusive two-level write-back model."""

    def __init__(self, cfg: CacheConfig):
        self.cfg = cfg
        self.l1 = NaiveLevel(cfg.l1_sets, cfg.l1_ways, cfg.line_bytes)
        self.l2 = NaiveLevel(cfg.l2_sets, cfg.l2_ways, cfg.line_bytes)

    def access(self, addr, store=False):
        line = addr - addr % self.cfg.line_bytes
        if self.l1.probe(line):
            kind = "hit"
            self.l1.touch(line)
        else:
            if self.l2.probe(line):
                kind = "l2hit"
                self.l2.touch(line)
            else:
                kind = "miss"
                victim2, _ = self.l2.fill(line)
                if victim2 is not None and self.l1.probe(victim2):
                    self.l1.sets[self.l1.index(victim2)].remove(victim2)
                    self.l1.dirty.discard(victim2)
            victim, victim_dirty = self.l1.fill(line)
            if victim is not None and victim_dirty and self.l2.probe(victim):
                self.l2.dirty.add(victim)
        if store:
            self.l1.dirty.add(line)
        return kind


def test_differential_vs_naive_lru():
    cfg = CacheConfig(l1_bytes=4096, l1_ways=4, l2_bytes=16384, l2_ways=8,
                      mem_latency=50)
    mem = MemHierState(cfg)
    naive = NaiveHierarchy(cfg)
    rng = random.Random(7)
    now = 0
    for i in range(4000):
        addr = (rng.randrange(0, 512) * 64) + (rng.randrange(8) * 8)
        store = rng.random() < 0.3
        now += 1000  # fills complete between accesses
        mem.advance(now)
        lk = mem.lookup(addr)
        expected = naive.access(addr, store=store)
        got = {"L1_HIT": "hit", "MSHR_HIT": "mshr",
               "L1_MISS": ("l2hit" if lk.l2_hit else "miss")}[lk.kind]
        assert got == expected, f"access {i} to {addr:#x}: {got} != {expected}"
        if store:
            mem.access_store(addr, now, i)
        else:
            mem.access_load(addr, now, False, i, False)
    _drain(mem)
    for level, nlevel in ((mem.l1, naive.l1), (mem.l2, naive.l2)):
        assert level.data == nlevel.sets
        assert level.dirty == nlevel.dirty
