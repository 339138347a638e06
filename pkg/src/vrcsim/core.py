"""Cycle-stepped out-of-order core timing model.

The model dispatches the (correct-path) trace in order, tracks real value
dataflow through register producers, issues to a shared functional-unit pool,
and commits in order. Loads run through the policy automaton:

  BASELINE    loads access the hierarchy as soon as their address is ready.
  DOM         shadowed loads may hit in L1 (replacement update deferred) or
              wait on an in-flight MSHR; shadowed true misses are delayed and
              issue their miss only once unshadowed.
  VP          as DOM, plus a delayed load with a confident prediction wakes
              its dependents after the 2-cycle prediction; the real access
              (validation) happens at unshadow, serialized across predicted
              loads; a mismatch replays dependents with the redirect penalty.
  VRC/VRC2    as DOM, plus annotated shadowed misses recompute their value in
              the engine and complete without validation; VRC2 caps modeled
              slice latency at two cycles.
  ORACLE_VP   every shadowed miss predicted correctly, validation still real.
  ORACLE_VRC  every shadowed miss recomputed in two cycles, no hierarchy use.

Cycle phase order: fills, scheduled events (shadow resolves, prediction and
validation completions), commit, unshadow polling, issue in program order
(including delayed-load reissues and validations), recomputation engine,
dispatch, probes. A load "performs" when its value is bound by a real
access, store forward, or recomputation; its memory-order shadow resolves
then (at validation completion for predicted loads). Time skips ahead to the
next scheduled event whenever a cycle makes no progress.

Injected transient probes model guaranteed-squashed wrong-path loads after a
mispredicted branch. They probe the hierarchy but hold no core resources, so
a secure policy must leave the hierarchy byte-identical to a probe-free run;
under BASELINE they mutate it like any speculative load would.
"""

from __future__ import annotations

import bisect
import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .audit import MutationLog
from .isa import ALU_LATENCY, alu_eval
from .memhier import CacheConfig, L1_HIT, L1_MISS, MSHR_HIT, MemHierState
from .shadows import ShadowKind, ShadowState
from .slicer import AnnotationTable
from .trace import Trace
from .vp import VpConfig, VpState
from .vrc import DONE, EXC_FALLBACK, RcmpDecision, VrcConfig, VrcState

POLICIES = ("BASELINE", "DOM", "VP", "VRC", "VRC2", "ORACLE_VP", "ORACLE_VRC")
SECURE_POLICIES = ("DOM", "VP", "VRC", "VRC2", "ORACLE_VP", "ORACLE_VRC")


class DeadlockError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoreConfig:
    policy: str = "BASELINE"
    consistency: str = "TSO"          # TSO casts memory-order shadows, RC does not
    width: int = 8                    # fetch/issue/commit width
    rob_size: int = 192
    iq_size: int = 64
    lq_size: int = 48
    sq_size: int = 32
    alu_units: int = 4
    mul_units: int = 1
    mem_ports: int = 2
    redirect_penalty: int = 12
    sb_capacity: int = 64
    rq_capacity: int = 64
    deadlock_cycles: int = 100_000
    record_load_timing: bool = False
    cache: CacheConfig = field(default_factory=CacheConfig)
    vp: VpConfig = field(default_factory=VpConfig)
    vrc: VrcConfig = field(default_factory=VrcConfig)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.consistency not in ("TSO", "RC"):
            raise ValueError(f"unknown consistency model {self.consistency!r}")
        if self.width < 1 or self.rob_size < self.iq_size:
            raise ValueError("width >= 1 and ROB >= IQ required")


@dataclass(frozen=True, slots=True)
class ProbeSpec:
    branch_seq: int
    load_addrs: tuple[int, ...]


@dataclass
class RunResult:
    policy: str
    consistency: str
    cycles: int
    committed: int
    counters: dict
    memhier_digest: str
    mutation_log: MutationLog
    committed_values: list
    committed_regs: list
    validation_completions: list        # (seq, cycle) in completion order
    mean_slice_cycles: float | None
    load_timing: dict                   # seq -> (unshadow, issue, value_ready)
    shadow_stats: tuple                 # (shadowed fraction, mean shadows/load)


# entry states
DISP = "DISPATCHED"
DELAYED = "DELAYED"
PREDICTED = "PREDICTED"
RECOMPUTING = "RECOMPUTING"
AWAIT_VAL = "AWAIT_VALIDATION"
DONE_ST = "DONE"


class _Entry:
    __slots__ = (
        "seq", "ins", "state", "issued", "value", "value_ready", "complete",
        "addr_ready", "shadowed", "sb_e", "sb_c", "sb_d", "sb_m",
        "addr_writers", "data_writers", "predicted", "used_prediction",
        "replay_floor", "in_ready", "iq_held", "deferred", "unshadow_cycle",
        "dispatch_cycle", "issue_at",
    )

    def __init__(self, seq, ins, now):
        self.seq = seq
        self.ins = ins
        self.state = DISP
        self.issued = False
        self.value = None
        self.value_ready = None
        self.complete = None
        self.addr_ready = None
        self.shadowed = False
        self.sb_e = self.sb_c = self.sb_d = self.sb_m = None
        self.addr_writers = ()
        self.data_writers = ()
        self.predicted = None
        self.used_prediction = False
        self.replay_floor = 0
        self.in_ready = False
        self.iq_held = False
        self.deferred = False
        self.unshadow_cycle = None
        self.dispatch_cycle = now
        self.issue_at = None


class _Probe:
    __slots__ = ("index", "addr", "done", "squashed", "key")

    def __init__(self, index, addr):
        self.index = index
        self.addr = addr
        self.done = False
        self.squashed = False
        self.key = ("probe", index)


class _Sim:
    def __init__(self, trace: Trace, annotations: AnnotationTable | None,
                 config: CoreConfig, probe: ProbeSpec | None):
        self.trace = trace
        self.config = config
        self.policy = config.policy
        self.secure = config.policy != "BASELINE"
        self.n = len(trace)
        if probe is not None:
            if not 0 <= probe.branch_seq < self.n:
                raise ValueError("probe site out of range")
            site = trace[probe.branch_seq]
            if site.kind != "BRANCH" or site.br.predicted_correctly:
                raise ValueError("probe site is not a mispredicted branch")
        self.probe_spec = probe
        self.probes: list[_Probe] = []
        self.probe_branch_resolved = False

        self.log = MutationLog()
        self.mem = MemHierState(config.cache, log=self.log)
        self.sb = ShadowState(config.sb_capacity, config.rq_capacity)
        self.vp = VpState(config.vp) if config.policy == "VP" else None
        self.annotations = annotations or AnnotationTable()
        vrc_cfg = config.vrc
        if config.policy == "VRC2" and vrc_cfg.clamp_cycles is None:
            vrc_cfg = VrcConfig(
                hist_capacity=vrc_cfg.hist_capacity, queue_depth=vrc_cfg.queue_depth,
                delivery_cycles=vrc_cfg.delivery_cycles, lossy_tags=vrc_cfg.lossy_tags,
                clamp_cycles=2, allow_mutable=vrc_cfg.allow_mutable)
        needs_engine = config.policy in ("VRC", "VRC2", "ORACLE_VRC")
        self.vrc = VrcState(self.annotations, vrc_cfg,
                            live_reader=self._live_reg_value) if needs_engine else None

        # per-register writer index (program order), for dataflow queries
        self.writers_index: dict[int, list[int]] = defaultdict(list)
        for ins in trace.instructions:
            if ins.dst is not None:
                self.writers_index[ins.dst].append(ins.seq)

        self.entries: list[_Entry | None] = [None] * self.n
        self.consumers: dict[int, list[tuple[int, str]]] = defaultdict(list)
        self.last_writer: dict[int, int] = {}

        self.now = 0
        self.next_dispatch = 0
        self.commit_head = 0
        self.committed = 0
        self.last_commit_cycle = 0
        self.iq_used = 0
        self.lq_used = 0
        self.sq_used = 0
        self.live_stores: list[int] = []       # dispatched, uncommitted store seqs

        self.events: list = []                  # (cycle, order, kind, payload)
        self._event_order = 0
        self.ready_heap: list = []              # (ready_at, seq)
        self.ready_pool: set[int] = set()
        self.pending_nonspec: deque[int] = deque()
        self.pending_validation: deque[int] = deque()
        self.redirect_until: int | None = None  # None: clear; -1: until resolve
        self.redirect_branch: int | None = None

        self.committed_values: list = [None] * self.n
        self.committed_regs = [0] * 64
        self.validation_completions: list = []
        self.load_timing: dict = {}
        self.counters = defaultdict(int)

    # ------------------------------------------------------------------ events

    def _schedule(self, cycle: int, kind: str, payload) -> None:
        heapq.heappush(self.events, (cycle, self._event_order, kind, payload))
        self._event_order += 1

    def _process_events(self) -> bool:
        any_event = False
        while self.events and self.events[0][0] <= self.now:
            _, _, kind, payload = heapq.heappop(self.events)
            any_event = True
            if kind == "resolve":
                if payload is not None:
                    self.sb.resolve(payload)
            elif kind == "branch_resolved":
                self._branch_resolved(payload)
            elif kind == "predict_done":
                self._predict_done(payload)
            elif kind == "validation_done":
                self._validation_done(payload)
        return any_event

    # ------------------------------------------------------------- value wiring

    def _writer_before(self, reg: int, seq: int) -> int | None:
        seqs = self.writers_index.get(reg)
        if not seqs:
            return None
        i = bisect.bisect_left(seqs, seq)
        return seqs[i - 1] if i > 0 else None

    def _live_reg_value(self, reg: int, load_seq: int):
        """Architectural value of `reg` at the load's program point, or None
        while its producer has not produced yet (the engine stalls)."""
        wseq = self._writer_before(reg, load_seq)
        if wseq is None:
            return 0
        e = self.entries[wseq]
        if e is None or e.value_ready is None:
            return None
        return e.value

    def _operand_value(self, reg: int, seq: int) -> int:
        wseq = self._writer_before(reg, seq)
        if wseq is None:
            return 0
        return self.entries[wseq].value or 0

    def _producers_known(self, writers) -> bool:
        return all(self.entries[w] is not None and
                   self.entries[w].value_ready is not None for w in writers)

    def _producers_ready_at(self, writers, floor: int) -> int:
        at = floor
        for w in writers:
            at = max(at, self.entries[w].value_ready)
        return at

    def _wake(self, producer_seq: int) -> None:
        for cseq, _role in self.consumers.get(producer_seq, ()):
            e = self.entries[cseq]
            if e is not None:
                self._reschedule(e)

    def _reschedule(self, e: _Entry) -> None:
        ins = e.ins
        if ins.kind in ("ALU", "BRANCH"):
            if e.issued or not self._producers_known(e.data_writers):
                return
            ready = self._producers_ready_at(
                e.data_writers, max(e.replay_floor, e.dispatch_cycle + 1))
            self._push_ready(e, ready)
        elif ins.kind == "LOAD":
            if e.issued or e.state != DISP or e.seq in self.pending_nonspec:
                return
            if not self._producers_known(e.addr_writers):
                return
            e.addr_ready = self._producers_ready_at(
                e.addr_writers, e.dispatch_cycle) + 1
            self._push_ready(e, max(e.addr_ready, e.replay_floor))
        elif ins.kind == "STORE":
            self._update_store(e)

    def _push_ready(self, e: _Entry, ready_at: int) -> None:
        if not e.in_ready:
            e.in_ready = True
            heapq.heappush(self.ready_heap, (max(ready_at, self.now + 1), e.seq))

    def _update_store(self, e: _Entry) -> None:
        """Recompute a store's address/data readiness; resolves the
        store-address shadow once the address is known."""
        if e.addr_ready is None and self._producers_known(e.addr_writers):
            e.addr_ready = self._producers_ready_at(
                e.addr_writers, e.dispatch_cycle) + 1
            self._schedule(e.addr_ready, "resolve", e.sb_d)
            e.sb_d = None
        if e.addr_ready is not None and self._producers_known(e.data_writers):
            data_ready = self._producers_ready_at(e.data_writers, 0)
            e.complete = max(e.addr_ready, data_ready, e.dispatch_cycle + 1)
            if e.ins.may_fault and e.sb_e is not None:
                self._schedule(e.complete, "resolve", e.sb_e)
                e.sb_e = None
            self._release_iq(e)

    def _release_iq(self, e: _Entry) -> None:
        if e.iq_held:
            e.iq_held = False
            self.iq_used -= 1

    # ------------------------------------------------------------------ dispatch

    def _dispatch(self) -> bool:
        if self.redirect_until is not None and self.redirect_until >= 0 \
                and self.now >= self.redirect_until:
            self.redirect_until = None
        dispatched = 0
        while dispatched < self.config.width and self.next_dispatch < self.n:
            if self.redirect_until is not None:
                break
            seq = self.next_dispatch
            ins = self.trace[seq]
            if seq - self.commit_head >= self.config.rob_size:
                break
            casts = int(ins.may_fault) + int(ins.kind == "BRANCH") + \
                int(ins.kind == "STORE") + \
                int(ins.kind == "LOAD" and self._casts_order_shadow())
            if len(self.sb._sb) + casts > self.config.sb_capacity:
                break
            if ins.kind != "NOP" and self.iq_used >= self.config.iq_size:
                break
            if ins.kind == "LOAD" and (self.lq_used >= self.config.lq_size
                                       or self.sb.rq_full()):
                break
            if ins.kind == "STORE" and self.sq_used >= self.config.sq_size:
                break
            e = _Entry(seq, ins, self.now)
            self.entries[seq] = e
            self._dispatch_entry(e)
            self.next_dispatch += 1
            dispatched += 1
        return dispatched > 0

    def _casts_order_shadow(self) -> bool:
        if self.config.consistency == "TSO":
            return True
        # under RC, value-predicted loads still serialize their validations
        return self.policy in ("VP", "ORACLE_VP")

    def _dispatch_entry(self, e: _Entry) -> None:
        ins = e.ins
        now = self.now
        self.counters[f"dispatched_{ins.kind.lower()}"] += 1
        if ins.kind == "LOAD":
            e.shadowed = not self.sb.register_load(e.seq)
            if not e.shadowed:
                e.unshadow_cycle = now
        if ins.may_fault:
            e.sb_e = self.sb.cast(ShadowKind.E, e.seq)
        if ins.kind == "BRANCH":
            e.sb_c = self.sb.cast(ShadowKind.C, e.seq)
            if not ins.br.predicted_correctly:
                self.redirect_until = -1  # blocked until the branch resolves
                self.redirect_branch = e.seq
            if self.probe_spec is not None and e.seq == self.probe_spec.branch_seq:
                self.probes = [_Probe(i, a)
                               for i, a in enumerate(self.probe_spec.load_addrs)]
        elif ins.kind == "STORE":
            e.sb_d = self.sb.cast(ShadowKind.D, e.seq)
        elif ins.kind == "LOAD" and self._casts_order_shadow():
            kind = ShadowKind.M if self.config.consistency == "TSO" else ShadowKind.VP
            e.sb_m = self.sb.cast(kind, e.seq)

        if ins.kind in ("ALU", "BRANCH"):
            e.data_writers = tuple(w for w in
                                   (self.last_writer.get(r) for r in ins.srcs)
                                   if w is not None)
            for w in set(e.data_writers):
                self.consumers[w].append((e.seq, "src"))
            e.iq_held = True
            self.iq_used += 1
            self._reschedule(e)
        elif ins.kind == "LOAD":
            e.addr_writers = tuple(w for w in
                                   (self.last_writer.get(r) for r in ins.srcs)
                                   if w is not None)
            for w in set(e.addr_writers):
                self.consumers[w].append((e.seq, "addr"))
            e.iq_held = True
            self.iq_used += 1
            self.lq_used += 1
            self._reschedule(e)
        elif ins.kind == "STORE":
            data_w = self.last_writer.get(ins.srcs[0]) if ins.srcs else None
            e.data_writers = (data_w,) if data_w is not None else ()
            e.addr_writers = tuple(w for w in
                                   (self.last_writer.get(r) for r in ins.srcs[1:])
                                   if w is not None)
            for w in set(e.addr_writers):
                self.consumers[w].append((e.seq, "addr"))
            for w in set(e.data_writers):
                self.consumers[w].append((e.seq, "data"))
            e.iq_held = True
            self.iq_used += 1
            self.sq_used += 1
            self.live_stores.append(e.seq)
            self._update_store(e)
        else:  # NOP
            e.complete = now + 1
            if ins.may_fault and e.sb_e is not None:
                self._schedule(e.complete, "resolve", e.sb_e)
                e.sb_e = None
        if ins.dst is not None:
            self.last_writer[ins.dst] = e.seq

    # ------------------------------------------------------------------ issue

    def _collect_candidates(self) -> list[tuple[int, str]]:
        while self.ready_heap and self.ready_heap[0][0] <= self.now:
            _, seq = heapq.heappop(self.ready_heap)
            e = self.entries[seq]
            if e is not None and e.in_ready:
                e.in_ready = False
                self.ready_pool.add(seq)
        cands = [(seq, "ready") for seq in self.ready_pool]
        cands += [(seq, "nonspec") for seq in self.pending_nonspec]
        cands += [(seq, "validate") for seq in self.pending_validation]
        cands.sort()
        return cands

    def _take_fu(self, budget, kind: str) -> bool:
        if budget[kind] > 0:
            budget[kind] -= 1
            self.counters["fu_ops"] += 1
            return True
        return False

    def _issue_phase(self) -> bool:
        budget = {"alu": self.config.alu_units, "mul": self.config.mul_units,
                  "port": self.config.mem_ports, "slots": self.config.width}
        any_issued = False
        for seq, source in self._collect_candidates():
            if budget["slots"] <= 0:
                break
            e = self.entries[seq]
            if e is None:
                continue
            if source == "ready":
                if seq in self.ready_pool and self._try_issue_ready(e, budget):
                    self.ready_pool.discard(seq)
                    any_issued = True
            elif source == "nonspec":
                if self._try_issue_nonspec(e, budget):
                    self.pending_nonspec.remove(seq)
                    any_issued = True
            else:
                if self._try_issue_validation(e, budget):
                    self.pending_validation.remove(seq)
                    any_issued = True
        engine_worked = self._engine_tick(budget)
        return any_issued or engine_worked

    def _try_issue_ready(self, e: _Entry, budget) -> bool:
        ins = e.ins
        now = self.now
        if ins.kind in ("ALU", "BRANCH"):
            if not self._producers_known(e.data_writers):
                return True  # producers were replay-reset; rescheduled on wake
            ready = self._producers_ready_at(e.data_writers, 0)
            if ready > now:
                self._push_ready(e, ready)
                return True
            kind = "mul" if ins.alu_op == "MUL" else "alu"
            if not self._take_fu(budget, kind):
                return False
            budget["slots"] -= 1
            e.issued = True
            lat = ALU_LATENCY[ins.alu_op] if ins.kind == "ALU" else 1
            if ins.kind == "ALU":
                ops = [self._operand_value(r, e.seq) for r in ins.srcs]
                if ins.imm is not None:
                    ops.append(ins.imm)
                e.value = alu_eval(ins.alu_op, ops)
            e.value_ready = now + lat
            e.complete = now + lat
            e.state = DONE_ST
            self._release_iq(e)
            if ins.kind == "BRANCH":
                self._schedule(now + 1, "branch_resolved", e.seq)
            if ins.may_fault and e.sb_e is not None:
                self._schedule(e.complete, "resolve", e.sb_e)
                e.sb_e = None
            self._wake(e.seq)
            return True
        if ins.kind == "LOAD":
            return self._try_issue_load(e, budget)
        return True

    # -- load paths ---------------------------------------------------------------

    def _forwarding_store(self, e: _Entry):
        """Youngest older uncommitted store with a known overlapping address."""
        ins = e.ins
        for sseq in reversed(self.live_stores):
            if sseq >= e.seq:
                continue
            se = self.entries[sseq]
            if se is None or se.addr_ready is None or se.addr_ready > self.now:
                continue
            si = se.ins
            if si.mem_addr < ins.mem_addr + ins.mem_size and \
                    ins.mem_addr < si.mem_addr + si.mem_size:
                exact = (si.mem_addr == ins.mem_addr and si.mem_size == ins.mem_size)
                return se, exact
        return None, False

    def _try_forward(self, e: _Entry, budget):
        """Returns True (forwarded), False (blocked on a store), or None."""
        se, exact = self._forwarding_store(e)
        if se is None:
            return None
        if not exact:
            return False  # wait for the partially overlapping store to commit
        if not self._producers_known(se.data_writers) or \
                self._producers_ready_at(se.data_writers, 0) > self.now:
            return False  # store data still in flight
        budget["slots"] -= 1
        self.counters["store_forwards"] += 1
        self._finish_load(e, e.ins.mem_value, self.now + 1)
        return True

    def _try_issue_load(self, e: _Entry, budget) -> bool:
        now = self.now
        fwd = self._try_forward(e, budget)
        if fwd is not None:
            return bool(fwd)  # blocked loads stay in the pool and retry
        if budget["port"] <= 0:
            return False
        budget["port"] -= 1
        self.counters["load_lookups"] += 1
        if not (self.secure and e.shadowed):
            speculative = e.shadowed  # only possible under BASELINE
            if speculative and self.mem.lookup(e.ins.mem_addr).kind == L1_MISS:
                self.counters["shadowed_l1_misses"] += 1
            ready, stalled = self.mem.access_load(
                e.ins.mem_addr, now, defer_replacement=False, cause_seq=e.seq,
                speculative=speculative)
            if stalled:
                self.counters["mshr_stalls"] += 1
                budget["port"] += 1
                return False
            budget["slots"] -= 1
            self._finish_load(e, e.ins.mem_value, ready)
            return True
        # secure policy, shadowed load
        lk = self.mem.lookup(e.ins.mem_addr)
        if lk.kind == L1_HIT:
            budget["slots"] -= 1
            ready, _ = self.mem.access_load(
                e.ins.mem_addr, now, defer_replacement=True, cause_seq=e.seq,
                speculative=True, defer_key=e.seq)
            e.deferred = True
            self._finish_load(e, e.ins.mem_value, ready)
            return True
        if lk.kind == MSHR_HIT:
            budget["slots"] -= 1
            self.counters["mshr_wait_loads"] += 1
            self._finish_load(
                e, e.ins.mem_value,
                max(now + self.config.cache.l1_latency, lk.ready_cycle))
            return True
        # shadowed true L1 miss
        self.counters["shadowed_l1_misses"] += 1
        budget["slots"] -= 1
        e.issue_at = now
        if self.policy == "DOM":
            self._delay_load(e)
        elif self.policy in ("VP", "ORACLE_VP"):
            self._predict_load(e)
        elif self.policy in ("VRC", "VRC2"):
            decision = self.vrc.rcmp_decide(e.ins.pc, True, L1_MISS)
            self.counters[f"rcmp_{decision.value.lower()}"] += 1
            if decision is RcmpDecision.RECOMPUTE:
                self.vrc.enqueue(self.vrc.slice_for_pc(e.ins.pc), e.seq, e.seq)
                e.state = RECOMPUTING
                self.counters["recomputes"] += 1
                self._release_iq(e)
            else:
                self._delay_load(e)
        else:  # ORACLE_VRC
            self.vrc.enqueue_oracle(e.seq, e.seq, e.ins.mem_value)
            e.state = RECOMPUTING
            self.counters["recomputes"] += 1
            self._release_iq(e)
        return True

    def _delay_load(self, e: _Entry) -> None:
        e.state = DELAYED
        self.counters["delayed_loads"] += 1

    def _predict_load(self, e: _Entry) -> None:
        if self.policy == "ORACLE_VP":
            value, confident = e.ins.mem_value, True
        else:
            pred = self.vp.predict(e.ins.pc)
            value, confident = (pred.value, pred.confident) if pred else (0, False)
        if not confident:
            self._delay_load(e)
            return
        e.predicted = value
        self.counters["predicted_loads"] += 1
        self._schedule(self.now + self.config.vp.predict_latency,
                       "predict_done", e.seq)

    def _finish_load(self, e: _Entry, value: int, ready: int) -> None:
        e.issued = True
        e.state = DONE_ST
        e.value = value
        e.value_ready = ready
        e.complete = ready
        self._release_iq(e)
        self._resolve_perform_shadows(e, ready)
        if self.config.record_load_timing:
            issue = e.issue_at if e.issue_at is not None else self.now
            self.load_timing[e.seq] = (e.unshadow_cycle, issue, ready)
        self._wake(e.seq)

    def _resolve_perform_shadows(self, e: _Entry, at: int) -> None:
        if e.sb_m is not None:
            self._schedule(at, "resolve", e.sb_m)
            e.sb_m = None
        if e.sb_e is not None:
            self._schedule(at, "resolve", e.sb_e)
            e.sb_e = None

    def _try_issue_nonspec(self, e: _Entry, budget) -> bool:
        """Delayed or fallback load reissuing once unshadowed, program order."""
        e.issue_at = self.now
        fwd = self._try_forward(e, budget)
        if fwd is not None:
            return bool(fwd)
        if budget["port"] <= 0:
            return False
        budget["port"] -= 1
        ready, stalled = self.mem.access_load(
            e.ins.mem_addr, self.now, defer_replacement=False, cause_seq=e.seq,
            speculative=False)
        if stalled:
            self.counters["mshr_stalls"] += 1
            budget["port"] += 1
            return False
        budget["slots"] -= 1
        self._finish_load(e, e.ins.mem_value, ready)
        return True

    def _try_issue_validation(self, e: _Entry, budget) -> bool:
        if budget["port"] <= 0:
            return False
        budget["port"] -= 1
        ready, stalled = self.mem.access_load(
            e.ins.mem_addr, self.now, defer_replacement=False, cause_seq=e.seq,
            speculative=False)
        if stalled:
            self.counters["mshr_stalls"] += 1
            budget["port"] += 1
            return False
        budget["slots"] -= 1
        self.counters["validations"] += 1
        self._schedule(ready, "validation_done", e.seq)
        return True

    # ------------------------------------------------------------------ event handlers

    def _branch_resolved(self, seq: int) -> None:
        e = self.entries[seq]
        if e.sb_c is not None:
            self.sb.resolve(e.sb_c)
            e.sb_c = None
        if self.redirect_branch == seq:
            self.redirect_until = self.now + self.config.redirect_penalty
            self.redirect_branch = None
        if self.probes and self.probe_spec.branch_seq == seq:
            for p in self.probes:
                if not p.done:
                    p.squashed = True
                self.mem.squash_deferred(p.key)
            self.probe_branch_resolved = True

    def _predict_done(self, seq: int) -> None:
        e = self.entries[seq]
        if e.state != DISP or e.predicted is None:
            return
        e.state = PREDICTED
        e.used_prediction = True
        e.value = e.predicted
        e.value_ready = self.now
        self._release_iq(e)
        self._wake(e.seq)
        if not e.shadowed:
            # unshadowed while the prediction was in flight: validate now
            e.state = AWAIT_VAL
            self.pending_validation.append(seq)

    def _validation_done(self, seq: int) -> None:
        e = self.entries[seq]
        actual = e.ins.mem_value
        self.validation_completions.append((seq, self.now))
        if e.value != actual:
            self.counters["vp_mispredicts"] += 1
            e.value = actual
            e.value_ready = self.now
            self._replay_dependents(seq, self.now)
        e.state = DONE_ST
        e.complete = self.now
        self._resolve_perform_shadows(e, self.now)
        if self.config.record_load_timing:
            self.load_timing[e.seq] = (e.unshadow_cycle, None, self.now)

    def _replay_dependents(self, seq: int, correct_cycle: int) -> None:
        """Selective replay: computation that consumed a mispredicted value
        re-executes after the redirect penalty; memory accesses stand."""
        floor = correct_cycle + self.config.redirect_penalty
        stack = [seq]
        seen = set()
        while stack:
            p = stack.pop()
            for cseq, _role in self.consumers.get(p, ()):
                if cseq in seen:
                    continue
                seen.add(cseq)
                ce = self.entries[cseq]
                if ce is None:
                    continue
                if ce.ins.kind == "ALU" and ce.issued:
                    ce.issued = False
                    ce.state = DISP
                    ce.value = None
                    ce.value_ready = None
                    ce.complete = None
                    ce.replay_floor = max(ce.replay_floor, floor)
                    self.counters["replayed_ops"] += 1
                    self._reschedule(ce)
                    stack.append(cseq)
                elif ce.ins.kind == "STORE":
                    ce.complete = None
                    self._update_store(ce)

    # ------------------------------------------------------------------ unshadow

    def _poll_unshadowed(self) -> bool:
        released = self.sb.poll_unshadowed()
        for seq in released:
            e = self.entries[seq]
            e.shadowed = False
            e.unshadow_cycle = self.now
            self.mem.apply_deferred(seq, self.now, seq)
            if e.state == DELAYED:
                e.state = DISP
                self.pending_nonspec.append(seq)
            elif e.state == PREDICTED:
                e.state = AWAIT_VAL
                self.pending_validation.append(seq)
            elif e.state == RECOMPUTING:
                if self.vrc is not None and self.vrc.cancel_queued(seq):
                    self.counters["cancelled_recomputes"] += 1
                    e.state = DISP
                    self.pending_nonspec.append(seq)
                # an already-running slice is left to finish
        return bool(released)

    # ------------------------------------------------------------------ engine

    def _engine_tick(self, budget) -> bool:
        if self.vrc is None:
            return False
        status, payload = self.vrc.step(self.now,
                                        lambda k: self._take_fu(budget, k))
        while self.vrc.aborted:
            self._recompute_fallback(self.vrc.aborted.pop())
        if status == DONE:
            dest, value, finish = payload
            e = self.entries[dest]
            if value != e.ins.mem_value:
                self.counters["unsound_recomputes"] += 1
            self.counters["recompute_done"] += 1
            self._finish_load(e, value, finish)
            return True
        if status == EXC_FALLBACK:
            self.counters["exc_fallbacks"] += 1
            self._recompute_fallback(payload)
            return True
        return status == "BUSY"

    def _recompute_fallback(self, seq: int) -> None:
        e = self.entries[seq]
        if e.state != RECOMPUTING:
            return
        if e.shadowed:
            e.state = DELAYED
            self.counters["delayed_loads"] += 1
        else:
            e.state = DISP
            self.pending_nonspec.append(seq)

    # ------------------------------------------------------------------ commit

    def _commit(self) -> bool:
        done = 0
        while done < self.config.width and self.commit_head < self.next_dispatch:
            e = self.entries[self.commit_head]
            if e is None:
                break
            if e.ins.kind == "STORE" and e.complete is None:
                self._update_store(e)
            if e.complete is None or e.complete > self.now:
                break
            if e.ins.kind == "LOAD" and e.state != DONE_ST:
                break
            if e.ins.kind == "STORE":
                _, stalled = self.mem.access_store(e.ins.mem_addr, self.now, e.seq)
                if stalled:
                    self.counters["store_commit_stalls"] += 1
                    break
                self.sq_used -= 1
                self.live_stores.remove(e.seq)
                if self.vrc is not None:
                    self.vrc.invalidate_on_store(
                        e.ins.mem_addr, e.ins.mem_size, store_pc=e.ins.pc)
                e.value = self._operand_value(e.ins.srcs[0], e.seq) \
                    if e.ins.srcs else None
            if e.ins.kind == "LOAD":
                self.lq_used -= 1
                if self.vp is not None:
                    self.vp.train(e.ins.pc, e.ins.mem_value,
                                  was_correct=(e.predicted == e.ins.mem_value)
                                  if e.used_prediction else None)
            if e.ins.kind == "BRANCH" and self.vp is not None:
                self.vp.notify_branch(e.ins.br.taken)
            if self.vrc is not None and e.seq in self.annotations.rec_sites:
                for key, value in self.annotations.rec_sites[e.seq]:
                    self.vrc.rec_checkpoint(key, value)
            if e.ins.kind == "STORE":
                self.committed_values[e.seq] = None
            else:
                self.committed_values[e.seq] = e.value
            if e.ins.dst is not None:
                self.committed_regs[e.ins.dst] = e.value
            self.commit_head += 1
            self.committed += 1
            done += 1
            self.last_commit_cycle = self.now
        return done > 0

    # ------------------------------------------------------------------ probes

    def _probe_tick(self) -> bool:
        if not self.probes or self.probe_branch_resolved:
            return False
        branch = self.entries[self.probe_spec.branch_seq]
        if branch is None or self.now <= branch.dispatch_cycle:
            return False
        acted = False
        for p in self.probes:
            if p.done or p.squashed:
                continue
            if not self.secure:
                _, stalled = self.mem.access_load(
                    p.addr, self.now, defer_replacement=False,
                    cause_seq=self.probe_spec.branch_seq, speculative=True,
                    probe=True)
                if not stalled:
                    p.done = True
                    acted = True
                continue
            # secure policies: a wrong-path probe may only take a deferred-
            # replacement hit; anything else stays delayed until the squash
            lk = self.mem.lookup(p.addr)
            if lk.kind == L1_HIT:
                self.mem.access_load(p.addr, self.now, defer_replacement=True,
                                     cause_seq=self.probe_spec.branch_seq,
                                     speculative=True, probe=True,
                                     defer_key=p.key)
            p.done = True
            acted = True
        return acted

    # ------------------------------------------------------------------ main loop

    def run(self) -> RunResult:
        if self.n == 0:
            return self._result(0)
        while self.commit_head < self.n:
            progress = False
            self.mem.advance(self.now)
            progress |= self._process_events()
            progress |= self._commit()
            progress |= self._poll_unshadowed()
            progress |= self._issue_phase()
            progress |= self._dispatch()
            progress |= self._probe_tick()
            if self.commit_head >= self.n:
                break
            if self.now - self.last_commit_cycle > self.config.deadlock_cycles:
                raise DeadlockError(self._deadlock_dump())
            self._advance_time(progress)
        return self._result(self.now + 1)

    def _advance_time(self, progress: bool) -> None:
        if progress:
            self.now += 1
            return
        candidates = []
        if self.events:
            candidates.append(self.events[0][0])
        nf = self.mem.next_fill_cycle()
        if nf is not None:
            candidates.append(nf)
        if self.ready_heap:
            candidates.append(self.ready_heap[0][0])
        if self.redirect_until is not None and self.redirect_until >= 0:
            candidates.append(self.redirect_until)
        head = self.entries[self.commit_head] if self.commit_head < self.n else None
        if head is not None and head.complete is not None:
            candidates.append(head.complete)
        future = [c for c in candidates if c > self.now]
        if not future:
            # nothing scheduled and nothing runnable: creep and let the
            # deadlock detector trip if this persists
            self.now += 1
            return
        self.now = min(future)

    def _deadlock_dump(self) -> str:
        head = self.entries[self.commit_head]
        return "; ".join([
            f"no commit for {self.config.deadlock_cycles} cycles at cycle {self.now}",
            f"policy={self.policy} committed={self.committed}/{self.n}",
            f"head seq={self.commit_head} "
            f"state={head.state if head else 'undispatched'}",
            f"iq={self.iq_used} lq={self.lq_used} sq={self.sq_used}",
            f"ready={len(self.ready_pool)} nonspec={len(self.pending_nonspec)} "
            f"validations={len(self.pending_validation)}",
        ])

    # ------------------------------------------------------------------ results

    def _result(self, cycles: int) -> RunResult:
        c = self.counters
        c["l1_hits"] = self.mem.l1_hits
        c["l1_misses"] = self.mem.l1_misses
        c["mshr_hits"] = self.mem.mshr_hits
        c["l2_hits"] = self.mem.l2_hits
        c["mem_accesses"] = self.mem.mem_accesses
        if self.vp is not None:
            c["vp_lookups"] = self.vp.lookups
            c["vp_updates"] = self.vp.updates
        if self.vrc is not None:
            c["slice_cycles"] = self.vrc.busy_cycles
            c["vrc_struct_accesses"] = self.vrc.struct_accesses
            c["hist_inserts"] = self.vrc.hist_inserts
            c["hist_overflows"] = self.vrc.hist_overflows
            c["slice_invalidations"] = self.vrc.invalidations
        return RunResult(
            policy=self.policy,
            consistency=self.config.consistency,
            cycles=cycles,
            committed=self.committed,
            counters=dict(c),
            memhier_digest=self.mem.snapshot_digest(),
            mutation_log=self.log,
            committed_values=self.committed_values,
            committed_regs=self.committed_regs,
            validation_completions=self.validation_completions,
            mean_slice_cycles=self.vrc.mean_slice_cycles() if self.vrc else None,
            load_timing=self.load_timing,
            shadow_stats=(self.sb.shadowed_load_fraction(),
                          self.sb.mean_shadows_per_load()),
        )


def run(trace: Trace, annotations: AnnotationTable | None = None,
        config: CoreConfig | None = None,
        probe: ProbeSpec | None = None) -> RunResult:
    """Simulate a trace to completion under the configured policy."""
    cfg = config or CoreConfig()
    if cfg.policy in ("VRC", "VRC2") and annotations is None:
        raise ValueError(f"policy {cfg.policy} requires an annotation table")
    return _Sim(trace, annotations, cfg, probe).run()


def inject_transient_probe(trace: Trace, probe: ProbeSpec,
                           annotations: AnnotationTable | None = None,
                           config: CoreConfig | None = None) -> RunResult:
    """Run with an injected wrong-path probe after a mispredicted branch."""
    return run(trace, annotations=annotations, config=config, probe=probe)
