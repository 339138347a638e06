"""Backward recomputation-slice extraction.

For a stored value, the slice is the DAG of arithmetic/logic producers that
regenerates it: walking register def-use edges backwards from the producer of
the store data, intermediate loads are replaced by the producer chain of the
most recent exactly-overlapping store, and the walk bottoms out at immediate
operands, live register values, or checkpointed (Hist) values for registers
that are overwritten before the consuming load runs. Loads, stores and
branches never appear in a slice.

Annotation works per static load pc: a pc is rewritten to recompute only if
every dynamic instance produces the same slice shape, every instance's replay
reproduces the traced value, and (for the conservative immutable mode) no
store touches the producer's bytes between producer and load. Checkpointed
leaf values must be the same across all checkpoint sites of a key, which
makes the recomputed value independent of how far commit lags behind the
consuming load.
"""

from __future__ import annotations

import bisect
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum

from .isa import ALU_LATENCY, alu_eval
from .replay import functional_replay
from .trace import Trace, validate_trace

DEFAULT_MAX_SLICE_LEN = 100

LeafKey = tuple[int, int]  # (consumer static pc, operand slot)


class FailureReason(Enum):
    TOO_LONG = "TOO_LONG"
    NO_PRODUCER = "NO_PRODUCER"
    UNRESOLVABLE_INPUT = "UNRESOLVABLE_INPUT"
    NON_ALU_PRODUCER = "NON_ALU_PRODUCER"


@dataclass(frozen=True, slots=True)
class SliceFailure:
    reason: FailureReason
    detail: str = ""


@dataclass(frozen=True, slots=True)
class Operand:
    kind: str            # CONST | LIVE_REG | HIST | TEMP
    value: int = 0       # CONST payload
    reg: int = -1        # LIVE_REG payload
    key: LeafKey | None = None  # HIST payload
    pos: int = -1        # TEMP payload

    def shape(self):
        if self.kind == "CONST":
            return ("C", self.value)
        if self.kind == "LIVE_REG":
            return ("L", self.reg)
        if self.kind == "HIST":
            return ("H", self.key)
        return ("T", self.pos)


def const_op(value: int) -> Operand:
    return Operand(kind="CONST", value=value)


def live_op(reg: int) -> Operand:
    return Operand(kind="LIVE_REG", reg=reg)


def hist_op(key: LeafKey) -> Operand:
    return Operand(kind="HIST", key=key)


def temp_op(pos: int) -> Operand:
    return Operand(kind="TEMP", pos=pos)


@dataclass(frozen=True, slots=True)
class SliceInstr:
    slice_pos: int
    alu_op: str
    operands: tuple[Operand, ...]

    def shape(self):
        return (self.alu_op, tuple(op.shape() for op in self.operands))

    @property
    def latency(self) -> int:
        return ALU_LATENCY[self.alu_op]


@dataclass(frozen=True, slots=True)
class Slice:
    slice_id: int | None
    instrs: tuple[SliceInstr, ...]
    producer_store_addr: int
    producer_store_size: int
    producer_store_seq: int
    producer_store_pc: int
    root_value: int
    hist_requirements: tuple[tuple[LeafKey, int, int], ...]  # key, producing seq, value
    live_bindings: tuple[tuple[int, int, int], ...]          # reg, producing seq, value
    immutable: bool = False

    def shape(self):
        return (self.producer_store_pc, tuple(i.shape() for i in self.instrs))

    def __len__(self) -> int:
        return len(self.instrs)


@dataclass(slots=True)
class SliceStats:
    load_pcs: int = 0
    annotated_pcs: int = 0
    load_instances: int = 0
    annotated_instances: int = 0
    mean_len: float = 0.0
    max_len: int = 0
    binding_histogram: Counter = field(default_factory=Counter)
    failure_histogram: Counter = field(default_factory=Counter)

    @property
    def static_coverage(self) -> float:
        return self.annotated_pcs / self.load_pcs if self.load_pcs else 0.0

    @property
    def dynamic_coverage(self) -> float:
        return self.annotated_instances / self.load_instances if self.load_instances else 0.0


@dataclass(slots=True)
class AnnotationTable:
    slices: dict[int, Slice] = field(default_factory=dict)
    rcmp_sites: dict[int, int] = field(default_factory=dict)       # load pc -> slice id
    rec_sites: dict[int, list[tuple[LeafKey, int]]] = field(default_factory=dict)
    slice_tags: dict[int, tuple[tuple[int, int], ...]] = field(default_factory=dict)

    def slice_for_pc(self, pc: int) -> Slice | None:
        sid = self.rcmp_sites.get(pc)
        return self.slices.get(sid) if sid is not None else None

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationTable):
            return NotImplemented
        return (self.slices == other.slices
                and self.rcmp_sites == other.rcmp_sites
                and self.rec_sites == other.rec_sites
                and self.slice_tags == other.slice_tags)


class AnnotationFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# trace indexing

class TraceIndex:
    """Def-use and store-overlap indices plus the functional replay, shared
    across all slice constructions for one trace."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.replay = functional_replay(trace)
        self.writers: dict[int, list[int]] = defaultdict(list)
        self.stores_by_byte: dict[int, list[int]] = defaultdict(list)
        for ins in trace.instructions:
            if ins.dst is not None:
                self.writers[ins.dst].append(ins.seq)
            if ins.kind == "STORE":
                for b in ins.mem_bytes():
                    self.stores_by_byte[b].append(ins.seq)

    def last_writer_before(self, reg: int, seq: int) -> int | None:
        seqs = self.writers.get(reg)
        if not seqs:
            return None
        i = bisect.bisect_left(seqs, seq)
        return seqs[i - 1] if i > 0 else None

    def written_between(self, reg: int, after: int, before: int) -> bool:
        """True if reg has a writer w with after < w < before."""
        seqs = self.writers.get(reg)
        if not seqs:
            return False
        i = bisect.bisect_right(seqs, after)
        return i < len(seqs) and seqs[i] < before

    def last_store_overlapping(self, addr: int, size: int, seq: int) -> int | None:
        best = None
        for b in range(addr, addr + size):
            seqs = self.stores_by_byte.get(b)
            if not seqs:
                continue
            i = bisect.bisect_left(seqs, seq)
            if i > 0:
                cand = seqs[i - 1]
                best = cand if best is None else max(best, cand)
        return best

    def single_writer_site(self, addr: int, size: int, pc: int) -> bool:
        """True when every store touching [addr, addr+size) anywhere in the
        trace comes from the one static site `pc`. Multi-writer addresses are
        at best mostly-immutable and need the runtime tag invalidation."""
        for b in range(addr, addr + size):
            for seq in self.stores_by_byte.get(b, ()):
                if self.trace[seq].pc != pc:
                    return False
        return True

    def next_load_overlapping(self, addr: int, size: int, seq: int) -> int | None:
        for ins in self.trace.instructions[seq + 1:]:
            if ins.kind == "LOAD" and ins.mem_addr < addr + size and \
                    addr < ins.mem_addr + ins.mem_size:
                return ins.seq
        return None


# ---------------------------------------------------------------------------
# slice construction

class _Fail(Exception):
    def __init__(self, reason: FailureReason, detail: str = ""):
        self.failure = SliceFailure(reason, detail)


class _Leafable(Exception):
    """The producer cannot be expanded; the consuming operand must bind a
    live or checkpointed register value instead."""


def build_slice(trace: Trace, store_seq: int, max_len: int = DEFAULT_MAX_SLICE_LEN,
                recompute_seq: int | None = None,
                index: TraceIndex | None = None) -> Slice | SliceFailure:
    """Build the backward slice regenerating the value written by
    trace[store_seq]. Returns a SliceFailure (never raises) when the value
    cannot be recomputed; a failed slice is a missed opportunity, not an
    error. `recompute_seq` is the program point the recomputation is
    anticipated at (the consuming load); defaults to the next overlapping
    load, or end of trace."""
    if not 0 <= store_seq < len(trace):
        raise ValueError(f"store_seq {store_seq} out of range")
    store = trace[store_seq]
    if store.kind != "STORE":
        raise ValueError(f"instruction at seq {store_seq} is not a STORE")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    idx = index or TraceIndex(trace)
    if recompute_seq is None:
        nxt = idx.next_load_overlapping(store.mem_addr, store.mem_size, store_seq)
        recompute_seq = nxt if nxt is not None else len(trace)

    nodes: list[SliceInstr] = []
    memo: dict[int, int] = {}
    hist_reqs: dict[LeafKey, tuple[int, int]] = {}
    live_binds: dict[int, tuple[int, int]] = {}
    in_flight = 0  # expansion frames that will each append one node

    def leaf_binding(reg: int, writer: int, consumer_pc: int, slot: int) -> Operand:
        value = idx.replay.results[writer]
        if idx.written_between(reg, writer, recompute_seq):
            key = (consumer_pc, slot)
            prev = hist_reqs.get(key)
            if prev is not None and prev != (writer, value):
                raise _Fail(FailureReason.UNRESOLVABLE_INPUT,
                            f"leaf key {key} needs two different values")
            hist_reqs[key] = (writer, value)
            return hist_op(key)
        live_binds[reg] = (writer, value)
        return live_op(reg)

    def operand_binding(reg: int, consumer_seq: int, consumer_pc: int, slot: int) -> Operand:
        writer = idx.last_writer_before(reg, consumer_seq)
        if writer is None:
            # never written in-trace: the register still holds its initial
            # value at recomputation time, so it reads live
            live_binds[reg] = (-1, 0)
            return live_op(reg)
        try:
            return expand(writer)
        except _Leafable:
            return leaf_binding(reg, writer, consumer_pc, slot)

    def expand(seq: int) -> Operand:
        if seq in memo:
            return temp_op(memo[seq])
        ins = trace[seq]
        if ins.kind == "LOAD":
            st_seq = idx.last_store_overlapping(ins.mem_addr, ins.mem_size, seq)
            if st_seq is None:
                raise _Leafable()
            st = trace[st_seq]
            if st.mem_addr != ins.mem_addr or st.mem_size != ins.mem_size:
                raise _Fail(FailureReason.UNRESOLVABLE_INPUT,
                            f"partial store overlap at seq {st_seq}")
            if not st.srcs:
                raise _Leafable()
            data_writer = idx.last_writer_before(st.srcs[0], st_seq)
            if data_writer is None:
                raise _Leafable()
            return expand(data_writer)
        if ins.kind != "ALU":
            raise _Fail(FailureReason.NON_ALU_PRODUCER,
                        f"{ins.kind} at seq {seq} produces a register")
        nonlocal in_flight
        if len(nodes) + in_flight + 1 > max_len:
            raise _Fail(FailureReason.TOO_LONG, f"slice exceeds {max_len}")
        in_flight += 1
        try:
            operands = [operand_binding(r, seq, ins.pc, slot)
                        for slot, r in enumerate(ins.srcs)]
        finally:
            in_flight -= 1
        if ins.imm is not None:
            operands.append(const_op(ins.imm))
        pos = len(nodes)
        nodes.append(SliceInstr(slice_pos=pos, alu_op=ins.alu_op,
                                operands=tuple(operands)))
        memo[seq] = pos
        return temp_op(pos)

    try:
        if not store.srcs:
            return SliceFailure(FailureReason.NO_PRODUCER, "store carries no register data")
        root_writer = idx.last_writer_before(store.srcs[0], store_seq)
        if root_writer is None:
            return SliceFailure(FailureReason.NO_PRODUCER, "stored value has no producer")
        try:
            root = expand(root_writer)
        except _Leafable:
            return SliceFailure(FailureReason.NO_PRODUCER,
                                "stored value traces back to untraced memory")
        if root.kind != "TEMP" or root.pos != len(nodes) - 1:
            return SliceFailure(FailureReason.UNRESOLVABLE_INPUT, "degenerate root")
    except _Fail as f:
        return f.failure

    s = Slice(
        slice_id=None,
        instrs=tuple(nodes),
        producer_store_addr=store.mem_addr,
        producer_store_size=store.mem_size,
        producer_store_seq=store_seq,
        producer_store_pc=store.pc,
        root_value=store.mem_value,
        hist_requirements=tuple(sorted((k, w, v) for k, (w, v) in hist_reqs.items())),
        live_bindings=tuple(sorted((r, w, v) for r, (w, v) in live_binds.items())),
    )
    if replay_slice(s) != s.root_value:
        return SliceFailure(FailureReason.UNRESOLVABLE_INPUT,
                            "slice inputs do not reproduce the stored value")
    return s


def replay_slice(s: Slice) -> int:
    """Evaluate the slice over its recorded bindings (scratch-file analogue)
    and return the root value. Raises on unbound operands, which would be a
    construction bug."""
    hist = {k: v for k, _, v in s.hist_requirements}
    live = {r: v for r, _, v in s.live_bindings}
    sfile: list[int | None] = [None] * len(s.instrs)
    for ins in s.instrs:
        ops = []
        for o in ins.operands:
            if o.kind == "CONST":
                ops.append(o.value)
            elif o.kind == "LIVE_REG":
                if o.reg not in live:
                    raise KeyError(f"unbound live register {o.reg}")
                ops.append(live[o.reg])
            elif o.kind == "HIST":
                if o.key not in hist:
                    raise KeyError(f"unbound hist key {o.key}")
                ops.append(hist[o.key])
            else:
                if sfile[o.pos] is None:
                    raise KeyError(f"unbound temp {o.pos}")
                ops.append(sfile[o.pos])
        sfile[ins.slice_pos] = alu_eval(ins.alu_op, ops)
    return sfile[-1]


# ---------------------------------------------------------------------------
# whole-trace annotation

def annotate(trace: Trace, max_len: int = DEFAULT_MAX_SLICE_LEN) -> tuple[AnnotationTable, SliceStats]:
    """Build the rewrite plan for a trace: one slice per annotatable static
    load pc, plus checkpoint sites for leaf operands. Deterministic in
    (trace, max_len)."""
    report = validate_trace(trace)
    if not report.ok:
        raise ValueError(f"trace fails validation: {report.violations[:3]}")
    idx = TraceIndex(trace)
    stats = SliceStats()

    loads_by_pc: dict[int, list[int]] = defaultdict(list)
    for ins in trace.instructions:
        if ins.kind == "LOAD":
            loads_by_pc[ins.pc].append(ins.seq)
    stats.load_pcs = len(loads_by_pc)
    stats.load_instances = sum(len(v) for v in loads_by_pc.values())

    candidates: dict[int, list[Slice]] = {}
    for pc in sorted(loads_by_pc):
        instances = loads_by_pc[pc]
        slices: list[Slice] = []
        ok = True
        for lseq in instances:
            load = trace[lseq]
            st_seq = idx.last_store_overlapping(load.mem_addr, load.mem_size, lseq)
            if st_seq is None:
                stats.failure_histogram[FailureReason.NO_PRODUCER] += 1
                ok = False
                break
            st = trace[st_seq]
            if st.mem_addr != load.mem_addr or st.mem_size != load.mem_size:
                stats.failure_histogram[FailureReason.UNRESOLVABLE_INPUT] += 1
                ok = False
                break
            result = build_slice(trace, st_seq, max_len, recompute_seq=lseq, index=idx)
            if isinstance(result, SliceFailure):
                stats.failure_histogram[result.reason] += 1
                ok = False
                break
            if result.root_value != load.mem_value:
                stats.failure_histogram[FailureReason.UNRESOLVABLE_INPUT] += 1
                ok = False
                break
            immutable = idx.single_writer_site(st.mem_addr, st.mem_size, st.pc)
            slices.append(replace(result, immutable=immutable))
        if not ok or not slices:
            continue
        shape = slices[0].shape()
        if any(s.shape() != shape for s in slices[1:]):
            stats.failure_histogram[FailureReason.UNRESOLVABLE_INPUT] += len(slices)
            continue
        candidates[pc] = slices

    # checkpointed leaf values must be globally consistent per key
    key_values: dict[LeafKey, set[int]] = defaultdict(set)
    for slices in candidates.values():
        for s in slices:
            for key, _, value in s.hist_requirements:
                key_values[key].add(value)
    bad_keys = {k for k, vals in key_values.items() if len(vals) > 1}

    table = AnnotationTable()
    next_id = 0
    for pc in sorted(candidates):
        slices = candidates[pc]
        if any(key in bad_keys for s in slices
               for key, _, _ in s.hist_requirements):
            stats.failure_histogram[FailureReason.UNRESOLVABLE_INPUT] += len(slices)
            continue
        rep = replace(slices[0], slice_id=next_id,
                      immutable=all(s.immutable for s in slices))
        table.slices[next_id] = rep
        table.rcmp_sites[pc] = next_id
        table.slice_tags[next_id] = tuple(sorted(
            {(s.producer_store_addr, s.producer_store_size) for s in slices}))
        for s in slices:
            for key, wseq, value in s.hist_requirements:
                entries = table.rec_sites.setdefault(wseq, [])
                if (key, value) not in entries:
                    entries.append((key, value))
        stats.annotated_pcs += 1
        stats.annotated_instances += len(slices)
        next_id += 1

    lens = [len(s.instrs) for s in table.slices.values()]
    stats.mean_len = sum(lens) / len(lens) if lens else 0.0
    stats.max_len = max(lens) if lens else 0
    for s in table.slices.values():
        for ins in s.instrs:
            for op in ins.operands:
                stats.binding_histogram[op.kind] += 1
    return table, stats


# ---------------------------------------------------------------------------
# annotation serialization

def _fmt_key(key: LeafKey) -> str:
    return f"{key[0]:#x}:{key[1]}"


def _parse_key(text: str) -> LeafKey:
    pc, _, slot = text.rpartition(":")
    return (int(pc, 0), int(slot))


def _fmt_operand(op: Operand) -> str:
    if op.kind == "CONST":
        return f"C:{op.value:#x}"
    if op.kind == "LIVE_REG":
        return f"L:{op.reg}"
    if op.kind == "HIST":
        return f"H:{_fmt_key(op.key)}"
    return f"T:{op.pos}"


def _parse_operand(text: str) -> Operand:
    kind, _, payload = text.partition(":")
    if kind == "C":
        return const_op(int(payload, 0))
    if kind == "L":
        return live_op(int(payload))
    if kind == "H":
        return hist_op(_parse_key(payload))
    if kind == "T":
        return temp_op(int(payload))
    raise AnnotationFormatError(f"bad operand {text!r}")


def emit_annotations(table: AnnotationTable) -> str:
    lines = ["A version=1"]
    for sid in sorted(table.slices):
        s = table.slices[sid]
        lines.append(
            f"S slice_id={sid} tag={s.producer_store_addr:#x} size={s.producer_store_size} "
            f"seq={s.producer_store_seq} ppc={s.producer_store_pc:#x} "
            f"root={s.root_value:#x} immutable={int(s.immutable)} len={len(s.instrs)}"
        )
        for ins in s.instrs:
            ops = " ".join(
                f"{chr(ord('a') + i)}={_fmt_operand(o)}" for i, o in enumerate(ins.operands)
            )
            lines.append(f"  P pos={ins.slice_pos} op={ins.alu_op} {ops}")
        for key, wseq, value in s.hist_requirements:
            lines.append(f"  H key={_fmt_key(key)} seq={wseq} val={value:#x}")
        for reg, wseq, value in s.live_bindings:
            lines.append(f"  V reg={reg} seq={wseq} val={value:#x}")
        for addr, size in table.slice_tags.get(sid, ()):
            lines.append(f"  T addr={addr:#x} size={size}")
    for pc in sorted(table.rcmp_sites):
        lines.append(f"R pc={pc:#x} slice={table.rcmp_sites[pc]}")
    for seq in sorted(table.rec_sites):
        for key, value in table.rec_sites[seq]:
            lines.append(f"C seq={seq} key={_fmt_key(key)} val={value:#x}")
    lines.append("")
    return "\n".join(lines)


def load_annotations(data) -> AnnotationTable:
    if hasattr(data, "read"):
        data = data.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    table = AnnotationTable()
    current: dict | None = None

    def finish_current():
        if current is None:
            return
        sid = current["sid"]
        if len(current["instrs"]) != current["len"]:
            raise AnnotationFormatError(
                f"slice {sid}: declared len {current['len']} but "
                f"{len(current['instrs'])} instructions")
        table.slices[sid] = Slice(
            slice_id=sid,
            instrs=tuple(current["instrs"]),
            producer_store_addr=current["tag"],
            producer_store_size=current["size"],
            producer_store_seq=current["seq"],
            producer_store_pc=current["ppc"],
            root_value=current["root"],
            hist_requirements=tuple(current["hist"]),
            live_bindings=tuple(current["live"]),
            immutable=current["immutable"],
        )
        table.slice_tags[sid] = tuple(current["tags"])

    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag = tokens[0]
        fields = dict(tok.partition("=")[::2] for tok in tokens[1:])
        try:
            if tag == "A":
                continue
            elif tag == "S":
                finish_current()
                current = {
                    "sid": int(fields["slice_id"]),
                    "tag": int(fields["tag"], 0),
                    "size": int(fields["size"]),
                    "seq": int(fields["seq"]),
                    "ppc": int(fields["ppc"], 0),
                    "root": int(fields["root"], 0),
                    "immutable": bool(int(fields["immutable"])),
                    "len": int(fields["len"]),
                    "instrs": [], "hist": [], "live": [], "tags": [],
                }
            elif tag == "P":
                ops = tuple(_parse_operand(fields[k]) for k in ("a", "b", "c")
                            if k in fields)
                current["instrs"].append(SliceInstr(
                    slice_pos=int(fields["pos"]), alu_op=fields["op"], operands=ops))
            elif tag == "H":
                current["hist"].append(
                    (_parse_key(fields["key"]), int(fields["seq"]), int(fields["val"], 0)))
            elif tag == "V":
                current["live"].append(
                    (int(fields["reg"]), int(fields["seq"]), int(fields["val"], 0)))
            elif tag == "T":
                current["tags"].append((int(fields["addr"], 0), int(fields["size"])))
            elif tag == "R":
                table.rcmp_sites[int(fields["pc"], 0)] = int(fields["slice"])
            elif tag == "C":
                table.rec_sites.setdefault(int(fields["seq"]), []).append(
                    (_parse_key(fields["key"]), int(fields["val"], 0)))
            else:
                raise AnnotationFormatError(f"line {lineno}: unknown record {tag!r}")
        except (KeyError, ValueError, TypeError) as e:
            raise AnnotationFormatError(f"line {lineno}: {e}") from None
    finish_current()
    for pc, sid in table.rcmp_sites.items():
        if sid not in table.slices:
            raise AnnotationFormatError(
                f"rcmp site {pc:#x} references missing slice {sid}")
    for sid, s in table.slices.items():
        if not s.instrs:
            raise AnnotationFormatError(f"slice {sid} is empty")
    return table
