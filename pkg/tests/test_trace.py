import pytest
from hypothesis import given, settings, strategies as st

from vrcsim.trace import (
    PATTERNS, SyntheticSpecError, SyntheticWorkloadSpec, Trace, TraceFormatError,
    TraceHeader, TraceInstruction, BranchInfo, emit_trace, gen_synthetic,
    parse_trace, validate_trace, window_trace,
)

HEADER = "H version=1 regs=64\n"


def test_parse_single_alu_record():
    t = parse_trace(HEADER + "I seq=0 pc=0x10 kind=ALU dst=1 srcs=2,3 alu_op=ADD\n")
    assert len(t) == 1
    ins = t[0]
    assert ins.kind == "ALU" and ins.dst == 1 and ins.srcs == (2, 3)
    assert ins.alu_op == "ADD"


def test_parse_empty_body():
    t = parse_trace(HEADER)
    assert len(t) == 0
    assert t.header.regs == 64


def test_parse_bad_mem_size_reports_line():
    stream = HEADER + "I seq=0 pc=0x10 kind=LOAD dst=1 mem_addr=0x40 mem_size=3 mem_value=0x1\n"
    with pytest.raises(TraceFormatError, match="out of range") as exc:
        parse_trace(stream)
    assert exc.value.lineno == 2


def test_parse_version_mismatch():
    with pytest.raises(TraceFormatError, match="version mismatch"):
        parse_trace("H version=9 regs=64\n")


def test_parse_register_out_of_range():
    with pytest.raises(TraceFormatError, match="register"):
        parse_trace("H version=1 regs=8\nI seq=0 pc=0x0 kind=ALU dst=9 srcs=1 imm=1 alu_op=ADD\n")


def test_parse_rejects_bytes_and_accepts_them():
    t = parse_trace((HEADER + "I seq=0 pc=0x4 kind=NOP\n").encode())
    assert t[0].kind == "NOP"


def test_parse_arity_check():
    with pytest.raises(TraceFormatError, match="expects 2 operands"):
        parse_trace(HEADER + "I seq=0 pc=0x0 kind=ALU dst=1 srcs=2 alu_op=ADD\n")


def test_validate_consistent_store_load(tb):
    tb.store(0x10, 0x40, 7, srcs=(1,))
    tb.load(0x14, 2, 0x40)
    assert validate_trace(tb.build()).ok


def test_validate_value_inconsistency(tb):
    tb.store(0x10, 0x40, 7, srcs=(1,))
    tb.load(0x14, 2, 0x40, value=8)
    report = validate_trace(tb.build())
    assert not report.ok
    assert "value inconsistency at seq=1" in report.violations[0].message


def test_validate_line_crossing(tb):
    tb.load(0x10, 1, 0x3C, value=0)
    report = validate_trace(tb.build())
    assert any("line crossing" in v.message for v in report.violations)


def test_validate_dense_seq():
    t = Trace(header=TraceHeader(),
              instructions=(TraceInstruction(seq=1, pc=0, kind="NOP"),))
    report = validate_trace(t)
    assert any("non-dense" in v.message for v in report.violations)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_gen_validates_clean_and_roundtrips(pattern):
    spec = SyntheticWorkloadSpec(pattern=pattern, count=3000, seed=5)
    t = gen_synthetic(spec)
    assert len(t) == 3000
    assert validate_trace(t).ok
    assert parse_trace(emit_trace(t)) == t


def test_gen_deterministic():
    spec = SyntheticWorkloadSpec(pattern="POINTER_CHASE", count=1000, seed=7)
    assert emit_trace(gen_synthetic(spec)) == emit_trace(gen_synthetic(spec))


def test_gen_seed_changes_output():
    a = gen_synthetic(SyntheticWorkloadSpec(pattern="MIXED", count=1000, seed=1))
    b = gen_synthetic(SyntheticWorkloadSpec(pattern="MIXED", count=1000, seed=2))
    assert emit_trace(a) != emit_trace(b)


def test_gen_invalid_count():
    with pytest.raises(SyntheticSpecError):
        gen_synthetic(SyntheticWorkloadSpec(pattern="STREAM", count=0))


def test_gen_infeasible_recomputable_without_loads():
    with pytest.raises(SyntheticSpecError):
        gen_synthetic(SyntheticWorkloadSpec(
            pattern="COMPUTE_STORE_LOAD", count=100, load_density=0.0,
            recomputable_fraction=1.0))


def test_gen_bad_density():
    with pytest.raises(SyntheticSpecError):
        gen_synthetic(SyntheticWorkloadSpec(pattern="STREAM", count=100,
                                            branch_density=1.5))


def test_window_trace_renumbers():
    t = gen_synthetic(SyntheticWorkloadSpec(pattern="STREAM", count=500, seed=3))
    w = window_trace(t, skip=100, limit=200)
    assert len(w) == 200
    assert [i.seq for i in w.instructions] == list(range(200))
    # windowing preserves store/load value agreement within the window
    assert not any("inconsisten" in v.message
                   for v in validate_trace(w).violations)


def test_header_notes_roundtrip():
    t = gen_synthetic(SyntheticWorkloadSpec(pattern="STREAM", count=100, seed=1))
    assert t.header.notes
    assert parse_trace(emit_trace(t)).header.notes == t.header.notes


_value = st.integers(min_value=0, max_value=(1 << 64) - 1)


@st.composite
def _instruction_stream(draw):
    n = draw(st.integers(min_value=0, max_value=20))
    instrs = []
    for seq in range(n):
        kind = draw(st.sampled_from(["ALU", "LOAD", "STORE", "BRANCH", "NOP"]))
        pc = draw(st.integers(min_value=0, max_value=1 << 40))
        fault = draw(st.booleans())
        if kind == "ALU":
            op = draw(st.sampled_from(["ADD", "MOV", "CMOV"]))
            nsrc = {"ADD": 2, "MOV": 1, "CMOV": 3}[op]
            use_imm = draw(st.booleans())
            srcs = tuple(draw(st.integers(0, 63))
                         for _ in range(nsrc - (1 if use_imm else 0)))
            imm = draw(st.integers(-1000, 1000)) if use_imm else None
            instrs.append(TraceInstruction(seq=seq, pc=pc, kind=kind, dst=draw(
                st.integers(0, 63)), srcs=srcs, imm=imm, alu_op=op, may_fault=fault))
        elif kind in ("LOAD", "STORE"):
            line = draw(st.integers(0, 1 << 30)) * 64
            size = draw(st.sampled_from([1, 2, 4, 8]))
            offset = draw(st.integers(0, (64 - size) // size)) * size
            common = dict(seq=seq, pc=pc, kind=kind, mem_addr=line + offset,
                          mem_size=size, mem_value=draw(_value), may_fault=fault)
            if kind == "LOAD":
                instrs.append(TraceInstruction(dst=draw(st.integers(0, 63)),
                                               **common))
            else:
                instrs.append(TraceInstruction(srcs=(draw(st.integers(0, 63)),),
                                               **common))
        elif kind == "BRANCH":
            instrs.append(TraceInstruction(
                seq=seq, pc=pc, kind=kind, srcs=(draw(st.integers(0, 63)),),
                br=BranchInfo(draw(st.booleans()), draw(st.booleans())),
                may_fault=fault))
        else:
            instrs.append(TraceInstruction(seq=seq, pc=pc, kind=kind,
                                           may_fault=fault))
    return Trace(header=TraceHeader(), instructions=tuple(instrs))


@settings(max_examples=200, deadline=None, derandomize=True)
@given(_instruction_stream())
def test_roundtrip_property(t):
    assert parse_trace(emit_trace(t)) == t


def test_gen_recomputable_fraction_contract():
    # the slicer, run over the output, must find at least the requested
    # fraction of loads carrying arithmetic-only producer chains
    from vrcsim.slicer import annotate
    for fraction in (0.25, 0.5, 1.0):
        spec = SyntheticWorkloadSpec(pattern="COMPUTE_STORE_LOAD",
                                     count=10_000, seed=1,
                                     recomputable_fraction=fraction)
        _, stats = annotate(gen_synthetic(spec))
        assert stats.dynamic_coverage >= fraction, (fraction, stats.dynamic_coverage)
