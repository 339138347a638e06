"""Memory-hierarchy mutation auditing.

Every change to cache tag arrays, LRU stacks, dirty bits or MSHRs flows
through one choke point (MutationLog.append), each entry tagged with the
causing instruction and whether that cause was speculative at the time.
`assert_invisibility` is the security verdict: under a secure policy no
entry may carry a speculative cause. `differential_check` compares a
probe-injected run against a clean run; the observation model is the
externally visible hierarchy state (tags, LRU order, dirty bits and MSHR
allocation history), not timing. Functional-unit and recomputation-engine
contention channels are outside this threat surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Structure(Enum):
    L1_TAG = "L1_TAG"
    L1_LRU = "L1_LRU"
    L1_DIRTY = "L1_DIRTY"
    L2_TAG = "L2_TAG"
    L2_LRU = "L2_LRU"
    L2_DIRTY = "L2_DIRTY"
    MSHR = "MSHR"


@dataclass(frozen=True, slots=True)
class MutationRecord:
    cycle: int
    structure: Structure
    level: int               # 1 or 2
    op: str                  # fill | evict | lru_touch | dirty | mshr_alloc | mshr_free
    line_addr: int
    victim_addr: int | None
    cause_seq: int
    speculative: bool
    probe: bool

    def format_line(self) -> str:
        victim = f"{self.victim_addr:#x}" if self.victim_addr is not None else "-"
        return (
            f"M cycle={self.cycle} struct={self.structure.value} op={self.op} "
            f"line={self.line_addr:#x} victim={victim} cause={self.cause_seq} "
            f"spec={int(self.speculative)} probe={int(self.probe)}"
        )


@dataclass(slots=True)
class MutationLog:
    records: list[MutationRecord] = field(default_factory=list)

    def append(self, record: MutationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def speculative_records(self) -> list[MutationRecord]:
        return [r for r in self.records if r.speculative]

    def committed_records(self) -> list[MutationRecord]:
        """Records attributable to non-speculative (committed/unshadowed) causes."""
        return [r for r in self.records if not r.speculative and not r.probe]

    def export_lines(self) -> str:
        return "\n".join(r.format_line() for r in self.records) + ("\n" if self.records else "")


@dataclass(frozen=True, slots=True)
class InvisibilityVerdict:
    passed: bool
    violators: tuple[MutationRecord, ...]

    def __bool__(self) -> bool:
        return self.passed


def assert_invisibility(log: MutationLog) -> InvisibilityVerdict:
    """PASS iff no mutation was caused by a speculative instruction."""
    violators = tuple(log.speculative_records())
    return InvisibilityVerdict(passed=not violators, violators=violators)


@dataclass(frozen=True, slots=True)
class DifferentialResult:
    equal: bool
    detail: str = ""
    first_divergence: MutationRecord | None = None

    def __bool__(self) -> bool:
        return self.equal


def differential_check(run_a, run_b) -> DifferentialResult:
    """Compare the externally observable hierarchy outcome of two runs.

    Runs are EQUAL when their hierarchy digests match and their mutation
    logs, filtered to committed causes, are identical.
    """
    if run_a.memhier_digest != run_b.memhier_digest:
        return DifferentialResult(False, detail="hierarchy digest mismatch")
    a = run_a.mutation_log.committed_records()
    b = run_b.mutation_log.committed_records()
    for ra, rb in zip(a, b):
        if ra != rb:
            return DifferentialResult(False, detail="mutation log mismatch",
                                      first_divergence=ra)
    if len(a) != len(b):
        longer = a if len(a) > len(b) else b
        return DifferentialResult(False, detail="mutation log length mismatch",
                                  first_divergence=longer[min(len(a), len(b))])
    return DifferentialResult(True)
