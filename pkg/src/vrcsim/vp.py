"""VTAGE-style load value predictor: a last-value base table plus tagged
components indexed by pc hashed with geometrically longer folded slices of
the global branch history. Longest-history tag match provides the
prediction; only saturated confidence counts as usable, and confidence rises
probabilistically (forward probabilistic counters).
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .isa import MASK64


@dataclass(frozen=True)
class VpConfig:
    components: int = 13              # 1 base + 12 tagged
    entries: int = 128
    tag_bits: int = 12
    conf_bits: int = 3
    conf_increment_prob: float = 0.25
    min_history: int = 2
    history_ratio: int = 2
    predict_latency: int = 2
    seed: int = 12345

    def __post_init__(self):
        if self.entries & (self.entries - 1):
            raise ValueError("entries must be a power of two")
        lengths = self.history_lengths()
        if any(b >= a for a, b in zip(lengths[1:], lengths)):
            raise ValueError("history lengths must be strictly increasing")

    def history_lengths(self) -> list[int]:
        return [self.min_history * self.history_ratio ** i
                for i in range(self.components - 1)]

    @property
    def conf_max(self) -> int:
        return (1 << self.conf_bits) - 1


@dataclass(slots=True)
class _Entry:
    tag: int = -1
    value: int = 0
    conf: int = 0
    useful: bool = False
    valid: bool = False


@dataclass(frozen=True, slots=True)
class Prediction:
    value: int
    confident: bool


class VpState:
    def __init__(self, config: VpConfig | None = None):
        self.config = config or VpConfig()
        c = self.config
        self.rng = random.Random(c.seed)
        self.base: list[_Entry] = [_Entry() for _ in range(c.entries)]
        self.tagged: list[list[_Entry]] = [
            [_Entry() for _ in range(c.entries)] for _ in range(c.components - 1)
        ]
        self.hist_lengths = c.history_lengths()
        self.ghist = 0                       # branch outcomes, LSB = youngest
        self.lookups = 0
        self.updates = 0

    # -- indexing ------------------------------------------------------------

    def _fold(self, length: int, bits: int) -> int:
        h = self.ghist & ((1 << length) - 1)
        folded = 0
        while h:
            folded ^= h & ((1 << bits) - 1)
            h >>= bits
        return folded

    def _index(self, pc: int, comp: int) -> int:
        idx_bits = (self.config.entries - 1).bit_length()
        folded = self._fold(self.hist_lengths[comp], idx_bits)
        return (pc ^ (pc >> idx_bits) ^ folded ^ (comp + 1)) & (self.config.entries - 1)

    def _tag(self, pc: int, comp: int) -> int:
        folded = self._fold(self.hist_lengths[comp], self.config.tag_bits)
        return (pc ^ (pc >> self.config.tag_bits) ^ (folded << 1)) & \
            ((1 << self.config.tag_bits) - 1)

    # -- interface -------------------------------------------------------------

    def predict(self, pc: int) -> Prediction | None:
        """Longest tagged match wins, base table as fallback; None if nothing
        matches. Only a saturated confidence counter makes it usable."""
        self.lookups += 1
        provider = self._provider(pc)
        if provider is None:
            return None
        entry = provider[2]
        return Prediction(value=entry.value,
                          confident=entry.conf >= self.config.conf_max)

    def _provider(self, pc: int):
        for comp in range(self.config.components - 2, -1, -1):
            entry = self.tagged[comp][self._index(pc, comp)]
            if entry.valid and entry.tag == self._tag(pc, comp):
                return ("tagged", comp, entry)
        base = self.base[pc & (self.config.entries - 1)]
        if base.valid:
            return ("base", -1, base)
        return None

    def train(self, pc: int, actual: int, was_correct: bool | None = None) -> None:
        """Update on a committed load outcome. Correct predictions push
        confidence up probabilistically; a wrong one resets the provider and
        allocates an entry with longer history. The base table tracks the
        last value, so the most recent trainer wins on aliasing."""
        self.updates += 1
        actual &= MASK64
        provider = self._provider(pc)
        if provider is not None and provider[0] == "tagged":
            _, comp, entry = provider
            correct = entry.value == actual if was_correct is None else \
                (was_correct and entry.value == actual)
            if correct:
                self._bump_conf(entry)
                entry.useful = True
            else:
                entry.conf = 0
                entry.value = actual
                self._allocate(pc, actual, longer_than=comp)
        base = self.base[pc & (self.config.entries - 1)]
        if base.valid and base.value == actual:
            self._bump_conf(base)
        else:
            if base.valid and provider is not None and provider[0] == "base":
                self._allocate(pc, actual, longer_than=-1)
            base.conf = 0
            base.value = actual
        base.valid = True

    def _bump_conf(self, entry: _Entry) -> None:
        if entry.conf < self.config.conf_max and \
                self.rng.random() < self.config.conf_increment_prob:
            entry.conf += 1

    def _allocate(self, pc: int, value: int, longer_than: int) -> None:
        candidates = list(range(longer_than + 1, self.config.components - 1))
        if not candidates:
            return
        comp = candidates[self.rng.randrange(len(candidates))]
        entry = self.tagged[comp][self._index(pc, comp)]
        if entry.valid and entry.useful and self.rng.random() < 0.5:
            entry.useful = False  # age instead of replacing a useful entry
            return
        entry.tag = self._tag(pc, comp)
        entry.value = value
        entry.conf = 0
        entry.useful = False
        entry.valid = True

    def notify_branch(self, outcome: bool) -> None:
        max_len = self.hist_lengths[-1]
        self.ghist = ((self.ghist << 1) | int(outcome)) & ((1 << max_len) - 1)
