"""Deterministic-scheduler exploration of the ring index protocol.

The model drives the package's own admission predicates plus the engine's
index discipline (claim the owned slab, hold it through extension,
advance by the parser count) over randomized documents and schedules,
asserting:

  * a parser never reads a slab the writer has not published,
  * the writer never overwrites a slab a parser still needs (including
    slabs reached by extension), verified with generation stamps,
  * every cell is emitted exactly once,
  * every schedule terminates.
"""

from __future__ import annotations

import random

import pytest

from sheetreader.interleaved import parser_may_read, writer_may_fill

from ring_model import Model, random_document


@pytest.mark.parametrize("n_elements", [2, 3, 4])
@pytest.mark.parametrize("n_parsers", [1, 2, 3])
def test_protocol_random_interleavings(n_elements, n_parsers):
    rng = random.Random(1000 * n_elements + n_parsers)
    trials = 12500  # 9 combinations x 12500 > 1e5 interleavings overall
    for _ in range(trials):
        slab_cells, spans, n_cells = random_document(rng, n_elements)
        model = Model(n_elements, n_parsers, slab_cells, spans, rng)
        model.run()
        assert sorted(model.emitted) == list(range(n_cells)), (
            f"cells lost or duplicated: {sorted(model.emitted)} != 0..{n_cells - 1}"
        )


def test_writer_waits_while_slab_held():
    # writer at unwrapped 6 must wait while any parser holds slab 2 = 6 mod 4
    assert not writer_may_fill(6, [2, 5], 4)
    assert writer_may_fill(6, [3, 5], 4)


def test_known_unsafe_variant_is_caught():
    """Advancing the parser index onto extension slabs (instead of holding
    the owned one) lets the writer overwrite the parser's own later slabs;
    the stamp check must catch that variant."""

    class Unsafe(Model):
        def parser_step(self, k: int) -> None:
            p = self.parsers[k]
            if p["phase"] != "claim":
                # publish the temporarily advanced index (the unsafe variant)
                self.parser_index[k] = p["reading"]
            super().parser_step(k)

    rng = random.Random(7)
    caught = 0
    for _ in range(4000):
        # spans up to N-1=3 can cross the extender's own next slab (own+K)
        slab_cells, spans, n_cells = random_document(rng, 4)
        model = Unsafe(4, 2, slab_cells, spans, rng)
        try:
            model.run()
            if sorted(model.emitted) != list(range(n_cells)):
                caught += 1
        except AssertionError:
            caught += 1
    assert caught > 0, "the checker failed to distinguish the unsafe variant"
