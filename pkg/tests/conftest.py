import itertools

import pytest

from chordflow.core import ChordMap, circular_distance


@pytest.fixture(scope="session")
def chordmap():
    return ChordMap.default()


def brute_force_edit_cost(candidate, target_pcs, max_notes=7):
    """Independent oracle: enumerate every edit script mapping each candidate
    note to a target pitch class (replacement at circular distance) or to
    deletion, then pay one insertion per uncovered target."""
    notes = []
    if isinstance(candidate, dict):
        for pc, w in candidate.items():
            notes.extend([pc % 12] * w)
    else:
        notes = [pc % 12 for pc in candidate]
    targets = sorted(set(pc % 12 for pc in target_pcs))
    assert notes, "oracle needs a non-empty candidate"
    assert len(notes) <= max_notes, "oracle is exponential; keep sets small"
    best = None
    choices = targets + [None]  # None = delete
    for assignment in itertools.product(choices, repeat=len(notes)):
        cost = 0
        covered = set()
        for note, dest in zip(notes, assignment):
            if dest is None:
                cost += 1
            else:
                cost += circular_distance(note, dest)
                covered.add(dest)
        cost += len(set(targets) - covered)
        if best is None or cost < best:
            best = cost
    return best


def dp_edit_cost(candidate, target_pcs):
    """Exact oracle for larger inputs: dynamic program over (unit note,
    covered-target subset).  Each unit note is deleted or replaced onto a
    target; uncovered targets pay one insertion each.  Same edit-script
    model as the product enumeration, polynomial instead of exponential."""
    units = []
    if isinstance(candidate, dict):
        for pc, w in candidate.items():
            units.extend([pc % 12] * w)
    else:
        units = [pc % 12 for pc in candidate]
    targets = sorted(set(pc % 12 for pc in target_pcs))
    m = len(targets)
    states = {0: 0}  # covered-subset bitmask -> best cost so far
    for note in units:
        nxt = {}
        for mask, cost in states.items():
            # delete the note
            if cost + 1 < nxt.get(mask, float("inf")):
                nxt[mask] = cost + 1
            # or replace it onto any target
            for j, t in enumerate(targets):
                c2 = cost + circular_distance(note, t)
                m2 = mask | (1 << j)
                if c2 < nxt.get(m2, float("inf")):
                    nxt[m2] = c2
        states = nxt
    best = None
    for mask, cost in states.items():
        total = cost + (m - bin(mask).count("1"))
        if best is None or total < best:
            best = total
    return best


def brute_force_nearest(candidate, chordmap):
    """Independent oracle: exhaustive scan over all 432 entries using the
    subset-DP edit cost, ties to (quality, root)."""
    best = None
    best_cost = None
    for q in range(36):
        for r in range(12):
            cost = dp_edit_cost(candidate, chordmap.entry_pcs(q, r))
            if best_cost is None or cost < best_cost:
                best, best_cost = chordmap.entry(q, r), cost
    return best, best_cost
