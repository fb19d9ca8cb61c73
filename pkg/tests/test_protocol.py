import itertools
import math

import pytest
from hypothesis import given, strategies as st

from qpsk_qkd.protocol import (
    Basis,
    ClickEvent,
    DeltaPhase,
    Outcome,
    OutcomeClass,
    Phase,
    SiftRecord,
    SiftedKey,
    UndefinedRateError,
    classify_outcome,
    decode_click,
    encode_alice,
    encode_bob,
    phase_difference,
    qber,
    sift,
)

PI = math.pi


@pytest.mark.parametrize(
    "bit, basis, radians",
    [(0, Basis.B1, PI / 4), (0, Basis.B2, -PI / 4), (1, Basis.B1, -3 * PI / 4), (1, Basis.B2, 3 * PI / 4)],
)
def test_alice_table(bit, basis, radians):
    assert encode_alice(bit, basis).radians == radians


def test_bob_table():
    assert encode_bob(Basis.B1).radians == PI / 4
    assert encode_bob(Basis.B2).radians == -PI / 4
    for b in Basis:
        assert encode_bob(b) is encode_alice(0, b)


def test_alice_table_is_one_to_one():
    phases = {encode_alice(bit, basis) for bit in (0, 1) for basis in Basis}
    assert phases == set(Phase)


def test_bad_bit_rejected():
    with pytest.raises(ValueError):
        encode_alice(2, Basis.B1)


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (Phase.PLUS_PI_4, Phase.PLUS_PI_4, DeltaPhase.ZERO),
        (Phase.MINUS_3PI_4, Phase.PLUS_PI_4, DeltaPhase.PI),
        (Phase.PLUS_PI_4, Phase.MINUS_PI_4, DeltaPhase.HALF_PI),
        (Phase.MINUS_PI_4, Phase.PLUS_PI_4, DeltaPhase.THREE_HALF_PI),
    ],
)
def test_phase_difference(a, b, expected):
    assert phase_difference(a, b) is expected


def test_phase_difference_matches_float_arithmetic():
    for a, b in itertools.product(Phase, (Phase.PLUS_PI_4, Phase.MINUS_PI_4)):
        turns = ((a.radians - b.radians) % (2 * PI)) / (PI / 2)
        assert phase_difference(a, b).value == round(turns) % 4


def test_classify():
    assert classify_outcome(DeltaPhase.ZERO) is OutcomeClass.DETERMINISTIC_D1
    assert classify_outcome(DeltaPhase.PI) is OutcomeClass.DETERMINISTIC_D2
    assert classify_outcome(DeltaPhase.HALF_PI) is OutcomeClass.RANDOM
    assert classify_outcome(DeltaPhase.THREE_HALF_PI) is OutcomeClass.RANDOM


def test_decode_click():
    assert decode_click(Outcome.D1) == 0
    assert decode_click(Outcome.D2) == 1
    assert decode_click(Outcome.BOTH) is None
    assert decode_click(Outcome.NONE) is None


@pytest.mark.parametrize("bit, basis", list(itertools.product((0, 1), Basis)))
def test_matched_bases_round_trip(bit, basis):
    delta = phase_difference(encode_alice(bit, basis), encode_bob(basis))
    assert delta is (DeltaPhase.ZERO if bit == 0 else DeltaPhase.PI)
    ideal = Outcome.D1 if classify_outcome(delta) is OutcomeClass.DETERMINISTIC_D1 else Outcome.D2
    assert decode_click(ideal) == bit


@pytest.mark.parametrize("bit", (0, 1))
def test_mismatched_bases_are_random(bit):
    for a, b in ((Basis.B1, Basis.B2), (Basis.B2, Basis.B1)):
        delta = phase_difference(encode_alice(bit, a), encode_bob(b))
        assert classify_outcome(delta) is OutcomeClass.RANDOM


def _records(alice_bases, bob_bases, bob_bits, alice_bits=None):
    alice_bits = alice_bits or [0] * len(alice_bases)
    return [
        SiftRecord(i, Basis(a), Basis(b), ab, bb)
        for i, (a, b, ab, bb) in enumerate(zip(alice_bases, bob_bases, alice_bits, bob_bits))
    ]


def test_sift_keeps_matching_bases():
    recs = _records([0, 1, 0], [0, 0, 0], [0, 1, 1], alice_bits=[0, 1, 0])
    alice, bob = sift(recs)
    assert alice.source_gates == bob.source_gates == (0, 2)
    assert alice.bits == (0, 0)
    assert bob.bits == (0, 1)


def test_sift_no_detections():
    alice, bob = sift(_records([0, 1], [0, 1], [None, None]))
    assert len(alice) == len(bob) == 0


def test_sift_rejects_unsorted():
    recs = _records([0, 0], [0, 0], [0, 0])
    with pytest.raises(ValueError):
        sift(list(reversed(recs)))


def test_qber_examples():
    gates = (0, 1, 2)
    assert qber(SiftedKey((0, 1, 0), gates), SiftedKey((0, 1, 0), gates)) == 0.0
    g4 = (0, 1, 2, 3)
    assert qber(SiftedKey((0, 1, 0, 1), g4), SiftedKey((1, 0, 1, 0), g4)) == 1.0
    g10 = tuple(range(10))
    a = SiftedKey((0,) * 10, g10)
    b = SiftedKey((0,) * 7 + (1,) * 3, g10)
    assert qber(a, b) == pytest.approx(0.3)


def test_qber_errors():
    with pytest.raises(UndefinedRateError):
        qber(SiftedKey.empty(), SiftedKey.empty())
    with pytest.raises(ValueError):
        qber(SiftedKey((0,), (0,)), SiftedKey((0,), (1,)))


def test_sifted_key_invariants():
    with pytest.raises(ValueError):
        SiftedKey((0, 1), (0,))
    with pytest.raises(ValueError):
        SiftedKey((0, 1), (3, 3))
    with pytest.raises(ValueError):
        ClickEvent(-1, Outcome.D1)


record_rows = st.lists(
    st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1), st.sampled_from([None, 0, 1])),
    max_size=60,
)


@given(record_rows)
def test_sift_properties(rows):
    recs = [SiftRecord(i, Basis(a), Basis(b), ab, bb) for i, (a, b, ab, bb) in enumerate(rows)]
    alice, bob = sift(recs)
    assert alice.source_gates == bob.source_gates
    for g in alice.source_gates:
        assert recs[g].alice_basis == recs[g].bob_basis
        assert recs[g].bob_bit is not None
    expected = [r.gate_index for r in recs if r.bob_bit is not None and r.alice_basis == r.bob_basis]
    assert list(alice.source_gates) == expected


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.randoms())
def test_qber_symmetric_and_order_invariant(pairs, rnd):
    gates = tuple(range(len(pairs)))
    a = SiftedKey(tuple(p[0] for p in pairs), gates)
    b = SiftedKey(tuple(p[1] for p in pairs), gates)
    assert qber(a, b) == qber(b, a)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a2 = SiftedKey(tuple(p[0] for p in shuffled), gates)
    b2 = SiftedKey(tuple(p[1] for p in shuffled), gates)
    assert qber(a2, b2) == pytest.approx(qber(a, b))
