import json
from decimal import Decimal

from hypothesis import given
from hypothesis import strategies as st

from aftercast.serialize import (
    canonical_json,
    content_hash,
    format_display,
    hash_bytes,
    round_display,
)


def test_round_display_half_even():
    assert round_display(0.12345) == 0.1234
    assert round_display(0.12355) == 0.1236
    assert round_display(1.0) == 1.0


def test_format_display_plain_strings():
    assert format_display(100.0) == "100"
    assert format_display(0.5) == "0.5"
    assert format_display(0.0) == "0"
    assert format_display(12.34567) == "12.3457"
    assert format_display(float("nan")) == "NaN"


def test_canonical_json_compact_and_ordered():
    data = {"b": 1, "a": 2}
    assert canonical_json(data) == b'{"b":1,"a":2}'


def test_canonical_json_rounds_floats():
    assert canonical_json({"x": 0.123456}) == b'{"x":0.1235}'


def test_canonical_json_nan_becomes_null():
    assert canonical_json({"x": float("nan")}) == b'{"x":null}'


def test_decimal_survives_as_exact_string():
    # Reconciliation proofs need exact decimal arithmetic; 1.10 must not
    # collapse to 1.1 or drift through float.
    assert canonical_json({"d": Decimal("1.10")}) == b'{"d":"1.10"}'


def test_content_hash_is_stable():
    a = content_hash({"k": [1, 2, 3]})
    b = content_hash({"k": [1, 2, 3]})
    assert a == b
    assert len(a) == 64
    assert content_hash({"k": [1, 2, 4]}) != a


def test_hash_bytes_sha256():
    assert hash_bytes(b"") == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


@given(st.floats(allow_nan=False, allow_infinity=False, width=32))
def test_round_display_within_half_ulp_of_4dp(x):
    r = round_display(float(x))
    assert abs(r - float(x)) <= 0.00005 + 1e-12


@given(
    st.dictionaries(
        st.text(min_size=1, max_size=8),
        st.one_of(st.integers(-1000, 1000), st.text(max_size=8), st.booleans()),
        max_size=6,
    )
)
def test_canonical_json_parses_back(data):
    parsed = json.loads(canonical_json(data).decode("utf-8"))
    assert parsed == data
