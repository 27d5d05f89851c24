import pytest

from aftercast.core import PeriodId, SeriesKey, validate_series
from aftercast.ingest import (
    IngestError,
    canonicalize_bytes,
    load_demand_csv,
    load_exogenous_csv,
)
from aftercast.store import ArtifactStore, NotFound, StoreError, derive_run_id

DEMAND_HEADER = "country,part,year,month,actuals,revenue,price"
EXOG_HEADER = (
    "country,year,month,regime,months_since_regime_start,"
    "lifecycle,holiday_count,macro_index"
)


def write_demand(tmp_path, rows, name="demand.csv"):
    path = tmp_path / name
    path.write_text("\n".join([DEMAND_HEADER, *rows]) + "\n")
    return path


def write_exog(tmp_path, rows, name="exog.csv"):
    path = tmp_path / name
    path.write_text("\n".join([EXOG_HEADER, *rows]) + "\n")
    return path


# -- demand loader ---------------------------------------------------------


def test_three_rows_one_key(tmp_path):
    path = write_demand(tmp_path, [
        "DE,BRK-0001,2021,1,5,50,10",
        "DE,BRK-0001,2021,2,6,60,10",
        "DE,BRK-0001,2021,3,7,70,10",
    ])
    series, version = load_demand_csv(path)
    key = SeriesKey("DE", "BRK-0001")
    assert list(series) == [key]
    assert series[key].actuals == [5.0, 6.0, 7.0]
    assert version.row_count == 3
    assert version.dataset_id == "demand"


def test_gap_is_zero_filled(tmp_path):
    path = write_demand(tmp_path, [
        "DE,BRK-0001,2021,1,5,50,10",
        "DE,BRK-0001,2021,3,7,70,10",
    ])
    series, _ = load_demand_csv(path)
    s = series[SeriesKey("DE", "BRK-0001")]
    assert len(s) == 3
    assert s.actuals == [5.0, 0.0, 7.0]
    filled = s.observations[1]
    assert filled.period == PeriodId(2021, 2)
    assert filled.revenue == 0.0 and filled.price is None
    # After gap filling every loaded series must validate clean.
    assert validate_series(s) == []


def test_duplicate_observation_rejected(tmp_path):
    path = write_demand(tmp_path, [
        "DE,BRK-0001,2021,1,5,50,10",
        "DE,BRK-0001,2021,1,6,60,10",
    ])
    with pytest.raises(IngestError, match="line 3: duplicate observation"):
        load_demand_csv(path)


def test_negative_value_rejected(tmp_path):
    path = write_demand(tmp_path, ["DE,BRK-0001,2021,1,-5,50,10"])
    with pytest.raises(IngestError, match="line 2: negative"):
        load_demand_csv(path)


def test_malformed_row_reports_line(tmp_path):
    path = write_demand(tmp_path, [
        "DE,BRK-0001,2021,1,5,50,10",
        "DE,BRK-0001,2021,junk,5,50,10",
    ])
    with pytest.raises(IngestError, match="line 3"):
        load_demand_csv(path)


def test_empty_price_allowed(tmp_path):
    path = write_demand(tmp_path, ["DE,BRK-0001,2021,1,5,50,"])
    series, _ = load_demand_csv(path)
    assert series[SeriesKey("DE", "BRK-0001")].observations[0].price is None


def test_wrong_header_rejected(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("country,part,year,month,qty,revenue,price\n")
    with pytest.raises(IngestError, match="header"):
        load_demand_csv(path)


def test_load_is_deterministic_across_line_endings(tmp_path):
    rows = ["DE,BRK-0001,2021,1,5,50,10"]
    lf = write_demand(tmp_path, rows, name="lf.csv")
    crlf = tmp_path / "crlf.csv"
    crlf.write_bytes(lf.read_bytes().replace(b"\n", b"\r\n"))
    _, v1 = load_demand_csv(lf, dataset_id="d")
    _, v2 = load_demand_csv(crlf, dataset_id="d")
    assert v1.content_hash == v2.content_hash


def test_canonicalize_strips_trailing_whitespace():
    assert canonicalize_bytes(b"a,b  \r\nc,d\r") == b"a,b\nc,d"


# -- exogenous loader --------------------------------------------------------


def test_exog_basic_parse(tmp_path):
    path = write_exog(tmp_path, [
        "DE,2021,1,none,0,mature,2,1.00",
        "DE,2021,2,shock,0,mature,1,0.95",
        "DE,2021,3,shock,1,mature,0,0.90",
    ])
    load = load_exogenous_csv(path)
    frames = load.frames_by_country["DE"]
    assert [f.regime for f in frames] == ["none", "shock", "shock"]
    assert frames[2].months_since_regime_start == 1
    assert load.defects == []


def test_unknown_regime_rejected(tmp_path):
    path = write_exog(tmp_path, ["DE,2021,1,pandemic,0,mature,0,1.0"])
    with pytest.raises(IngestError, match="unknown regime 'pandemic'"):
        load_exogenous_csv(path)


def test_unknown_lifecycle_rejected(tmp_path):
    path = write_exog(tmp_path, ["DE,2021,1,none,0,retired,0,1.0"])
    with pytest.raises(IngestError, match="unknown lifecycle"):
        load_exogenous_csv(path)


def test_regime_clock_contradiction_is_defect(tmp_path):
    # Regime flips to shock this period, so the clock must read 0.
    path = write_exog(tmp_path, [
        "DE,2021,1,none,0,mature,0,1.0",
        "DE,2021,2,shock,2,mature,0,1.0",
    ])
    load = load_exogenous_csv(path)
    assert len(load.defects) == 1
    assert load.defects[0].code == "regime_clock"
    assert "2021-02" in load.defects[0].message


def test_duplicate_frame_rejected(tmp_path):
    path = write_exog(tmp_path, [
        "DE,2021,1,none,0,mature,0,1.0",
        "DE,2021,1,none,0,mature,0,1.0",
    ])
    with pytest.raises(IngestError, match="duplicate frame"):
        load_exogenous_csv(path)


# -- artifact store ----------------------------------------------------------


def test_persist_fetch_round_trip(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    payload = b'{"hello":"world"}'
    run_id = store.persist_artifact("ds1", "cfg1", "forecasts", payload)
    record, fetched = store.fetch_artifact(run_id)
    assert fetched == payload
    assert record.dataset_id == "ds1"
    assert record.kind == "forecasts"


def test_repersist_is_idempotent(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    a = store.persist_artifact("ds1", "cfg1", "forecasts", b"first")
    b = store.persist_artifact("ds1", "cfg1", "forecasts", b"second write")
    assert a == b
    # First write wins; the run was already recorded.
    _, payload = store.fetch_artifact(a)
    assert payload == b"first"
    payload_files = list((tmp_path / "store" / "payloads").iterdir())
    assert len(payload_files) == 1


def test_distinct_keys_get_distinct_ids(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    a = store.persist_artifact("ds1", "cfg1", "forecasts", b"x")
    b = store.persist_artifact("ds2", "cfg1", "forecasts", b"x")
    c = store.persist_artifact("ds1", "cfg2", "forecasts", b"x")
    d = store.persist_artifact("ds1", "cfg1", "residuals", b"x")
    assert len({a, b, c, d}) == 4


def test_run_id_is_reproducible():
    assert derive_run_id("ds", "cfg", "forecasts") == derive_run_id(
        "ds", "cfg", "forecasts"
    )


def test_fetch_survives_reopen(tmp_path):
    root = tmp_path / "store"
    run_id = ArtifactStore(root).persist_artifact("ds", "cfg", "weights", b"w")
    record, payload = ArtifactStore(root).fetch_artifact(run_id)
    assert payload == b"w"
    assert record.run_id == run_id


def test_unknown_run_id_not_found(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    with pytest.raises(NotFound):
        store.fetch_artifact("deadbeef")


def test_empty_payload_rejected(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    with pytest.raises(StoreError):
        store.persist_artifact("ds", "cfg", "forecasts", b"")


def test_unknown_kind_rejected(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    with pytest.raises(StoreError):
        store.persist_artifact("ds", "cfg", "misc", b"x")


def test_dataset_registry(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    assert not store.has_dataset("ds1")
    store.register_dataset("ds1", b"demand", b"exog", "dh", "eh")
    assert store.has_dataset("ds1")
    assert store.list_datasets() == ["ds1"]
    demand_path, exog_path = store.dataset_paths("ds1")
    assert demand_path.read_bytes() == b"demand"
    assert exog_path.read_bytes() == b"exog"
    meta = store.dataset_meta("ds1")
    assert meta["demand_hash"] == "dh"
    with pytest.raises(NotFound):
        store.dataset_paths("nope")
