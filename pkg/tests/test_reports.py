"""Report contract tests: canonical job specs, the three report families,
the five validation checks, toggle byte-identity, and narrative provider
fencing. Runs on a trimmed pipeline so the suite stays fast."""

import copy
import http.server
import json
import threading
from decimal import Decimal

import pytest

from aftercast import reports
from aftercast.fixture import register_demo
from aftercast.pipeline import PipelineConfig, run_pipeline
from aftercast.reports import (
    JobSpec,
    MissingArtifact,
    RemoteNarrativeProvider,
    assemble_report,
    generate_report,
    normalize_request,
    render_narrative,
    validate_contract,
    verify_claims,
)
from aftercast.store import ArtifactStore, NotFound

SMALL = dict(
    dataset_id="demo",
    horizons=(1, 2, 3),
    n_origins=3,
    gap=1,
    min_train=24,
    models=("snaive", "sba", "arx"),
    k_clusters=2,
)


@pytest.fixture(scope="module")
def ran(tmp_path_factory):
    store = ArtifactStore(tmp_path_factory.mktemp("reports") / "store")
    register_demo(store, "demo")
    config = PipelineConfig(**SMALL)
    run_pipeline(store, config)
    return store, config.config_hash()


def request_for(family, config_hash, **extra):
    return {"family": family, "dataset_id": "demo",
            "config_hash": config_hash, **extra}


# -- normalize ----------------------------------------------------------------


def test_normalize_defaults_and_aliases():
    spec = normalize_request(
        {"family": "scorecard", "dataset_id": "demo", "months": 4,
         "deviation": 15}
    )
    assert spec.report_family == "performance_scorecard"
    assert spec.window_months == 4
    assert spec.deviation_pct == 15.0
    assert spec.include_revenue_views and spec.include_narrative
    assert spec.include_trend
    assert spec.role == "planner"


def test_normalize_is_idempotent():
    spec = normalize_request(
        {"report_family": "trend_overall", "dataset_id": "demo",
         "countries": ["PL", "DE", "DE"], "role": "executive"}
    )
    assert normalize_request(spec.to_dict()) == spec
    assert spec.countries == ("DE", "PL")


def test_normalize_canonical_bytes_stable():
    a = normalize_request({"family": "trend-monthly", "dataset_id": "demo"})
    b = normalize_request(
        {"report_family": "trend_monthly", "dataset_id": "demo",
         "window_months": 6}
    )
    assert a.canonical_bytes() == b.canonical_bytes()
    assert a.spec_hash() == b.spec_hash()


def test_normalize_missing_family():
    with pytest.raises(ValueError, match="missing report_family"):
        normalize_request({"dataset_id": "demo"})


def test_normalize_rejects_negative_deviation_naming_parameter():
    with pytest.raises(ValueError, match="deviation_pct out of range"):
        normalize_request(
            {"family": "scorecard", "dataset_id": "demo", "deviation": -5}
        )


@pytest.mark.parametrize(
    "raw, message",
    [
        ({"family": "bogus", "dataset_id": "d"}, "report_family must be"),
        ({"family": "scorecard"}, "missing dataset_id"),
        ({"family": "scorecard", "dataset_id": "d", "window_months": 0},
         "window_months out of range"),
        ({"family": "scorecard", "dataset_id": "d", "deviation_pct": 0},
         "deviation_pct out of range"),
        ({"family": "scorecard", "dataset_id": "d", "month": "2021-13"},
         "month must be YYYY-MM"),
        ({"family": "scorecard", "dataset_id": "d", "role": "ceo"},
         "role must be"),
        ({"family": "scorecard", "dataset_id": "d", "surprise": 1},
         "unknown parameter 'surprise'"),
    ],
)
def test_normalize_rejections(raw, message):
    with pytest.raises(ValueError, match=message):
        normalize_request(raw)


# -- scorecard family ---------------------------------------------------------


def test_scorecard_report_clean_and_ordered(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    assert out.reflection.violations == []
    ids = [s["id"] for s in out.document["sections"]]
    assert ids[0] == "overview" and ids[1] == "kpi"
    assert ids == [name for _, name in
                   reports._SECTION_ORDER["performance_scorecard"]]
    assert out.document["content_hash"] == out.content_hash


def test_scorecard_revenue_reconciles_exactly(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    tables = out.reflection.tables
    total = Decimal(out.reflection.kpis["total_revenue"])
    for name in ("by_country", "by_part", "by_country_part"):
        table = tables[name]
        col = table["columns"].index("revenue")
        assert sum((Decimal(r[col]) for r in table["rows"]), Decimal(0)) == total


def test_scorecard_wmape_matches_residual_recompute(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    _, payload = store.fetch_by_key("demo", ch, "residuals")
    window_start = out.reflection.kpis["window_start"]
    window_end = out.reflection.kpis["window_end"]
    lines = payload.decode().strip().split("\n")
    header = lines[0].split(",")
    agg = {}
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        if row["model_id"] != "ensemble":
            continue
        origin = row["origin"]
        year, month = map(int, origin.split("-"))
        h = int(row["horizon"])
        idx = year * 12 + month - 1 + 1 + h  # gap 1
        target = f"{idx // 12:04d}-{idx % 12 + 1:02d}"
        if not window_start <= target <= window_end:
            continue
        key = f"{row['country']}/{row['part']}"
        a, e = agg.get(key, (0.0, 0.0))
        agg[key] = (
            a + float(row["actual"]),
            e + abs(float(row["actual"]) - float(row["forecast"])),
        )
    table = out.reflection.tables["by_country_part"]
    w_col = table["columns"].index("wmape")
    checked = 0
    for row in table["rows"][:10]:
        a, e = agg[row[0]]
        if a > 0:
            assert row[w_col] == pytest.approx(e / a * 100.0, abs=1e-6)
            checked += 1
    assert checked >= 8


def test_scorecard_band_shares_sum_to_one(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    table = out.reflection.tables["bands"]
    s = table["columns"].index("share")
    assert abs(sum(r[s] for r in table["rows"]) - 1.0) <= 1e-9


def test_scorecard_deterministic_across_stores(ran, tmp_path):
    store, ch = ran
    twin = ArtifactStore(tmp_path / "twin")
    register_demo(twin, "demo")
    run_pipeline(twin, PipelineConfig(**SMALL))
    a = generate_report(store, request_for("scorecard", ch))
    b = generate_report(twin, request_for("scorecard", ch))
    assert a.payload == b.payload
    assert a.content_hash == b.content_hash


def test_report_persistence_is_idempotent(ran):
    store, ch = ran
    a = generate_report(store, request_for("scorecard", ch))
    b = generate_report(store, request_for("scorecard", ch))
    assert (a.run_id, a.content_hash) == (b.run_id, b.content_hash)
    _, payload = store.fetch_artifact(a.run_id)
    assert payload == a.payload


def test_scorecard_without_backtest_names_missing_artifact(ran, tmp_path):
    _, ch = ran
    bare = ArtifactStore(tmp_path / "bare")
    register_demo(bare, "demo")
    with pytest.raises(MissingArtifact, match="missing backtest artifact"):
        generate_report(bare, request_for("scorecard", ch))


def test_unregistered_dataset_is_not_found(ran):
    store, ch = ran
    with pytest.raises(NotFound, match="ghost"):
        generate_report(
            store, {"family": "scorecard", "dataset_id": "ghost"}
        )


# -- toggles ------------------------------------------------------------------


def canonical_section(section):
    return json.dumps(section, sort_keys=True, default=str)


def test_revenue_toggle_drops_sections_byte_identically(ran):
    store, ch = ran
    full = generate_report(store, request_for("scorecard", ch))
    trimmed = generate_report(
        store, request_for("scorecard", ch, revenue_views=False)
    )
    full_by_id = {s["id"]: canonical_section(s)
                  for s in full.document["sections"]}
    kept = {s["id"] for s in trimmed.document["sections"]}
    dropped = set(full_by_id) - kept
    assert dropped == {"revenue_bins", "bin_deviations", "risk", "win",
                       "fig_pareto"}
    for section in trimmed.document["sections"]:
        assert canonical_section(section) == full_by_id[section["id"]]
    assert trimmed.document["narrative"] == full.document["narrative"]


def test_trend_toggle_drops_trajectory_sections(ran):
    store, ch = ran
    full = generate_report(store, request_for("trend-overall", ch))
    trimmed = generate_report(
        store, request_for("trend-overall", ch, trend=False)
    )
    kept = {s["id"] for s in trimmed.document["sections"]}
    dropped = {s["id"] for s in full.document["sections"]} - kept
    assert dropped == {"verdicts", "change_points", "fig_metric_trend"}
    full_by_id = {s["id"]: canonical_section(s)
                  for s in full.document["sections"]}
    for section in trimmed.document["sections"]:
        assert canonical_section(section) == full_by_id[section["id"]]


def test_narrative_toggle_empties_narrative(ran):
    store, ch = ran
    out = generate_report(
        store, request_for("scorecard", ch, narrative=False)
    )
    assert out.document["narrative"] == {}


def test_executive_role_is_a_prefix_of_planner(ran):
    store, ch = ran
    planner = generate_report(store, request_for("scorecard", ch))
    execu = generate_report(
        store, request_for("scorecard", ch, role="executive")
    )
    p_blocks = planner.document["narrative"]["planner"]
    e_blocks = execu.document["narrative"]["executive"]
    assert len(e_blocks) < len(p_blocks)
    assert [b["kind"] for b in e_blocks] == [
        b["kind"] for b in p_blocks[: len(e_blocks)]
    ]


# -- trend overall ------------------------------------------------------------


def test_trend_overall_flags_shock_at_month_27(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-overall", ch))
    cps = out.reflection.tables["change_points"]["rows"]
    shock = [r for r in cps if r[0] == "overall" and r[3] == "shock"]
    assert any(r[2] in ("2021-02", "2021-03", "2021-04") for r in shock)


def test_trend_overall_share_tables_sum_to_one(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-overall", ch))
    for name in ("shares_country", "shares_family"):
        table = out.reflection.tables[name]
        sa = table["columns"].index("share_a")
        sr = table["columns"].index("share_r")
        assert abs(sum(r[sa] for r in table["rows"]) - 1.0) <= 1e-9
        assert abs(sum(r[sr] for r in table["rows"]) - 1.0) <= 1e-9


def test_trend_overall_premium_discount_antisymmetry(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-overall", ch))
    for name in ("shares_country", "shares_family"):
        table = out.reflection.tables[name]
        pd_col = table["columns"].index("prem_disc")
        assert abs(sum(r[pd_col] for r in table["rows"])) <= 1e-9


def test_trend_overall_scope_filter(ran):
    store, ch = ran
    out = generate_report(
        store, request_for("trend-overall", ch, countries=["DE"])
    )
    table = out.reflection.tables["shares_country"]
    assert [r[0] for r in table["rows"]] == ["DE"]
    with pytest.raises(ValueError, match="no entities in scope"):
        generate_report(
            store, request_for("trend-overall", ch, countries=["XX"])
        )


# -- trend monthly ------------------------------------------------------------


def test_trend_monthly_reconciliation_is_exact(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-monthly", ch))
    proof = out.reflection.tables["recon_proof"]
    e_col = proof["columns"].index("exact")
    d_col = proof["columns"].index("difference")
    assert all(r[e_col] is True for r in proof["rows"])
    assert all(Decimal(r[d_col]) == 0 for r in proof["rows"])


def test_trend_monthly_month_parameter_selects_transition(ran):
    store, ch = ran
    out = generate_report(
        store, request_for("trend-monthly", ch, month="2021-03")
    )
    assert out.reflection.kpis["month"] == "2021-03"
    assert out.reflection.kpis["prior_month"] == "2021-02"
    assert out.reflection.violations == []


def test_trend_monthly_rejects_months_without_prior(ran):
    store, ch = ran
    with pytest.raises(ValueError, match="no prior transition"):
        generate_report(
            store, request_for("trend-monthly", ch, month="2019-01")
        )
    with pytest.raises(ValueError, match="no prior transition"):
        generate_report(
            store, request_for("trend-monthly", ch, month="2030-01")
        )


def test_trend_monthly_pct_change_rules(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-monthly", ch))
    table = out.reflection.tables["mom_actuals_parts"]
    p = table["columns"].index("prior")
    pc = table["columns"].index("pct_change")
    for row in table["rows"]:
        defined = row[p] is not None and Decimal(row[p]) > 0
        assert (row[pc] is not None) == defined


# -- validation checks --------------------------------------------------------


def monthly_doc(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-monthly", ch))
    return out, out.reflection.to_doc()


def test_validate_clean_report_has_no_violations(ran):
    _, doc = monthly_doc(ran)
    assert validate_contract(doc) == []


def test_validate_single_mutated_cell_yields_one_violation(ran):
    _, doc = monthly_doc(ran)
    mutated = copy.deepcopy(doc)
    table = mutated["tables"]["mom_actuals_parts"]
    col = table["columns"].index("delta")
    table["rows"][0][col] = str(Decimal(table["rows"][0][col]) + 1)
    violations = validate_contract(mutated)
    assert len(violations) == 1
    assert violations[0]["check"] == "totals_reconcile"
    assert violations[0]["table"] == "mom_actuals_parts"


def test_validate_band_shares_must_sum_to_one(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    doc = out.reflection.to_doc()
    mutated = copy.deepcopy(doc)
    table = mutated["tables"]["bands"]
    col = table["columns"].index("share")
    table["rows"][0][col] += 0.25
    checks = {v["check"] for v in validate_contract(mutated)}
    assert "bin_completeness" in checks


def test_validate_mape_with_zero_coverage_fails(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    mutated = copy.deepcopy(out.reflection.to_doc())
    table = mutated["tables"]["by_country"]
    m = table["columns"].index("mape")
    c = table["columns"].index("coverage")
    table["rows"][0][m] = 12.5
    table["rows"][0][c] = 0
    checks = [v["check"] for v in validate_contract(mutated)]
    assert "denominator_validity" in checks


def test_validate_unknown_outlier_entity_fails(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    mutated = copy.deepcopy(out.reflection.to_doc())
    if not mutated["tables"]["risk"]["rows"]:
        mutated["tables"]["risk"]["rows"] = copy.deepcopy(
            mutated["tables"]["by_country_part"]["rows"][:1]
        )
    mutated["tables"]["risk"]["rows"][0][0] = "ZZ/GHO-9999"
    checks = [v["check"] for v in validate_contract(mutated)]
    assert "named_outlier" in checks


def test_validate_ranking_order_fails_when_shuffled(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    mutated = copy.deepcopy(out.reflection.to_doc())
    rows = mutated["tables"]["top_parts"]["rows"]
    rows[0], rows[-1] = rows[-1], rows[0]
    checks = [v["check"] for v in validate_contract(mutated)]
    assert "ranking_consistency" in checks


def test_failing_validation_puts_banner_first(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-monthly", ch))
    reflection = out.reflection
    reflection.violations = [
        {"check": "totals_reconcile", "table": "mom_actuals_parts",
         "message": "forced"}
    ]
    doc = assemble_report(reflection, out.spec)
    assert doc["sections"][0]["kind"] == "banner"
    assert doc["sections"][0]["id"] == "failed-validation"
    assert doc["sections"][0]["violations"][0]["message"] == "forced"


# -- narrative ----------------------------------------------------------------


def test_narrative_claims_match_cells(ran):
    store, ch = ran
    for family in ("scorecard", "trend-overall", "trend-monthly"):
        out = generate_report(store, request_for(family, ch))
        blocks = out.document["narrative"]["planner"]
        assert blocks, family
        assert verify_claims(blocks, out.reflection.tables) == []
        n_claims = sum(len(b["claims"]) for b in blocks)
        assert n_claims >= 3


def test_verify_claims_catches_tampering(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    blocks = copy.deepcopy(out.document["narrative"]["planner"])
    anchored = next(b for b in blocks if b["claims"])
    anchored["claims"][0]["value"] = "999999"
    assert verify_claims(blocks, out.reflection.tables)


def test_provider_failure_falls_back_to_template(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))

    def broken(doc, role):
        raise OSError("connection refused")

    blocks = render_narrative(out.reflection, "planner", broken)
    assert blocks[-1]["kind"] == "provenance"
    assert "unavailable" in blocks[-1]["text"]
    template = render_narrative(out.reflection, "planner", None)
    assert blocks[:-1] == template


def test_provider_naming_unknown_entity_falls_back(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))

    def hallucinating(doc, role):
        return "All eyes on QQQ-4242 this month."

    blocks = render_narrative(out.reflection, "planner", hallucinating)
    assert blocks[-1]["kind"] == "provenance"
    assert "QQQ-4242" in blocks[-1]["text"]
    assert all(b["kind"] != "provider" for b in blocks)


def test_provider_with_known_entities_is_used(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    entity = out.reflection.tables["by_part"]["rows"][0][0]

    def grounded(doc, role):
        return f"Keep an eye on {entity}; everything else held."

    blocks = render_narrative(out.reflection, "planner", grounded)
    assert blocks[0]["kind"] == "provider"
    assert entity in blocks[0]["text"]
    assert blocks[1]["kind"] == "provenance"


def test_remote_provider_posts_reflection(ran):
    store, ch = ran
    out = generate_report(store, request_for("trend-monthly", ch))
    seen = {}

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers["Content-Length"])
            seen["body"] = json.loads(self.rfile.read(length))
            body = "Narrative from afar.".encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        provider = RemoteNarrativeProvider(
            f"http://127.0.0.1:{server.server_port}/narrate", timeout=5
        )
        blocks = render_narrative(out.reflection, "executive", provider)
    finally:
        server.shutdown()
    assert blocks[0]["kind"] == "provider"
    assert blocks[0]["text"] == "Narrative from afar."
    assert seen["body"]["role"] == "executive"
    assert seen["body"]["reflection"]["job"]["report_family"] == "trend_monthly"


def test_remote_provider_unreachable_falls_back(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    provider = RemoteNarrativeProvider("http://127.0.0.1:9/narrate", timeout=1)
    blocks = render_narrative(out.reflection, "planner", provider)
    assert blocks[-1]["kind"] == "provenance"
    assert "unavailable" in blocks[-1]["text"]


# -- artifact shape -----------------------------------------------------------


def test_artifact_lineage_names_inputs(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    lineage = out.document["lineage"]
    meta = store.dataset_meta("demo")
    assert lineage["demand_hash"] == meta["demand_hash"]
    assert lineage["exog_hash"] == meta["exog_hash"]
    assert lineage["config_hash"] == ch
    assert set(lineage["runs"]) == {"residuals", "weights", "forecasts"}


def test_content_hash_covers_document(ran):
    store, ch = ran
    out = generate_report(store, request_for("scorecard", ch))
    doc = json.loads(out.payload)
    claimed = doc.pop("content_hash")
    from aftercast.serialize import canonical_json, hash_bytes

    assert claimed == hash_bytes(canonical_json(doc))
