import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apptriage.config import AnalysisConfig
from apptriage.corpus import EnrichmentBundle, IpDetail, Permission, segment_application
from apptriage.embedding import HashingLogEmbedder
from apptriage.profile import builtin_criteria, load_profile, render_guidances
from apptriage.reasoner import (EmptyResponseError, ExhaustedRetriesError, MissingSectionError, MissingVerdictTagError,
                                MockReasoner, PromptBundle, ReasonerError, RemoteReasoner, TokenBudgetExceeded,
                                TriageReport, UnmatchedCriterionError, Verdict, build_prompts, invoke, parse_report,
                                render_report)
from apptriage.reducer import ForestParams, ReducedSegment, reduce_segment
from apptriage.simgen import ScenarioSpec, generate_app

from conftest import FIXTURES, rec

BASELINE = builtin_criteria("baseline")
FOCUSED = builtin_criteria("focused")
PROFILE = load_profile(FIXTURES / "ta_profile.yaml")
WORKED_TRUE = {1, 2, 3, 5, 6, 7, 9, 10, 11}


def reduced_of(records, app_id="app-x"):
    return ReducedSegment(app_id, 0, list(enumerate(records)), [])


def prompts_for(bundle, criteria=BASELINE, target_k=500):
    seg = segment_application(bundle.records, 40_000)[0]
    reduced = reduce_segment(seg, HashingLogEmbedder(), target_k, ForestParams(seed=1))
    return build_prompts(PROFILE, criteria, reduced, bundle.enrichment)


def test_prompt_contains_guidances_and_profile():
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(i) for i in range(10)]), EnrichmentBundle())
    for line in render_guidances(BASELINE):
        assert p.user_text.count(line) == 2
    assert "# Threat Actor Profile" in p.user_text
    assert "Initial Access" in p.user_text.split("# Threat Actor Profile\n")[-1]
    assert p.system_text


def test_missing_enrichment_noted():
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(0)]), EnrichmentBundle())
    section = p.user_text.split("# Enrichment Data\n")[-1]
    assert "unavailable" in section


def test_prompt_is_pure():
    records = [rec(i, ip=f"10.0.0.{i}") for i in range(20)]
    enrichment = EnrichmentBundle(ip_details=(IpDetail("10.0.0.1", is_benign_known=True),))
    a = build_prompts(PROFILE, FOCUSED, reduced_of(records), enrichment)
    b = build_prompts(PROFILE, FOCUSED, reduced_of(list(records)), enrichment)
    assert a == b


def test_braces_in_log_values_survive():
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(0, operation="{GUIDANCES}")]), EnrichmentBundle())
    assert "{GUIDANCES}" in p.user_text.split("# Application Logs\n")[-1]


def test_budget_exceeded():
    with pytest.raises(TokenBudgetExceeded) as info:
        build_prompts(PROFILE, BASELINE, reduced_of([rec(i) for i in range(50)]), EnrichmentBundle(),
                      AnalysisConfig(token_budget=100))
    assert info.value.budget == 100


def test_500_records_fit_default_budget():
    spec = ScenarioSpec("app-b", 0, n_benign_records=3000, sensitive_resources=("Microsoft Graph",), seed=3)
    p = prompts_for(generate_app(spec))
    assert p.token_estimate <= 100_000


# parsing

def test_worked_example_parses(fixture_text):
    report = parse_report(fixture_text("worked_report.md"), BASELINE)
    got = {i for i, v in enumerate(report.verdicts.values(), start=1) if v.verdict}
    assert got == WORKED_TRUE
    assert len(report.verdicts) == 15
    assert [a.stage for a in report.suspicious_activities] == ["Initial Access", "Credential Access", "Data Collection"]
    assert "Microsoft Graph" in report.behavior_summary


def test_missing_triage_section(fixture_text):
    raw = fixture_text("worked_report.md").split("## Triage priority level")[0]
    with pytest.raises(MissingSectionError):
        parse_report(raw, BASELINE)


def test_missing_behavior_section(fixture_text):
    raw = fixture_text("worked_report.md").replace("## High-level behavior of the application", "## Notes")
    with pytest.raises(MissingSectionError):
        parse_report(raw, BASELINE)


def test_uppercase_tag(fixture_text):
    raw = fixture_text("worked_report.md").replace("'Reconnaissance' is observed. [False]",
                                                      "'Reconnaissance' is observed. [TRUE]")
    report = parse_report(raw, BASELINE)
    assert report.verdicts[BASELINE.ids[3]].verdict is True


def test_missing_tag_carries_partial_report(fixture_text):
    raw = fixture_text("worked_report.md").replace("'Execution' is observed. [True]", "'Execution' is observed.")
    with pytest.raises(MissingVerdictTagError) as info:
        parse_report(raw, BASELINE)
    assert info.value.missing == [BASELINE.ids[1]]
    assert info.value.report.verdicts[BASELINE.ids[1]].verdict is None
    assert info.value.report.verdicts[BASELINE.ids[0]].verdict is True


def test_unmatched_criterion(fixture_text):
    raw = fixture_text("worked_report.md").replace("8. 'Lateral Movement' is observed. [False]\n", "")
    with pytest.raises(UnmatchedCriterionError) as info:
        parse_report(raw, BASELINE)
    assert info.value.missing == [BASELINE.ids[7]]


def test_last_tag_wins():
    lines = [f"{i}. {c.text} [True] on reflection [False]" for i, c in enumerate(FOCUSED.criteria, start=1)]
    raw = "## High-level behavior\nx\n## Suspicious activities\nnone\n## Triage priority level\n" + "\n".join(lines)
    assert not any(parse_report(raw, FOCUSED).verdict_values().values())


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(["baseline", "focused"]), st.data())
def test_render_parse_round_trip(name, data):
    cs = builtin_criteria(name)
    bits = data.draw(st.lists(st.booleans(), min_size=len(cs), max_size=len(cs)))
    verdicts = {c.id: Verdict(b, "", i) for i, (c, b) in enumerate(zip(cs.criteria, bits), start=1)}
    report = TriageReport("Reads Microsoft Graph.", (), verdicts)
    parsed = parse_report(render_report(report, cs), cs)
    assert parsed.verdict_values() == report.verdict_values()
    assert list(parsed.verdicts) == cs.ids


# backends

def test_mock_deterministic():
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(i) for i in range(5)]), EnrichmentBundle())
    mock = MockReasoner(noise=0.2)
    assert invoke(mock, p, 11) == invoke(mock, p, 11)


def test_mock_clean_segment_only_true_negatives():
    spec = ScenarioSpec("app-c", 0, n_benign_records=200, benign_ips=("10.1.1.1", "10.1.1.2"), seed=4)
    bundle = generate_app(spec)
    report = parse_report(invoke(MockReasoner(), prompts_for(bundle)), BASELINE)
    for c in BASELINE.criteria:
        if c.delta > 0:
            assert report.verdicts[c.id].verdict is False, c.text
    # no address is suspicious, so "all suspicious IPs are benign" is not asserted vacuously
    assert report.verdicts[BASELINE.ids[13]].verdict is False


def test_mock_compromised_has_two_stages():
    spec = ScenarioSpec("app-m", 2, ("Initial Access", "Defense Evasion", "Credential Access"), 300, 40,
                        ("192.0.2.200",), ("10.2.2.2",), ("Microsoft Graph",), seed=5)
    report = parse_report(invoke(MockReasoner(), prompts_for(generate_app(spec))), BASELINE)
    assert sum(report.verdicts[cid].verdict for cid in BASELINE.ids[:9]) >= 2


def test_mock_noise_rate():
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(i) for i in range(5)]), EnrichmentBundle())
    clean = parse_report(MockReasoner().complete(p, 0), BASELINE).verdict_values()
    flips = []
    for seed in range(400):
        noisy = parse_report(MockReasoner(noise=0.1).complete(p, seed), BASELINE).verdict_values()
        flips.append(sum(noisy[k] != clean[k] for k in clean))
    # Binomial(15, 0.1): mean 1.5, P(X > 7) < 1e-4
    assert 1.2 <= sum(flips) / len(flips) <= 1.8
    assert max(flips) <= 7


def test_mock_omits_tags_on_request():
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(0)]), EnrichmentBundle())
    with pytest.raises(MissingVerdictTagError):
        parse_report(MockReasoner(omit_tags=0.99).complete(p, 0), BASELINE)


def _prompts():
    return PromptBundle("system", "user", 1)


def _chat(text):
    return {"choices": [{"message": {"content": text}}]}


def test_remote_success(scripted_server):
    with scripted_server([(200, _chat("hello"))]) as srv:
        out = invoke(RemoteReasoner(srv.url, "key", model="m", backoff=0), _prompts(), 9)
    assert out == "hello"
    assert srv.requests[0]["seed"] == 9
    assert srv.requests[0]["messages"][1]["content"] == "user"


def test_remote_exhausts_retries(scripted_server):
    with scripted_server([(502, {})]) as srv:
        with pytest.raises(ExhaustedRetriesError):
            invoke(RemoteReasoner(srv.url, retries=2, backoff=0), _prompts())
    assert len(srv.requests) == 3


def test_remote_recovers_after_5xx(scripted_server):
    with scripted_server([(500, {}), (200, _chat("ok"))]) as srv:
        assert invoke(RemoteReasoner(srv.url, retries=2, backoff=0), _prompts()) == "ok"


def test_remote_empty_body(scripted_server):
    with scripted_server([(200, _chat("   "))]) as srv:
        with pytest.raises(EmptyResponseError):
            invoke(RemoteReasoner(srv.url, backoff=0), _prompts())


def test_remote_4xx_not_retried(scripted_server):
    with scripted_server([(401, {"error": "nope"})]) as srv:
        with pytest.raises(ReasonerError):
            invoke(RemoteReasoner(srv.url, retries=3, backoff=0), _prompts())
    assert len(srv.requests) == 1


def test_remote_connection_refused():
    with pytest.raises(ExhaustedRetriesError):
        invoke(RemoteReasoner("http://127.0.0.1:9/", retries=1, backoff=0, timeout=1), _prompts())


def test_audit_written(tmp_path):
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(0)]), EnrichmentBundle())
    invoke(MockReasoner(), p, 3, audit_dir=tmp_path, audit_tag="t")
    assert (tmp_path / "t.json").exists()


def test_permissions_mentioned_in_behavior():
    enrichment = EnrichmentBundle(permissions=(Permission("Microsoft Graph", "Application.ReadWrite.All", True),))
    p = build_prompts(PROFILE, BASELINE, reduced_of([rec(0)]), enrichment)
    report = parse_report(MockReasoner().complete(p, 0), BASELINE)
    assert "Microsoft Graph" in report.behavior_summary
