import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apptriage.profile import (KILL_CHAIN_STAGES, CriteriaError, CriteriaSet, Criterion, ProfileError, Stage,
                               ThreatActorProfile, builtin_criteria, load_criteria_file, load_profile, parse_profile,
                               render_guidances, serialize_profile, slugify)

from conftest import FIXTURES


def test_fixture_profile():
    profile = load_profile(FIXTURES / "ta_profile.yaml")
    assert [s.name for s in profile.stages] == list(KILL_CHAIN_STAGES)
    assert profile.stage("Privilege Escalation").ttps == ()
    assert len(profile.stage("Reconnaissance").ttps) == 2


def test_minimal_profile():
    profile = parse_profile("profile: |\n  - Initial Access:\n")
    assert profile.stages == (Stage("Initial Access", ()),)


def test_duplicate_stage_named():
    doc = "profile: |\n  - Execution:\n      - a\n  - Execution:\n      - b\n"
    with pytest.raises(ProfileError, match="Execution"):
        parse_profile(doc)


def test_missing_profile_key():
    with pytest.raises(ProfileError):
        parse_profile("stages: []\n")


_text = st.text(st.characters(whitelist_categories=("L", "N"), whitelist_characters=" ,.()'"),
                min_size=1, max_size=40).map(str.strip).filter(lambda s: s and not s[0].isdigit())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(_text, st.lists(_text, max_size=4)), min_size=1, max_size=6,
                unique_by=lambda t: t[0]))
def test_profile_round_trip(rows):
    profile = ThreatActorProfile(tuple(Stage(n, tuple(t)) for n, t in rows))
    assert parse_profile(serialize_profile(profile)) == profile


def test_fixture_round_trip():
    profile = load_profile(FIXTURES / "ta_profile.yaml")
    assert parse_profile(serialize_profile(profile)) == profile


@pytest.mark.parametrize("name,n,pos,neg", [("baseline", 15, 11, -6), ("focused", 11, 8, -5)])
def test_builtin_sets(name, n, pos, neg):
    cs = builtin_criteria(name)
    assert len(cs) == n
    assert sum(c.delta for c in cs.criteria if c.delta > 0) == pos
    assert sum(c.delta for c in cs.criteria if c.delta < 0) == neg
    assert cs.max_score == pos


def test_focused_specific_deltas():
    cs = builtin_criteria("focused")
    assert cs[slugify("OAuth Abuse observed")].delta == 2
    assert cs[slugify("All the suspicious IP addresses are benign")].delta == -2


def test_baseline_stage_rows_first():
    cs = builtin_criteria("baseline")
    assert [c.source for c in cs.criteria[:9]] == ["ta_profile"] * 9
    assert all(KILL_CHAIN_STAGES[i] in cs.criteria[i].text for i in range(9))


def test_guidance_rendering():
    assert len(render_guidances(builtin_criteria("baseline"))) == 15
    assert "Initial Access" in render_guidances(builtin_criteria("baseline"))[0]
    assert "OAuth Abuse" in render_guidances(builtin_criteria("focused"))[1]
    single = CriteriaSet("custom", (Criterion("x", "other", "Something odd", 1),))
    assert render_guidances(single) == ["1. Something odd"]


def test_custom_zero_delta_rejected(tmp_path):
    path = tmp_path / "crit.yaml"
    path.write_text("- {text: Something odd, delta: 0}\n")
    with pytest.raises(CriteriaError):
        load_criteria_file(path)


def test_custom_file_loads(tmp_path):
    path = tmp_path / "crit.yaml"
    path.write_text("- {text: Token replay observed, source: ta_profile, delta: 2}\n- {text: Quiet app, delta: -1}\n")
    cs = load_criteria_file(path)
    assert cs.ids == ["token-replay-observed", "quiet-app"]
    assert cs.max_score == 2


def test_duplicate_ids_rejected():
    c = Criterion("a", "other", "A", 1)
    with pytest.raises(CriteriaError):
        CriteriaSet("custom", (c, c))
