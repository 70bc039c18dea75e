import pytest
from hypothesis import given, strategies as st

from sasvkit.errors import ProtocolError
from sasvkit.protocol import (
    EnrolmentModel, KeyKind, ProtocolSet, Subset, Trial, TrialKey,
    load_protocol, parse_enrolments, parse_trial_file, parse_trials, subset,
    write_enrolment_file, write_trial_file,
)


def test_parse_target_line():
    (t,), _ = parse_trials(["LA_0015 LA_E_1103494 bonafide target"])
    assert t == Trial("LA_0015", "LA_E_1103494", "bonafide", TrialKey.target())


def test_parse_spoof_line():
    (t,), _ = parse_trials(["LA_0015 LA_E_2000011 A07 spoof"])
    assert t.source == "A07"
    assert t.key == TrialKey.spoof("A07")


def test_source_key_mismatch_names_line():
    lines = ["LA_0015 LA_E_1 bonafide target", "", "LA_0015 LA_E_2000011 A07 target"]
    with pytest.raises(ProtocolError, match=r":3:"):
        parse_trials(lines)


@pytest.mark.parametrize("line", [
    "LA_0015 LA_E_1 bonafide",
    "LA_0015 LA_E_1 bonafide target extra",
    "LA_0015 LA_E_1 bonafide impostor",
    "LA_0015 LA_E_1 bonafide spoof",
    "LA_0015 LA_E_1 A07 nontarget",
    "LA_0015 LA_E_1 tts1 spoof",
])
def test_malformed_lines(line):
    with pytest.raises(ProtocolError, match=":1:"):
        parse_trials([line])


def test_loose_attack_ids():
    (t,), _ = parse_trials(["s u tts1 spoof"], strict_attack_ids=False)
    assert t.key.attack_id == "tts1"


def test_keys_case_insensitive():
    trials, _ = parse_trials(["s u1 BonaFide TARGET", "s u2 bonafide NonTarget", "s u3 A01 Spoof"])
    assert [t.key.kind for t in trials] == [KeyKind.TARGET, KeyKind.NONTARGET, KeyKind.SPOOF]
    assert trials[0].source == "bonafide"
    assert trials[0].to_line() == "s u1 bonafide target"


def test_duplicates_retained_and_counted():
    trials, n_dup = parse_trials(["s u bonafide target"] * 3 + ["s v bonafide target"])
    assert len(trials) == 4
    assert n_dup == 2


def test_trial_invariant_enforced_on_construction():
    with pytest.raises(ValueError):
        Trial("s", "u", "A07", TrialKey.target())
    with pytest.raises(ValueError):
        TrialKey(KeyKind.TARGET, "A01")


def test_enrolment_two_utts():
    m = parse_enrolments(["LA_0015 LA_E_a,LA_E_b"])
    assert m["LA_0015"].enrol_utts == ("LA_E_a", "LA_E_b")


@pytest.mark.parametrize("lines, msg", [
    (["LA_0015 "], "empty enrolment"),
    (["a x,y", "a z"], "duplicate speaker model"),
    (["a x,x"], "repeats"),
    (["a x,,y"], "empty utterance"),
])
def test_enrolment_errors(lines, msg):
    with pytest.raises(ProtocolError, match=msg):
        parse_enrolments(lines)


def _mixed(n_tar=2, n_non=3, n_spf=4):
    ts = [Trial("m", f"t{i}", "bonafide", TrialKey.target()) for i in range(n_tar)]
    ts += [Trial("m", f"n{i}", "bonafide", TrialKey.nontarget()) for i in range(n_non)]
    ts += [Trial("m", f"s{i}", "A01", TrialKey.spoof("A01")) for i in range(n_spf)]
    return ts


@pytest.mark.parametrize("which, n", [("sv", 5), ("spf", 6), ("sasv", 9)])
def test_subset_sizes(which, n):
    assert len(subset(_mixed(), which)) == n


def test_protocol_requires_enrolment_for_every_model():
    with pytest.raises(ProtocolError, match="without enrolment"):
        ProtocolSet(tuple(_mixed()), {})


kinds = st.sampled_from(["target", "nontarget", "A01", "A07", "A19"])


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 50), kinds), max_size=60))
def test_subset_properties(rows):
    trials = []
    for m, u, k in rows:
        if k.startswith("A"):
            trials.append(Trial(f"m{m}", f"u{u}", k, TrialKey.spoof(k)))
        else:
            key = TrialKey.target() if k == "target" else TrialKey.nontarget()
            trials.append(Trial(f"m{m}", f"u{u}", "bonafide", key))
    sv, spf, sasv = (subset(trials, w) for w in Subset)
    n_tar = sum(t.is_target for t in trials)
    assert len(sv) + len(spf) - n_tar == len(sasv) == len(trials)
    assert sasv == trials
    # order preserved
    assert sv == [t for t in trials if t in sv and t.is_bonafide]
    assert all(not t.is_spoof for t in sv) and all(not t.is_nontarget for t in spf)


ident = st.text("abcdefXYZ_0123456789", min_size=1, max_size=8)


@given(st.lists(st.tuples(st.integers(0, 4), ident, st.sampled_from(["target", "nontarget", "A07"])),
                min_size=1, max_size=30),
       st.dictionaries(st.integers(0, 4), st.lists(ident, min_size=1, max_size=4, unique=True), min_size=5))
def test_round_trip(tmp_path_factory, raw, enrol_raw):
    d = tmp_path_factory.mktemp("rt")
    trials = []
    for m, u, k in raw:
        src = k if k.startswith("A") else "bonafide"
        key = TrialKey.spoof(k) if k.startswith("A") else TrialKey(KeyKind(k))
        trials.append(Trial(f"spk{m}", u, src, key))
    enrol = {f"spk{m}": EnrolmentModel(f"spk{m}", tuple(us)) for m, us in enrol_raw.items()}
    ps = ProtocolSet(tuple(trials), enrol)
    write_trial_file(ps.trials, d / "t.txt")
    write_enrolment_file(ps.enrolments, d / "e.txt")
    back = load_protocol(d / "t.txt", d / "e.txt")
    assert back.trials == ps.trials
    assert dict(back.enrolments) == dict(ps.enrolments)


def test_missing_file():
    with pytest.raises(ProtocolError, match="cannot read"):
        parse_trial_file("/nonexistent/trials.txt")
