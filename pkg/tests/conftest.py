import pytest

from sasvkit.synth import SynthConfig, generate

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Record one acceptance line; the summary is printed after the run."""
    def _record(criterion: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((criterion, bool(ok), detail))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {crit}  {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(n_speakers=4, utts_per_speaker=5, n_attacks=2,
                                spoofs_per_attack_per_speaker=2, enrol_per_model=2,
                                nontargets_per_model=3, spk_dim=8, cm_dim=6, seed=3))
