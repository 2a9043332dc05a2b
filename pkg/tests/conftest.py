import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from verilabel.domain import Codebook, Speaker, Transcript, Utterance, load_default_codebook

# One verdict line per acceptance criterion, printed after the test run
# (regular prints are swallowed by pytest's capture for passing tests).
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def codebook() -> Codebook:
    return load_default_codebook().require_valid()


def make_session(session_id: str, speakers: str) -> Transcript:
    """Build a session from a compact speaker string, e.g. "TSTST".

    T -> TUTOR, S -> STUDENT; text encodes the position so fixtures are
    easy to trace by hand.
    """
    utterances = []
    for i, ch in enumerate(speakers):
        speaker = Speaker.TUTOR if ch == "T" else Speaker.STUDENT
        utterances.append(
            Utterance(
                session_id=session_id,
                turn_index=i,
                speaker=speaker,
                text=f"{ch}{i} says something",
            )
        )
    return Transcript(session_id=session_id, utterances=tuple(utterances))


def alternating_session(session_id: str, n_turns: int, first: str = "S") -> Transcript:
    pattern = ("ST" if first == "S" else "TS") * ((n_turns + 1) // 2)
    return make_session(session_id, pattern[:n_turns])
