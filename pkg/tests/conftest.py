import random
import string

import pytest

from forage.trajectory import Block, Trajectory

_ALPHABET = string.ascii_letters + string.digits + " .,;:?!'-()/<>[]\t"


def _random_text(rng: random.Random, max_len: int = 24, newlines: bool = True) -> str:
    chars = _ALPHABET + ("\n" if newlines else "")
    text = "".join(rng.choice(chars) for _ in range(rng.randint(0, max_len)))
    # keep tag substrings out of block text; a stray '<' or '>' is fine
    for name in ("think", "search", "info", "answer", "evidence"):
        text = text.replace(f"<{name}>", "").replace(f"</{name}>", "")
    return text


def random_block_text(rng: random.Random) -> str:
    return _random_text(rng)


def random_trajectory(rng: random.Random, max_searches: int = 6) -> Trajectory:
    """Grammar-valid trajectory with random texts, doc ids and passages."""
    blocks: list[Block] = []
    for _ in range(rng.randint(0, max_searches)):
        if rng.random() < 0.5:
            blocks.append(Block.think(_random_text(rng)))
        query = _random_text(rng)
        if not query.strip():
            query = "q" + query
        blocks.append(Block.search(query))
        if rng.random() < 0.15:
            text = _random_text(rng)
            if text.startswith("[") or not text:
                text = "free " + text
            blocks.append(Block.info_text(text))
        else:
            ids = rng.sample([f"d{i}" for i in range(40)], rng.randint(0, 4))
            blocks.append(Block.info([(d, _random_text(rng, newlines=False)) for d in ids]))
    if rng.random() < 0.5:
        blocks.append(Block.think(_random_text(rng)))
    blocks.append(Block.answer(_random_text(rng)))
    return Trajectory(tuple(blocks), question=_random_text(rng))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


@pytest.fixture(scope="session")
def small_world():
    """A 20-task dataset with its corpus, shared across tests."""
    from forage.corpus import build_index
    from forage.datagen import GenConfig, generate_dataset

    ds = generate_dataset(GenConfig(n_tasks=20, seed=7))
    return ds, build_index(ds.documents)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion-marked test

_criteria: dict[int, tuple[str, bool, str, float]] = {}
_setup_time: dict[str, float] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "setup":
        # shared fixtures do the heavy lifting for some criteria
        _setup_time[item.nodeid] = report.duration
    if not (report.when == "call" or report.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _criteria[number] = (title, report.passed, detail, report.duration + _setup_time.get(item.nodeid, 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, passed, detail, duration = _criteria[number]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number} {status}  {title} ({duration:.1f}s)"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
