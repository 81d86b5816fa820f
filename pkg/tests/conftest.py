import numpy as np
import pytest
from scipy import stats


def chi_square_pvalue(samples, probs):
    """Goodness-of-fit p-value of integer samples against ``probs`` on ``0..len(probs)-1``.

    Cells with expected count below 5 are pooled into one bin.
    """
    samples = np.asarray(samples)
    probs = np.asarray(probs, dtype=float)
    n = samples.size
    observed = np.bincount(samples, minlength=probs.size).astype(float)
    expected = probs * n
    big = expected >= 5
    obs = list(observed[big])
    exp = list(expected[big])
    if (~big).any():
        obs.append(observed[~big].sum())
        exp.append(expected[~big].sum())
    obs, exp = np.array(obs), np.array(exp)
    keep = exp > 0
    if keep.sum() < 2:
        return 1.0
    exp = exp[keep] * obs[keep].sum() / exp[keep].sum()
    return stats.chisquare(obs[keep], exp).pvalue


# Acceptance report: tests marked ``criterion(n)`` roll up into one
# pass/fail line per criterion at the end of the run.
_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail" and rep.when == "call"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        line = f"criterion {n:>2} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
