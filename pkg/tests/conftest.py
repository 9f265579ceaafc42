from sortline_rm.scenario import scenario_from_dict
from sortline_rm.simulation import run_scenario

PERIOD = 25_000


def simulate(**doc):
    doc.setdefault("duration", 2_000_000)
    return run_scenario(scenario_from_dict(doc))


def records(result, kind, **match):
    out = []
    for r in result.trace.records:
        if r["kind"] == kind and all(r["payload"].get(k) == v for k, v in match.items()):
            out.append(r)
    return out


def one(result, kind, **match):
    found = records(result, kind, **match)
    assert len(found) == 1, (kind, match, found)
    return found[0]


# acceptance criterion id -> (status, summary); filled by test_acceptance
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(CRITERIA):
        status, summary = CRITERIA[cid]
        terminalreporter.write_line(f"{cid} {status}: {summary}")
