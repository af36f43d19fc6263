import json

import pytest

from teamlens.data import MatchRecord, PlayerObservation


def obs(pid, selo=1000.0, actions=1200, pos="none", civ="franks", telo=None):
    return PlayerObservation(pid, selo, actions, pos, civ, telo)


def match(mid, ts, team_a, team_b, winner="A", mode=None, map="arabia", duration=30.0):
    mode = mode or ("solo" if len(team_a) == 1 else f"{len(team_a)}v{len(team_a)}")
    return MatchRecord(mid, ts, mode, map, tuple(team_a), tuple(team_b), winner, duration)


def team(*pids, pos=None, **kw):
    pos = pos or (["none"] if len(pids) == 1 else ["flank"] * len(pids))
    return [obs(p, pos=q, **kw) for p, q in zip(pids, pos)]


@pytest.fixture
def jsonl_line():
    def make(**over):
        d = {
            "match_id": "m1", "ts": 100, "mode": "2v2", "map": "arabia", "duration_min": 30.0,
            "winner": "A",
            "team_a": [{"pid": "a", "selo": 1100.0, "telo": 1050.0, "actions": 900,
                        "pos": "flank", "civ": "franks"},
                       {"pid": "b", "selo": 1000.0, "telo": None, "actions": 1200,
                        "pos": "pocket", "civ": "huns"}],
            "team_b": [{"pid": "c", "selo": 990.0, "telo": 1000.0, "actions": 1000,
                        "pos": "flank", "civ": "mayans"},
                       {"pid": "d", "selo": 1200.0, "telo": 1010.0, "actions": 1500,
                        "pos": "pocket", "civ": "franks"}],
        }
        d.update(over)
        return (json.dumps(d) + "\n").encode()
    return make


@pytest.fixture(scope="session")
def small_world():
    """A small synthetic corpus carried through featurization, S1 and the TP index."""
    from teamlens import analysis as an
    from teamlens.data import split_dataset
    from teamlens.features import DeltaScaler, build_feature_table
    from teamlens.simgen import SyntheticConfig, run_world
    from teamlens.tp import TeamPlayerEffect, compute_residuals

    cfg = SyntheticConfig(n_players=120, team_matches=2500, seed=11, solo_warmup=20)
    world = run_world(cfg)
    sp = split_dataset(world.records, 1)
    table = build_feature_table(world.records, seed=2)
    t1 = table[table.match_id.isin(sp.t1_ids)].reset_index(drop=True)
    t2 = table[~table.match_id.isin(sp.t1_ids)].reset_index(drop=True)
    sc = DeltaScaler().fit(t1)
    for t in (t1, t2):
        z = sc.transform(t)
        for c in z.columns:
            t["d_" + c] = z[c].to_numpy()
    s1 = an.run_s1_suite(t1)
    ledger = compute_residuals(s1.models["S1.3"], t1)
    tpe = TeamPlayerEffect().fit(ledger)
    frame = an.s2_frame(t2, tpe.index_.lookup(), s1.models["S1.3"], 3)
    return {"world": world, "t1": t1, "t2": t2, "scaler": sc, "s1": s1, "ledger": ledger,
            "tpe": tpe, "frame": frame, "cfg": cfg}


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion and return the verdict."""
    def record(number, ok, detail):
        request.config.stash[ACCEPTANCE][number] = (bool(ok), detail)
        print(f"AC{number} {'PASS' if ok else 'FAIL'}: {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, 11):
        ok, detail = results.get(n, (False, "not run"))
        terminalreporter.write_line(f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {detail}")
