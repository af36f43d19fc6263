"""Per-player rolling history, team feature aggregation and standardized deltas."""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import astuple, dataclass, fields

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import MatchRecord, order_chronologically, uniform_hash

log = logging.getLogger(__name__)

FEATURES = ("eapm", "selo", "ffam_match", "ffam_map", "ffam_civ", "tfam")
S1_FEATURES = FEATURES[:5]


def effective_apm(actions, duration):
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if actions < 0:
        raise ValueError(f"actions must be non-negative, got {actions}")
    return actions / duration


def functional_familiarity(prior_count):
    """log(1 + n) of a player's prior matches in one context."""
    if prior_count < 0:
        raise ValueError(f"prior count must be non-negative, got {prior_count}")
    return math.log1p(prior_count)


def team_familiarity(pair_counts):
    """Log of one plus the mean pairwise shared-match count over ordered pairs.

    ``pair_counts`` is a symmetric n x n matrix; the diagonal is ignored.
    """
    m = np.asarray(pair_counts, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("pair counts must be a square matrix")
    n = m.shape[0]
    if n < 2:
        raise ValueError("team familiarity needs at least two players")
    off = m.sum() - np.trace(m)
    return math.log1p(off / (n * (n - 1)))


class PlayerHistoryState:
    """Cumulative counters for every player seen so far.

    Counters only ever grow. Pairwise familiarity is keyed on the sorted pair,
    so Fam(p1, p2) == Fam(p2, p1) by construction.
    """

    def __init__(self):
        self.matches = Counter()
        self.map_matches = Counter()
        self.civ_matches = Counter()
        self.pairs = Counter()
        self.apm_sum = defaultdict(float)
        self.apm_n = Counter()
        self.last_solo_elo = {}
        self.last_ts = None

    def familiarity(self, p1, p2):
        if p1 == p2:
            return 0
        return self.pairs[(p1, p2) if p1 < p2 else (p2, p1)]

    def pair_matrix(self, players):
        n = len(players)
        m = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            m[i, j] = m[j, i] = self.familiarity(players[i], players[j])
        return m

    def career_eapm(self, player):
        n = self.apm_n[player]
        return self.apm_sum[player] / n if n else None


def update_history(state: PlayerHistoryState, record: MatchRecord) -> PlayerHistoryState:
    """Fold one finished match into ``state`` (in place) and return it."""
    if state.last_ts is not None and record.timestamp < state.last_ts:
        raise ValueError(
            f"match {record.match_id} at t={record.timestamp} precedes already "
            f"applied t={state.last_ts}; matches must be applied in order"
        )
    state.last_ts = record.timestamp
    for obs in record.team_a + record.team_b:
        p = obs.player
        state.matches[p] += 1
        state.map_matches[(p, record.map)] += 1
        state.civ_matches[(p, obs.civilization)] += 1
        state.apm_sum[p] += effective_apm(obs.effective_actions, record.duration)
        state.apm_n[p] += 1
        state.last_solo_elo[p] = obs.solo_elo
    if not record.is_solo:
        for team in (record.team_a, record.team_b):
            for a, b in itertools.combinations(sorted(o.player for o in team), 2):
                state.pairs[(a, b)] += 1
    return state


@dataclass(frozen=True)
class TeamFeatureVector:
    eapm: float
    selo: float
    ffam_match: float
    ffam_map: float
    ffam_civ: float
    tfam: float
    team_size: int

    def as_array(self):
        return np.array(astuple(self)[:-1], dtype=float)


def aggregate_team(observations, state: PlayerHistoryState, map_name, duration,
                   eapm_mode="career") -> TeamFeatureVector:
    """Team means of the per-player features, using history strictly before this match.

    ``eapm_mode='career'`` uses each player's mean eAPM over earlier matches
    (falling back to this match's eAPM for a player with no history);
    ``'match'`` uses this match's eAPM.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("cannot aggregate an empty team")
    apm, elo, fm, fmap, fciv = [], [], [], [], []
    for o in observations:
        current = effective_apm(o.effective_actions, duration)
        if eapm_mode == "career":
            hist = state.career_eapm(o.player)
            apm.append(current if hist is None else hist)
        elif eapm_mode == "match":
            apm.append(current)
        else:
            raise ValueError(f"unknown eapm_mode {eapm_mode!r}")
        elo.append(o.solo_elo)
        fm.append(functional_familiarity(state.matches[o.player]))
        fmap.append(functional_familiarity(state.map_matches[(o.player, map_name)]))
        fciv.append(functional_familiarity(state.civ_matches[(o.player, o.civilization)]))
    players = [o.player for o in observations]
    tfam = team_familiarity(state.pair_matrix(players)) if len(players) > 1 else 0.0
    return TeamFeatureVector(
        eapm=float(np.mean(apm)), selo=float(np.mean(elo)), ffam_match=float(np.mean(fm)),
        ffam_map=float(np.mean(fmap)), ffam_civ=float(np.mean(fciv)), tfam=tfam,
        team_size=len(observations),
    )


def team_key(players) -> str:
    return "|".join(sorted(players))


def build_feature_table(records, seed=0, eapm_mode="career") -> pd.DataFrame:
    """Stream the full log in time order and emit one row per team match.

    Each row is oriented on a focal team drawn with a seeded per-match coin
    (``y`` is 1 iff the focal team won). Matches sharing a timestamp are
    featurized before any of them is folded into the history.
    """
    state = PlayerHistoryState()
    rows = []
    ordered = order_chronologically(records)
    for _, group in itertools.groupby(ordered, key=lambda r: r.timestamp):
        group = list(group)
        for rec in group:
            if rec.is_solo:
                continue
            rows.append(_match_row(rec, state, seed, eapm_mode))
        for rec in group:
            update_history(state, rec)
    cols = _table_columns()
    return pd.DataFrame(rows, columns=cols)


def _table_columns():
    base = ["match_id", "ts", "mode", "map", "team_size", "y", "focal_side",
            "cluster", "opp_cluster", "focal_players", "opp_players", "focal_pos", "opp_pos"]
    feats = [f"{f}_{s}" for f in FEATURES for s in ("focal", "opp")]
    return base + feats + ["abs_tfam", "zero_fam"]


def _match_row(rec: MatchRecord, state, seed, eapm_mode):
    focal_a = uniform_hash(seed, "focal:" + rec.match_id) < 0.5
    focal, opp = (rec.team_a, rec.team_b) if focal_a else (rec.team_b, rec.team_a)
    f = aggregate_team(focal, state, rec.map, rec.duration, eapm_mode)
    o = aggregate_team(opp, state, rec.map, rec.duration, eapm_mode)
    won = (rec.winner == "A") == focal_a
    row = [
        rec.match_id, rec.timestamp, rec.mode, rec.map, rec.team_size, int(won),
        "A" if focal_a else "B",
        team_key(x.player for x in focal), team_key(x.player for x in opp),
        "|".join(x.player for x in focal), "|".join(x.player for x in opp),
        "|".join(x.position for x in focal), "|".join(x.position for x in opp),
    ]
    for name in FEATURES:
        row += [getattr(f, name), getattr(o, name)]
    row += [0.5 * (f.tfam + o.tfam), f.tfam == 0.0 and o.tfam == 0.0]
    return row


def raw_deltas(table: pd.DataFrame, features=FEATURES) -> pd.DataFrame:
    return pd.DataFrame(
        {f: table[f"{f}_focal"].to_numpy(float) - table[f"{f}_opp"].to_numpy(float)
         for f in features},
        index=table.index,
    )


class DeltaScaler(TransformerMixin, BaseEstimator):
    """z-score between-team deltas with statistics from training rows only.

    Accepts either a feature table (``<f>_focal`` / ``<f>_opp`` columns) or a
    frame of raw deltas. Features with zero spread on the training rows are
    dropped with a warning.
    """

    def __init__(self, features=FEATURES):
        self.features = features

    def _deltas(self, X):
        feats = getattr(self, "features_", self.features)
        if all(f"{f}_focal" in X.columns for f in feats):
            return raw_deltas(X, feats)
        return X[list(feats)].astype(float)

    def fit(self, X, y=None):
        d = self._deltas(X)
        if not np.isfinite(d.to_numpy()).all():
            raise ValueError("non-finite feature deltas")
        mean = d.mean()
        sd = d.std(ddof=0)
        keep = [f for f in self.features if sd[f] > 0]
        dropped = [f for f in self.features if f not in keep]
        if dropped:
            log.warning("dropping zero-variance features: %s", ", ".join(dropped))
        self.features_ = keep
        self.dropped_ = dropped
        self.mean_ = {f: float(mean[f]) for f in keep}
        self.scale_ = {f: float(sd[f]) for f in keep}
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        d = self._deltas(X)
        out = pd.DataFrame(index=X.index)
        for f in self.features_:
            col = d[f].to_numpy(float)
            if not np.isfinite(col).all():
                raise ValueError(f"non-finite values in feature {f}")
            out[f] = (col - self.mean_[f]) / self.scale_[f]
        return out

    def to_dict(self):
        check_is_fitted(self, "mean_")
        return {f: {"mean": self.mean_[f], "sd": self.scale_[f]} for f in self.features_}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        s = cls(features=tuple(d))
        s.features_ = list(d)
        s.dropped_ = []
        s.mean_ = {f: float(v["mean"]) for f, v in d.items()}
        s.scale_ = {f: float(v["sd"]) for f, v in d.items()}
        return s

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DeltaFeatureVector:
    values: dict
    label: int | None = None


def delta_standardize(team_a: TeamFeatureVector, team_b: TeamFeatureVector,
                      scaler: DeltaScaler, won: bool | None = None) -> DeltaFeatureVector:
    """Standardized A-minus-B delta for one match (A is the focal team)."""
    check_is_fitted(scaler, "mean_")
    va, vb = team_a.as_array(), team_b.as_array()
    if not (np.isfinite(va).all() and np.isfinite(vb).all()):
        raise ValueError("non-finite team features")
    names = [f.name for f in fields(TeamFeatureVector)][:-1]
    raw = dict(zip(names, va - vb))
    vals = {f: (raw[f] - scaler.mean_[f]) / scaler.scale_[f] for f in scaler.features_}
    return DeltaFeatureVector(vals, None if won is None else int(won))


__all__ = [
    "FEATURES", "S1_FEATURES", "effective_apm", "functional_familiarity", "team_familiarity",
    "PlayerHistoryState", "update_history", "TeamFeatureVector", "aggregate_team",
    "build_feature_table", "raw_deltas", "DeltaScaler", "DeltaFeatureVector",
    "delta_standardize", "team_key",
]
