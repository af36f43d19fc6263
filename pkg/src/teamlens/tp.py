"""Residual ledgers, team-player effects and inclusion-threshold selection."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .glm import ClusteredLogisticRegression, accuracy, fit_logistic

log = logging.getLogger(__name__)

LEDGER_COLUMNS = ["player", "match_id", "residual", "side", "position", "p_focal", "zero_fam"]


def design(table: pd.DataFrame, features) -> pd.DataFrame:
    """Model design from a feature table whose standardized deltas are ``d_<name>``."""
    cols = {}
    for f in features:
        if f"d_{f}" in table.columns:
            cols[f] = table[f"d_{f}"].to_numpy(float)
        elif f in table.columns:
            cols[f] = table[f].to_numpy(float)
        else:
            raise ValueError(f"feature {f!r} missing from feature table")
    return pd.DataFrame(cols, index=table.index)


class ResidualLedger:
    """Long table of per-player residuals, one entry per (player, match).

    Every residual is from the player's own team's perspective: focal
    members get ``y - p`` and opposing members ``(1 - y) - (1 - p)``.
    """

    def __init__(self, entries: pd.DataFrame):
        self.entries = entries.reset_index(drop=True)

    def __len__(self):
        return len(self.entries)

    def counts(self) -> pd.Series:
        return self.entries.groupby("player", sort=True).size()

    def effects(self) -> pd.Series:
        return self.entries.groupby("player", sort=True)["residual"].mean()

    def players(self):
        return set(self.entries["player"].unique())

    def to_csv(self, path):
        self.entries.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path):
        return cls(pd.read_csv(path, dtype={"player": str, "match_id": str},
                               float_precision="round_trip"))


def _explode(table, col_players, col_pos):
    players = table[col_players].str.split("|")
    pos = table[col_pos].str.split("|")
    df = pd.DataFrame({"match_id": table["match_id"].astype(str).to_numpy(),
                       "player": players.to_numpy(), "position": pos.to_numpy()})
    return df.explode(["player", "position"], ignore_index=True)


def compute_residuals(model: ClusteredLogisticRegression, table: pd.DataFrame,
                      focal_only=False) -> ResidualLedger:
    X = design(table, model.feature_names_in_)
    p = model.predict_proba(X)[:, 1]
    y = table["y"].to_numpy(float)
    r = y - p
    base = pd.DataFrame({"match_id": table["match_id"].astype(str).to_numpy(), "r": r,
                         "p_focal": p,
                         "zero_fam": table["zero_fam"].astype(bool).to_numpy()
                         if "zero_fam" in table.columns else False})
    parts = []
    f = _explode(table, "focal_players", "focal_pos").merge(base, on="match_id", sort=False)
    f["side"] = "focal"
    f["residual"] = f["r"]
    parts.append(f)
    if not focal_only:
        o = _explode(table, "opp_players", "opp_pos").merge(base, on="match_id", sort=False)
        o["side"] = "opp"
        o["residual"] = -o["r"]
        parts.append(o)
    entries = pd.concat(parts, ignore_index=True)[LEDGER_COLUMNS]
    entries["player"] = entries["player"].astype(str)
    return ResidualLedger(entries)


def player_effect(ledger: ResidualLedger, player):
    """Mean residual of ``player``; None when the player has no entries."""
    vals = ledger.entries.loc[ledger.entries["player"] == player, "residual"]
    if vals.empty:
        return None
    return float(vals.mean())


@dataclass
class TeamPlayerIndex:
    effects: pd.Series
    counts: pd.Series
    tau: int

    def qualified(self) -> pd.Series:
        return self.counts >= self.tau

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "player_id": self.effects.index.astype(str),
            "n_matches": self.counts.to_numpy(int),
            "tp_effect": self.effects.to_numpy(float),
            "qualified": self.qualified().to_numpy(bool),
        })

    @classmethod
    def from_frame(cls, df, tau=None):
        df = df.astype({"player_id": str})
        idx = pd.Index(df["player_id"], name="player")
        tau = int(tau) if tau is not None else _infer_tau(df)
        return cls(pd.Series(df["tp_effect"].to_numpy(float), index=idx),
                   pd.Series(df["n_matches"].to_numpy(int), index=idx), tau)

    @classmethod
    def from_ledger(cls, ledger, tau):
        return cls(ledger.effects(), ledger.counts(), int(tau))

    def lookup(self):
        q = self.qualified()
        return {p: e for p, e, ok in zip(self.effects.index, self.effects.to_numpy(), q.to_numpy())
                if ok}


def _infer_tau(df):
    q = df.loc[df["qualified"].astype(bool), "n_matches"]
    return int(q.min()) if len(q) else int(df["n_matches"].max()) + 1


def team_effect(index: TeamPlayerIndex, roster) -> float:
    """Mean effect of the qualified members; 0.0 if nobody qualifies."""
    roster = list(roster)
    if not roster:
        raise ValueError("empty roster")
    lookup = index.lookup()
    vals = [lookup[p] for p in roster if p in lookup]
    return float(np.mean(vals)) if vals else 0.0


def team_effects(lookup: dict, rosters) -> np.ndarray:
    """Vectorised :func:`team_effect` over pipe-joined roster strings."""
    out = np.empty(len(rosters))
    for i, r in enumerate(rosters):
        vals = [lookup[p] for p in r.split("|") if p in lookup]
        out[i] = sum(vals) / len(vals) if vals else 0.0
    return out


def band_curve(effects: pd.Series, counts: pd.Series, bin_size=10, coverage=95.0,
               min_players=5) -> pd.DataFrame:
    """Percentile band of player effects per match-count bin.

    Bins are ``[k*bin_size, (k+1)*bin_size)``; bins with fewer than
    ``min_players`` players are dropped.
    """
    lo_q, hi_q = (100 - coverage) / 2, 100 - (100 - coverage) / 2
    df = pd.DataFrame({"tp": effects.to_numpy(float), "n": counts.to_numpy(int)})
    df["edge"] = (df["n"] // bin_size) * bin_size
    rows = []
    for edge, g in df.groupby("edge", sort=True):
        if len(g) < min_players:
            continue
        lo, hi = np.percentile(g["tp"], [lo_q, hi_q])
        rows.append((int(edge), len(g), lo, hi, hi - lo))
    return pd.DataFrame(rows, columns=["bin_edge", "n_players", "lower", "upper", "width"])


def knee_index(x, y):
    """Index of the point farthest from the chord joining the first and last points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    norm = np.hypot(dx, dy)
    if norm == 0:
        return 0
    dist = np.abs(dy * (x - x[0]) - dx * (y - y[0])) / norm
    return int(np.argmax(dist))


def select_threshold(ledger: ResidualLedger, bin_size=10, coverage=95.0, min_players=5):
    """Inclusion threshold at the knee of the residual band-width curve."""
    curve = band_curve(ledger.effects(), ledger.counts(), bin_size, coverage, min_players)
    return threshold_from_curve(curve)


def threshold_from_curve(curve: pd.DataFrame) -> int:
    if len(curve) < 3:
        raise ValueError(f"insufficient range: {len(curve)} populated bins (need >= 3)")
    x, y = curve["bin_edge"].to_numpy(), curve["width"].to_numpy()
    chord = y[0] + (y[-1] - y[0]) * (x - x[0]) / (x[-1] - x[0])
    if np.allclose(y, chord, rtol=0, atol=1e-12):
        warnings.warn("band-width curve has no knee; using the smallest bin edge",
                      RuntimeWarning, stacklevel=2)
        return max(int(x[0]), 1)
    return max(int(x[knee_index(x, y)]), 1)


class TeamPlayerEffect(TransformerMixin, BaseEstimator):
    """Estimate per-player effects from a residual ledger and score rosters.

    ``fit`` takes a :class:`ResidualLedger`; ``transform`` takes a feature
    table and returns the between-team delta of team effects
    (focal minus opponent) for every row.
    """

    def __init__(self, tau="auto", bin_size=10):
        self.tau = tau
        self.bin_size = bin_size

    def fit(self, ledger, y=None):
        self.band_curve_ = band_curve(ledger.effects(), ledger.counts(), self.bin_size)
        if self.tau == "auto":
            self.tau_ = threshold_from_curve(self.band_curve_)
        else:
            self.tau_ = int(self.tau)
        self.index_ = TeamPlayerIndex.from_ledger(ledger, self.tau_)
        return self

    def team_effects(self, rosters):
        check_is_fitted(self, "index_")
        return team_effects(self.index_.lookup(), list(rosters))

    def transform(self, table):
        return (self.team_effects(table["focal_players"])
                - self.team_effects(table["opp_players"])).reshape(-1, 1)


def parse_grid(spec: str):
    lo, hi, step = (int(v) for v in spec.split(":"))
    if step <= 0 or hi < lo:
        raise ValueError(f"bad grid {spec!r}")
    return list(range(lo, hi + 1, step))


@dataclass
class ThresholdSweepResult:
    table: pd.DataFrame
    selected: int


def _zscore(v, ref):
    sd = ref.std()
    if sd == 0:
        return None
    return (v - ref.mean()) / sd


def sweep_threshold(ledger: ResidualLedger, t2_train: pd.DataFrame, tau_grid,
                    t2_test: pd.DataFrame | None = None) -> ThresholdSweepResult:
    """Refit a TP-only win model on T2 training rows for every threshold."""
    tau_grid = list(tau_grid)
    if not tau_grid:
        raise ValueError("empty threshold grid")
    if any(b <= a for a, b in zip(tau_grid, tau_grid[1:])):
        raise ValueError("threshold grid must be ascending")
    effects, counts = ledger.effects(), ledger.counts()
    t2_players = set()
    for frame in (t2_train, t2_test):
        if frame is None:
            continue
        for col in ("focal_players", "opp_players"):
            for r in frame[col]:
                t2_players.update(r.split("|"))
    n_t2 = len(t2_players)
    y = t2_train["y"].to_numpy(int)
    rows = []
    for tau in tau_grid:
        idx = TeamPlayerIndex(effects, counts, tau)
        lookup = idx.lookup()
        covered = sum(1 for p in t2_players if p in lookup)
        raw = team_effects(lookup, list(t2_train["focal_players"])) - \
            team_effects(lookup, list(t2_train["opp_players"]))
        z = _zscore(raw, raw)
        r2, acc = 0.0, np.nan
        if z is not None:
            model = fit_logistic(pd.DataFrame({"tp": z}), y)
            r2 = float(model.pseudo_r2_)
            if t2_test is not None and len(t2_test):
                raw_te = team_effects(lookup, list(t2_test["focal_players"])) - \
                    team_effects(lookup, list(t2_test["opp_players"]))
                acc = accuracy(model, pd.DataFrame({"tp": (raw_te - raw.mean()) / raw.std()}),
                               t2_test["y"].to_numpy(int))
        rows.append((tau, r2, acc, covered / n_t2 if n_t2 else 0.0, int(len(lookup))))
    table = pd.DataFrame(rows, columns=["tau", "pseudo_r2", "accuracy", "coverage",
                                        "n_qualified"])
    best = int(table.loc[table["pseudo_r2"].idxmax(), "tau"])
    return ThresholdSweepResult(table, best)


def null_scaled_effects(ledger: ResidualLedger, n_rep=20, seed=0, min_count=1):
    """Draw sqrt(n)-scaled effects under the fitted model's own outcome law.

    Each replicate redraws every match outcome as Bernoulli(p_focal) and
    rebuilds all player effects from the same rosters.
    """
    e = ledger.entries
    codes, mids = pd.factorize(e["match_id"])
    focal = (e["side"] == "focal").to_numpy()
    p = np.zeros(len(mids))
    p[codes] = e["p_focal"].to_numpy()
    pcodes, players = pd.factorize(e["player"])
    counts = np.bincount(pcodes)
    keep = counts >= min_count
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_rep):
        win = (rng.random(len(mids)) < p).astype(float)
        r = win[codes] - p[codes]
        r = np.where(focal, r, -r)
        tp = np.bincount(pcodes, weights=r) / counts
        out.append((tp * np.sqrt(counts))[keep])
    return np.concatenate(out)
