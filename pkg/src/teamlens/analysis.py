"""Model suites, interaction effects, facets, robustness checks and descriptives."""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .data import uniform_hash
from .features import FEATURES, S1_FEATURES
from .glm import (ClusteredLogisticRegression, FitError, accuracy, fit_logistic,
                  marginal_effects_at_mean, significance_stars)
from .tp import ResidualLedger, compute_residuals, design, team_effects

log = logging.getLogger(__name__)

S1_SUITE = {
    "S1.1": ["eapm"],
    "S1.2": ["eapm", "selo"],
    "S1.3": list(S1_FEATURES),
}
S2_SUITE = {
    "S2.1": ["tp"],
    "S2.2": ["taskprof"],
    "S2.3": ["tp", "taskprof"],
    "S2.4": ["tp", "taskprof", "tfam"],
}
INTERACTIONS = {
    "abs_tfam:tp": ("abs_tfam", "tp"),
    "abs_tfam:taskprof": ("abs_tfam", "taskprof"),
    "team_size:tp": ("team_size", "tp"),
    "team_size:taskprof": ("team_size", "taskprof"),
}
ELO_BINS = ("<1000", "1000-1500", "1501-2000", ">2000")


def sample_hash(match_ids) -> str:
    h = hashlib.sha256()
    for m in sorted(map(str, match_ids)):
        h.update(m.encode())
        h.update(b"\n")
    return h.hexdigest()


def params_hash(model) -> str:
    return hashlib.sha256(np.asarray(model.params_, dtype=float).tobytes()).hexdigest()


@dataclass
class SuiteResult:
    models: dict
    sample_hash: str
    accuracies: dict = field(default_factory=dict)

    def table(self) -> pd.DataFrame:
        rows = []
        for name, m in self.models.items():
            for _, r in m.summary_frame().iterrows():
                rows.append((name, r["term"], r["coef"], r["se"], r["p"], r["stars"]))
            rows.append((name, "pseudo_r2", m.pseudo_r2_, np.nan, np.nan, ""))
            rows.append((name, "n_obs", float(m.n_obs_), np.nan, np.nan, ""))
            if name in self.accuracies:
                rows.append((name, "accuracy", self.accuracies[name], np.nan, np.nan, ""))
        out = pd.DataFrame(rows, columns=["model", "term", "coef", "se", "p", "stars"])
        out["sample_hash"] = self.sample_hash
        return out

    def accuracy_chain(self) -> pd.DataFrame:
        prev, rows = 0.5, []
        for name in self.models:
            if name not in self.accuracies:
                continue
            acc = self.accuracies[name]
            rows.append((name, acc, acc - prev))
            prev = acc
        return pd.DataFrame(rows, columns=["model", "accuracy", "delta"])


def run_suite(frame: pd.DataFrame, suite: dict, clusters=None, test: pd.DataFrame | None = None,
              y_col="y") -> SuiteResult:
    """Fit every model of a suite on the same rows."""
    y = frame[y_col].to_numpy(int)
    models, accs = {}, {}
    for name, feats in suite.items():
        X = design(frame, feats)
        models[name] = fit_logistic(X, y, clusters)
        if test is not None and len(test):
            accs[name] = accuracy(models[name], design(test, feats), test[y_col].to_numpy(int))
    return SuiteResult(models, sample_hash(frame["match_id"]), accs)


def run_s1_suite(t1_table: pd.DataFrame) -> SuiteResult:
    return run_suite(t1_table, S1_SUITE, clusters=t1_table["cluster"].to_numpy())


def task_proficiency(s1_model, team_features: pd.DataFrame, scaler) -> pd.Series:
    """Linear task-proficiency index per team from frozen S1.3 coefficients.

    ``team_features`` holds raw team means (one column per S1 feature); the
    index is ``sum_j beta_j * x_j / sd_j`` with the scaler's spreads, so the
    difference of two teams' indices is the model's linear predictor of
    their standardized delta up to the centering constant.
    """
    beta = dict(zip(s1_model.feature_names_in_, s1_model.coef_))
    out = np.zeros(len(team_features))
    for f, b in beta.items():
        if f not in team_features.columns:
            raise KeyError(f"missing feature {f!r} for task proficiency")
        out += b * team_features[f].to_numpy(float) / scaler.scale_[f]
    return pd.Series(out, index=team_features.index, name="taskprof")


def task_proficiency_delta(s1_model, table: pd.DataFrame) -> np.ndarray:
    """Focal-minus-opponent task proficiency from standardized delta columns."""
    X = design(table, s1_model.feature_names_in_)
    return X.to_numpy() @ s1_model.coef_


def holdout_mask(match_ids, seed, test_share=0.2) -> np.ndarray:
    """True for training rows; a seeded per-match draw decides the 80:20 split."""
    u = np.array([uniform_hash(seed, "holdout:" + str(m)) for m in match_ids])
    return u >= test_share


def s2_frame(t2_table, tp_lookup: dict, s1_model, holdout_seed, test_share=0.2):
    """Raw S2 regressors, train/test flag, and their train-standardized versions."""
    raw = pd.DataFrame({
        "match_id": t2_table["match_id"].astype(str).to_numpy(),
        "y": t2_table["y"].to_numpy(int),
        "cluster": t2_table["cluster"].to_numpy(),
        "team_size": t2_table["team_size"].to_numpy(float),
        "abs_tfam": t2_table["abs_tfam"].to_numpy(float),
        "focal_players": t2_table["focal_players"].to_numpy(),
        "opp_players": t2_table["opp_players"].to_numpy(),
        "tp_raw": team_effects(tp_lookup, list(t2_table["focal_players"]))
        - team_effects(tp_lookup, list(t2_table["opp_players"])),
        "taskprof_raw": task_proficiency_delta(s1_model, t2_table),
        "tfam_raw": t2_table["tfam_focal"].to_numpy(float) - t2_table["tfam_opp"].to_numpy(float),
    })
    raw["train"] = holdout_mask(raw["match_id"], holdout_seed, test_share)
    tr = raw[raw["train"]]
    for f in ("tp", "taskprof", "tfam"):
        mu, sd = tr[f"{f}_raw"].mean(), tr[f"{f}_raw"].std(ddof=0)
        if not sd > 0:
            raise FitError(f"S2 regressor {f} has zero variance on the training rows")
        raw[f] = (raw[f"{f}_raw"] - mu) / sd
    for prod, (a, b) in INTERACTIONS.items():
        raw[prod] = raw[a] * raw[b]
    return raw


def run_s2_suite(frame: pd.DataFrame) -> SuiteResult:
    train = frame[frame["train"]]
    test = frame[~frame["train"]]
    return run_suite(train, S2_SUITE, clusters=train["cluster"].to_numpy(), test=test)


def interaction_mem(frame: pd.DataFrame):
    """Fit S2.4 plus the familiarity and team-size interactions; MEM per term."""
    train = frame[frame["train"]]
    inter = {k: v for k, v in INTERACTIONS.items() if train[v[0]].nunique() > 1}
    dropped = sorted(set(INTERACTIONS) - set(inter))
    if dropped:
        # a constant moderator makes its products collinear with the main terms
        warnings.warn(f"constant moderator, dropping {', '.join(dropped)}", RuntimeWarning)
    terms = S2_SUITE["S2.4"] + list(inter)
    model = fit_logistic(design(train, terms), train["y"].to_numpy(int),
                         train["cluster"].to_numpy())
    mem = marginal_effects_at_mean(
        model, design(train, terms), interactions=inter,
        moderators={"abs_tfam": train["abs_tfam"], "team_size": train["team_size"]},
    )
    return model, mem


def familiarity_quantiles(values, q=5) -> np.ndarray:
    """Quantile level 1..q; values equal to an edge go to the lower quantile."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0 or v.max() == v.min():
        raise ValueError("degenerate quantiles: familiarity has no spread")
    edges = np.quantile(v, np.arange(1, q) / q)
    return np.searchsorted(edges, v, side="left") + 1


def facet_regressions(frame: pd.DataFrame, facet="familiarity", min_rows=500,
                      terms=None) -> pd.DataFrame:
    train = frame[frame["train"]]
    terms = terms or S2_SUITE["S2.4"]
    if facet == "familiarity":
        levels = familiarity_quantiles(train["abs_tfam"])
    elif facet == "team_size":
        levels = train["team_size"].to_numpy(int)
    else:
        raise ValueError(f"unknown facet {facet!r}")
    rows = []
    for level in np.unique(levels):
        sub = train[levels == level]
        y = sub["y"].to_numpy(int)
        if y.min() == y.max():
            warnings.warn(f"facet {facet}={level} has a single class; skipped", RuntimeWarning)
            continue
        try:
            m = fit_logistic(design(sub, terms), y, sub["cluster"].to_numpy())
        except (FitError, ValueError) as exc:
            warnings.warn(f"facet {facet}={level} skipped: {exc}", RuntimeWarning)
            continue
        sf = m.summary_frame()
        for _, r in sf.iterrows():
            rows.append((facet, int(level), r["term"], r["coef"], r["se"], r["p"], r["stars"],
                         len(sub), len(sub) < min_rows))
    return pd.DataFrame(rows, columns=["facet", "level", "term", "coef", "se", "p", "stars",
                                       "n", "sparse"])


def ks_2samp(x, y):
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ValueError("KS test needs two nonempty samples")
    grid = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, grid, side="right") / n
    cdf_y = np.searchsorted(y, grid, side="right") / m
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    en = np.sqrt(n * m / (n + m))
    p = float(stats.kstwobign.sf(en * d))
    return d, min(max(p, 0.0), 1.0)


DEFAULT_COUNT_BINS = (1, 10, 25, 50, 100, 200, np.inf)


def _bin_label(lo, hi):
    return f"[{int(lo)},{'inf' if not np.isfinite(hi) else int(hi)})"


def ks_zero_familiarity(ledger: ResidualLedger, bins=DEFAULT_COUNT_BINS, min_size=1):
    """Compare residuals from zero-familiarity matches with all residuals.

    Residual entries are binned by their player's total match count; each bin
    tests the zero-familiarity entries against every entry in the bin.
    """
    e = ledger.entries
    n = e.groupby("player")["residual"].transform("size").to_numpy()
    zero = e["zero_fam"].astype(bool).to_numpy()
    r = e["residual"].to_numpy(float)
    rows = []
    for lo, hi in zip(bins[:-1], bins[1:]):
        sel = (n >= lo) & (n < hi)
        a, b = r[sel & zero], r[sel]
        if len(a) < min_size or len(b) < min_size:
            continue
        d, p = ks_2samp(a, b)
        rows.append((_bin_label(lo, hi), len(a), len(b), d, p))
    return pd.DataFrame(rows, columns=["bin", "n_zero_fam", "n_all", "statistic", "p_value"])


def position_residual_correlation(ledger: ResidualLedger, bins=DEFAULT_COUNT_BINS):
    """Pearson correlation of players' pocket-mean and flank-mean residuals per n-bin."""
    e = ledger.entries
    e = e[e["position"].isin(["pocket", "flank"])]
    per = e.pivot_table(index="player", columns="position", values="residual", aggfunc="mean")
    if not {"pocket", "flank"} <= set(per.columns):
        return pd.DataFrame(columns=["bin", "n_players", "correlation"])
    n = ledger.counts().reindex(per.index)
    per = per.dropna()
    n = n.reindex(per.index)
    rows = []
    for lo, hi in zip(bins[:-1], bins[1:]):
        sel = (n >= lo) & (n < hi)
        if sel.sum() < 3:
            continue
        x, y = per.loc[sel, "pocket"].to_numpy(), per.loc[sel, "flank"].to_numpy()
        if x.std() == 0 or y.std() == 0:
            r = 1.0 if np.array_equal(x, y) else np.nan
        else:
            r = float(np.corrcoef(x, y)[0, 1])
        rows.append((_bin_label(lo, hi), int(sel.sum()), r))
    return pd.DataFrame(rows, columns=["bin", "n_players", "correlation"])


def elo_bin_masks(selo: pd.Series):
    return list(zip(ELO_BINS, (
        selo < 1000,
        (selo >= 1000) & (selo <= 1500),
        (selo > 1500) & (selo <= 2000),
        selo > 2000,
    )))


def _team_rows(table: pd.DataFrame) -> pd.DataFrame:
    """Both teams of every match as separate rows (features + win)."""
    parts = []
    for side, other, won in (("focal", "opp", table["y"]), ("opp", "focal", 1 - table["y"])):
        d = {f: table[f"{f}_{side}"].to_numpy(float) for f in FEATURES}
        d["win"] = won.to_numpy(float)
        d["d_eapm"] = (table[f"eapm_{side}"] - table[f"eapm_{other}"]).to_numpy(float)
        d["team"] = table["cluster" if side == "focal" else "opp_cluster"].to_numpy()
        parts.append(pd.DataFrame(d))
    return pd.concat(parts, ignore_index=True)


def vif(frame: pd.DataFrame) -> pd.Series:
    """Variance inflation factors as the diagonal of the inverse correlation matrix."""
    corr = np.corrcoef(frame.to_numpy(float), rowvar=False)
    return pd.Series(np.diag(np.linalg.inv(corr)), index=frame.columns)


def descriptive_stats(table: pd.DataFrame) -> pd.DataFrame:
    """Correlation table, Elo-bin eAPM table, VIF and appearance quantiles (long format)."""
    teams = _team_rows(table)
    cols = list(FEATURES) + ["win"]
    rows = []
    for i, a in enumerate(cols):
        for b in cols:
            x, y = teams[a].to_numpy(), teams[b].to_numpy()
            if x.std() == 0 or y.std() == 0:
                rows.append(("correlation", a, b, np.nan, np.nan))
                continue
            if a == b:
                rows.append(("correlation", a, b, 1.0, 0.0))
                continue
            r, p = stats.pearsonr(x, y)
            rows.append(("correlation", a, b, float(r), float(p)))
    for label, sel in elo_bin_masks(teams["selo"]):
        sub = teams[sel]
        rows.append(("elo_bin", label, "mean_team_eapm",
                     float(sub["eapm"].mean()) if len(sub) else np.nan, np.nan))
        if len(sub) > 2 and sub["d_eapm"].std() > 0 and sub["win"].std() > 0:
            r, p = stats.pearsonr(sub["d_eapm"], sub["win"])
        else:
            r, p = np.nan, np.nan
        rows.append(("elo_bin", label, "corr_delta_eapm_win", float(r), float(p)))
        rows.append(("elo_bin", label, "n_teams", float(len(sub)), np.nan))
    usable = [f for f in FEATURES if teams[f].std() > 0]
    for f, v in vif(teams[usable]).items():
        rows.append(("vif", f, "vif", float(v), np.nan))
    team_counts = teams["team"].value_counts()
    players = pd.concat([table["focal_players"], table["opp_players"]]).str.split("|").explode()
    player_counts = players.value_counts()
    for q in (50, 75, 95, 99):
        rows.append(("appearances", "team", f"p{q}", float(np.percentile(team_counts, q)), np.nan))
        rows.append(("appearances", "player", f"p{q}",
                     float(np.percentile(player_counts, q)), np.nan))
    return pd.DataFrame(rows, columns=["table", "row", "column", "value", "p_value"])


def residual_bandwidth(ledgers: dict, window=500, coverage=95.0) -> pd.DataFrame:
    """Rolling 95th percentile of |effect| and 95% band width over player match count."""
    lo_q, hi_q = (100 - coverage) / 200, 1 - (100 - coverage) / 200
    parts = []
    for name, ledger in ledgers.items():
        df = pd.DataFrame({"tp": ledger.effects(), "n": ledger.counts()})
        df = df.sort_values(["n", "tp"], kind="mergesort").reset_index(drop=True)
        if len(df) < window:
            warnings.warn(f"{name}: only {len(df)} players; using one whole-sample window",
                          RuntimeWarning)
            out = pd.DataFrame({
                "n": [float(df["n"].median())],
                "p95_abs": [float(df["tp"].abs().quantile(0.95))],
                "band_width": [float(df["tp"].quantile(hi_q) - df["tp"].quantile(lo_q))],
            })
        else:
            roll = df["tp"].rolling(window)
            out = pd.DataFrame({
                "n": df["n"].rolling(window).median(),
                "p95_abs": df["tp"].abs().rolling(window).quantile(0.95),
                "band_width": roll.quantile(hi_q) - roll.quantile(lo_q),
            }).dropna().reset_index(drop=True)
        out.insert(0, "model", name)
        parts.append(out)
    return pd.concat(parts, ignore_index=True)


def suite_ledgers(suite: SuiteResult, t1_table, focal_only=False) -> dict:
    return {name: compute_residuals(m, t1_table, focal_only) for name, m in suite.models.items()}


def stars_consistent(table: pd.DataFrame) -> bool:
    """True when every star string matches its p-value."""
    ok = table["p"].isna() | (table["stars"].fillna("") == table["p"].map(significance_stars))
    return bool(ok.all())
