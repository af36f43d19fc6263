"""Stage runner: split, featurize, fit, tp, analyze, with artifacts on disk.

Every stage reads its inputs from files and writes its outputs to files, so a
later stage can be rerun alone from persisted artifacts. The full pipeline
simply calls the stages in order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field
from importlib import metadata

import numpy as np
import pandas as pd
from filelock import FileLock, Timeout

from . import analysis as an
from .data import parse_matches, split_dataset, write_matches
from .features import FEATURES, DeltaScaler, build_feature_table
from .glm import ClusteredLogisticRegression
from .simgen import SyntheticConfig, run_world, write_world
from .tp import (ResidualLedger, TeamPlayerEffect, TeamPlayerIndex, compute_residuals,
                 null_scaled_effects, parse_grid, sweep_threshold)

log = logging.getLogger(__name__)

REPORT_FILES = ("s1_suite.csv", "s2_suite.csv", "mem.csv", "facets.csv", "ks.csv",
                "positions.csv", "descriptives.csv", "bandwidth.csv", "threshold.csv",
                "band_curve.csv")

ID_COLUMNS = ("match_id", "mode", "map", "focal_side", "cluster", "opp_cluster",
              "focal_players", "opp_players", "focal_pos", "opp_pos")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage


class RunLocked(RuntimeError):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    format: str | None = None
    out_dir: str = "run"
    split_seed: int = 0
    focal_seed: int = 0
    holdout_seed: int = 0
    simulation_seed: int | None = None
    # "auto" (knee), an integer, or "sweep" (argmax of the sweep)
    tau: object = "auto"
    sweep: str | None = None
    bin_size: int = 10
    # ledger holds focal-team residuals only (no negated opponent entries)
    focal_only: bool = False
    eapm_mode: str = "career"
    # "t1" fits on T1 rows, otherwise a path to a persisted scaler
    scaler: str = "t1"
    test_share: float = 0.2
    suites: dict = field(default_factory=lambda: {
        "s1": True, "s2": True, "mem": True, "facets": True, "robustness": True,
        "descriptives": True, "bandwidth": True})
    min_facet_rows: int = 500
    bandwidth_window: int = 500
    null_reps: int = 20
    world: dict | None = None

    def validate(self):
        if not (self.tau in ("auto", "sweep") or _is_int(self.tau)):
            raise ValueError(f"tau must be 'auto', 'sweep' or an integer, got {self.tau!r}")
        if self.tau == "sweep" and self.sweep is None:
            raise ValueError("tau='sweep' needs a sweep grid")
        if self.sweep is not None:
            parse_grid(self.sweep)
        if self.eapm_mode not in ("career", "match"):
            raise ValueError(f"unknown eapm_mode {self.eapm_mode!r}")
        if not 0 < self.test_share < 1:
            raise ValueError("test_share must be in (0, 1)")
        unknown = set(self.suites) - set(RunConfig().suites)
        if unknown:
            raise ValueError(f"unknown suite toggles {sorted(unknown)}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        if "suites" in d:
            d["suites"] = {**RunConfig().suites, **d["suites"]}
        return cls(**d).validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_seed(self, seed):
        """Copy with every seed set to ``seed``."""
        d = self.to_dict()
        for k in ("split_seed", "focal_seed", "holdout_seed", "simulation_seed"):
            d[k] = seed
        return RunConfig.from_dict(d)


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


class Layout:
    """File locations of every artifact under one run directory."""

    def __init__(self, out_dir):
        self.root = str(out_dir)
        self.split = os.path.join(self.root, "split")
        self.features = os.path.join(self.root, "features")
        self.models = os.path.join(self.root, "models")
        self.tp = os.path.join(self.root, "tp")
        self.reports = os.path.join(self.root, "reports")

    def split_file(self, name):
        return os.path.join(self.split, f"{name}.jsonl")

    def features_file(self, name):
        return os.path.join(self.features, f"{name}.csv")

    @property
    def scaler(self):
        return os.path.join(self.features, "scaler.json")

    @property
    def model(self):
        return os.path.join(self.models, "model.json")

    @property
    def tp_index(self):
        return os.path.join(self.tp, "tp.csv")

    @property
    def ledger(self):
        return os.path.join(self.tp, "ledger.csv")

    @property
    def manifest(self):
        return os.path.join(self.reports, "manifest.json")


# -- io helpers -------------------------------------------------------------

def infer_format(path, fmt=None):
    if fmt:
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "jsonl"


def read_matches(path, fmt=None):
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    with open(path, "rb") as fh:
        return parse_matches(fh, infer_format(path, fmt))


def _write_jsonl(records, path):
    with open(path, "w", newline="\n") as fh:
        write_matches(records, fh, "jsonl")


def write_features(table: pd.DataFrame, path):
    table.to_csv(path, index=False, lineterminator="\n")


def read_features(path) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"feature table not found: {path}")
    t = pd.read_csv(path, dtype={c: str for c in ID_COLUMNS}, keep_default_na=False,
                    na_values=[""], float_precision="round_trip")
    if "zero_fam" in t.columns:
        t["zero_fam"] = t["zero_fam"].astype(str).str.lower() == "true"
    return t


def _write_csv(df: pd.DataFrame, path):
    df.to_csv(path, index=False, lineterminator="\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    out = {}
    for pkg in ("artifact", "numpy", "pandas", "scipy", "scikit-learn", "filelock"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# -- stages -----------------------------------------------------------------

def stage_simulate(world: dict, out_dir, seed=None):
    """Generate a synthetic log under ``out_dir/world``; returns its path."""
    d = dict(world)
    if seed is not None:
        d["seed"] = seed
    cfg = SyntheticConfig.from_dict(d)
    wdir = os.path.join(out_dir, "world")
    os.makedirs(wdir, exist_ok=True)
    path = os.path.join(wdir, "matches.jsonl")
    w = run_world(cfg)
    write_world(w, path, os.path.join(wdir, "truth"))
    return {"path": path, "n_matches": len(w.records), "seed": cfg.seed,
            "hash": file_sha256(path)}


def stage_split(input_path, out_dir, seed=0, fmt=None):
    """Write S / T1 / T2 match logs; returns sample hashes per split."""
    lay = Layout(out_dir)
    records = read_matches(input_path, fmt)
    if not records:
        raise ValueError(f"no matches in {input_path}")
    sp = split_dataset(records, seed)
    os.makedirs(lay.split, exist_ok=True)
    out = {}
    for name, recs in (("s", sp.split_s), ("t1", sp.split_t1), ("t2", sp.split_t2)):
        _write_jsonl(recs, lay.split_file(name))
        out[name] = {"n": len(recs), "hash": an.sample_hash(r.match_id for r in recs)}
    log.info("split: S=%d T1=%d T2=%d", out["s"]["n"], out["t1"]["n"], out["t2"]["n"])
    return out


def featurize(split_dir, focal_seed=0, eapm_mode="career"):
    """Feature table over the full log with a ``split`` column (t1 / t2)."""
    records, split_of = [], {}
    for name in ("s", "t1", "t2"):
        recs = read_matches(os.path.join(split_dir, f"{name}.jsonl"), "jsonl")
        records += recs
        for r in recs:
            split_of[r.match_id] = name
    table = build_feature_table(records, seed=focal_seed, eapm_mode=eapm_mode)
    table.insert(1, "split", table["match_id"].map(split_of))
    return table


def add_standardized(table: pd.DataFrame, scaler: DeltaScaler) -> pd.DataFrame:
    z = scaler.transform(table)
    out = table.copy()
    for f in scaler.features_:
        out[f"d_{f}"] = z[f].to_numpy()
    return out


def stage_featurize(out_dir, focal_seed=0, eapm_mode="career", scaler="t1", splits=("t1", "t2"),
                    split_dir=None, out_paths=None, scaler_out=None):
    """Write standardized feature tables and the scaler.

    ``scaler`` is ``"t1"`` (or ``"new"``) to fit on T1 rows, or a path to a
    persisted scaler. ``out_paths`` maps split name to an output file.
    """
    lay = Layout(out_dir)
    table = featurize(split_dir or lay.split, focal_seed, eapm_mode)
    out_paths = out_paths or {name: lay.features_file(name) for name in splits}
    scaler_out = scaler_out or lay.scaler
    if scaler in ("t1", "new"):
        t1 = table[table["split"] == "t1"].reset_index(drop=True)
        if t1.empty:
            raise ValueError("split t1 has no team matches")
        sc = DeltaScaler(FEATURES).fit(t1)
    else:
        if not os.path.exists(scaler):
            raise FileNotFoundError(f"scaler not found: {scaler}")
        sc = DeltaScaler.from_json(scaler)
    if scaler in ("t1", "new") or os.path.abspath(scaler) != os.path.abspath(scaler_out):
        os.makedirs(os.path.dirname(os.path.abspath(scaler_out)), exist_ok=True)
        sc.to_json(scaler_out)
    out = {}
    for name in splits:
        part = table[table["split"] == name].reset_index(drop=True)
        if part.empty:
            raise ValueError(f"split {name} has no team matches")
        part = add_standardized(part, sc)
        path = out_paths[name]
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        write_features(part, path)
        out[name] = {"n": len(part), "hash": an.sample_hash(part["match_id"])}
    out["scaler_dropped"] = list(getattr(sc, "dropped_", []))
    return out


def fit_s1(t1: pd.DataFrame, clusters="cluster"):
    if clusters not in t1.columns:
        raise ValueError(f"cluster column {clusters!r} not in feature table")
    return an.run_suite(t1, an.S1_SUITE, clusters=t1[clusters].to_numpy())


def stage_fit(out_dir, clusters="cluster", features_path=None, model_path=None):
    """Fit the S1 suite on T1 and persist S1.3 as the frozen task-proficiency model."""
    lay = Layout(out_dir)
    t1 = read_features(features_path or lay.features_file("t1"))
    suite = fit_s1(t1, clusters)
    model = suite.models["S1.3"]
    path = model_path or lay.model
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    model.to_json(path)
    return {"sample_hash": suite.sample_hash, "beta_hash": an.params_hash(model),
            "pseudo_r2": {k: float(m.pseudo_r2_) for k, m in suite.models.items()}}


def default_grid(counts: pd.Series, bin_size=10):
    hi = int(np.percentile(counts, 95) // bin_size * bin_size)
    hi = max(hi, 3 * bin_size)
    return list(range(bin_size, hi + 1, bin_size))


def stage_tp(out_dir, tau="auto", sweep=None, holdout_seed=0, test_share=0.2, bin_size=10,
             model_path=None, t1_path=None, t2_path=None, out_path=None, focal_only=False):
    """Residual ledger on T1, inclusion threshold, TP index and threshold sweep."""
    lay = Layout(out_dir)
    model = ClusteredLogisticRegression.from_json(model_path or lay.model)
    t1 = read_features(t1_path or lay.features_file("t1"))
    ledger = compute_residuals(model, t1, focal_only)
    os.makedirs(lay.tp, exist_ok=True)
    ledger.to_csv(lay.ledger)

    t2_file = t2_path or lay.features_file("t2")
    grid = parse_grid(sweep) if sweep else None
    sweep_res = None
    if os.path.exists(t2_file):
        t2 = read_features(t2_file)
        train = an.holdout_mask(t2["match_id"], holdout_seed, test_share)
        if grid is None:
            grid = default_grid(ledger.counts(), bin_size)
        sweep_res = sweep_threshold(ledger, t2[train], grid, t2[~train])
        _write_csv(sweep_res.table, os.path.join(lay.tp, "sweep.csv"))
    elif tau == "sweep":
        raise FileNotFoundError(f"tau='sweep' needs T2 features: {t2_file}")

    if tau == "sweep":
        est = TeamPlayerEffect(tau=sweep_res.selected, bin_size=bin_size).fit(ledger)
    else:
        est = TeamPlayerEffect(tau=tau, bin_size=bin_size).fit(ledger)
    _write_csv(est.band_curve_, os.path.join(lay.tp, "band_curve.csv"))
    _write_csv(est.index_.to_frame(), out_path or lay.tp_index)
    return {"tau": int(est.tau_), "n_qualified": int(est.index_.qualified().sum()),
            "n_players": int(len(est.index_.effects)),
            "sweep_selected": None if sweep_res is None else int(sweep_res.selected)}


def _ks_reports(ledger, index, null_reps, seed):
    zf = an.ks_zero_familiarity(ledger)
    zf.insert(0, "test", "zero_familiarity")
    zf = zf.rename(columns={"n_zero_fam": "n_a", "n_all": "n_b"})
    q = index.qualified()
    eff, cnt = index.effects[q], index.counts[q]
    rows = [zf] if len(zf) else []
    if len(eff):
        obs = (eff * np.sqrt(cnt)).to_numpy()
        null = null_scaled_effects(ledger, null_reps, seed, index.tau)
        d, p = an.ks_2samp(obs, null)
        rows.append(pd.DataFrame([("tp_null", f"[{index.tau},inf)", len(obs), len(null), d, p)],
                                 columns=zf.columns))
    return pd.concat(rows, ignore_index=True) if rows else zf


def stage_analyze(out_dir, cfg: RunConfig | None = None, t1_path=None, t2_path=None,
                  tp_path=None, model_path=None, ledger_path=None, reports_dir=None):
    """Write every report table; returns hashes for the manifest."""
    cfg = cfg or RunConfig()
    lay = Layout(out_dir)
    rep = reports_dir or lay.reports
    os.makedirs(rep, exist_ok=True)
    on = cfg.suites
    model = ClusteredLogisticRegression.from_json(model_path or lay.model)
    t2 = read_features(t2_path or lay.features_file("t2"))
    tp_file = tp_path or lay.tp_index
    if not os.path.exists(tp_file):
        raise FileNotFoundError(f"TP index not found: {tp_file}")
    index = TeamPlayerIndex.from_frame(pd.read_csv(tp_file, dtype={"player_id": str},
                                                   float_precision="round_trip"))
    t1_file = t1_path or lay.features_file("t1")
    t1 = read_features(t1_file) if os.path.exists(t1_file) else None
    info = {"beta_hash": an.params_hash(model)}

    if t1 is not None and (on["s1"] or on["bandwidth"]):
        s1 = fit_s1(t1)
        if an.params_hash(s1.models["S1.3"]) != info["beta_hash"]:
            warnings.warn("S1.3 refit on T1 differs from the persisted model", RuntimeWarning)
        info["s1_sample_hash"] = s1.sample_hash
        if on["s1"]:
            _write_csv(s1.table(), os.path.join(rep, "s1_suite.csv"))
        if on["bandwidth"]:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                bw = an.residual_bandwidth(an.suite_ledgers(s1, t1, cfg.focal_only),
                                           cfg.bandwidth_window)
            _write_csv(bw, os.path.join(rep, "bandwidth.csv"))

    frame = an.s2_frame(t2, index.lookup(), model, cfg.holdout_seed, cfg.test_share)
    info["s2_sample_hash"] = an.sample_hash(frame.loc[frame["train"], "match_id"])
    if on["s2"]:
        s2 = an.run_s2_suite(frame)
        table = s2.table()
        chain = s2.accuracy_chain().set_index("model")["delta"]
        table["delta_accuracy"] = [chain.get(m, np.nan) if t == "accuracy" else np.nan
                                   for m, t in zip(table["model"], table["term"])]
        _write_csv(table, os.path.join(rep, "s2_suite.csv"))
    if on["mem"]:
        _, mem = an.interaction_mem(frame)
        _write_csv(mem, os.path.join(rep, "mem.csv"))
    if on["facets"]:
        parts = []
        for facet in ("familiarity", "team_size"):
            try:
                parts.append(an.facet_regressions(frame, facet, cfg.min_facet_rows))
            except ValueError as exc:
                warnings.warn(f"facet {facet} skipped: {exc}", RuntimeWarning)
        if parts:
            _write_csv(pd.concat(parts, ignore_index=True), os.path.join(rep, "facets.csv"))
    if on["robustness"]:
        lpath = ledger_path or lay.ledger
        if t1 is not None or os.path.exists(lpath):
            ledger = ResidualLedger.from_csv(lpath) if os.path.exists(lpath) \
                else compute_residuals(model, t1, cfg.focal_only)
            _write_csv(_ks_reports(ledger, index, cfg.null_reps, cfg.holdout_seed),
                       os.path.join(rep, "ks.csv"))
            _write_csv(an.position_residual_correlation(ledger),
                       os.path.join(rep, "positions.csv"))
    if on["descriptives"]:
        full = pd.concat([t for t in (t1, t2) if t is not None], ignore_index=True)
        _write_csv(an.descriptive_stats(full), os.path.join(rep, "descriptives.csv"))
    for name in ("sweep.csv", "band_curve.csv"):
        src = os.path.join(lay.tp, name)
        if os.path.exists(src):
            dst = os.path.join(rep, "threshold.csv" if name == "sweep.csv" else name)
            with open(src, "rb") as a, open(dst, "wb") as b:
                b.write(a.read())
    return info


# -- manifest and driver ----------------------------------------------------

def write_manifest(path, manifest):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    raise TypeError(f"not serializable: {type(v).__name__}")


def read_manifest(report_dir):
    path = os.path.join(report_dir, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest in {report_dir}")
    try:
        with open(path) as fh:
            m = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt manifest {path}: {exc.msg}") from None
    if not isinstance(m, dict) or "status" not in m:
        raise ValueError(f"corrupt manifest {path}: missing status")
    return m


def lock_for(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return FileLock(os.path.join(out_dir, ".teamlens.lock"))


def run_pipeline(cfg: RunConfig, out_dir=None):
    """Run all stages in order; the manifest records every completed stage.

    On failure the partial manifest (status ``failed`` plus the failing
    stage) is written before :class:`StageError` is raised.
    """
    cfg.validate()
    out_dir = out_dir or cfg.out_dir
    if cfg.input is None and cfg.world is None:
        raise ValueError("config has neither an input path nor a world to simulate")
    if cfg.input is not None and not os.path.exists(cfg.input):
        raise FileNotFoundError(f"input not found: {cfg.input}")
    lay = Layout(out_dir)
    lock = lock_for(out_dir)
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RunLocked(f"another run holds the lock on {out_dir}") from None
    manifest = {
        "status": "running",
        "config": cfg.to_dict(),
        "seeds": {k: getattr(cfg, k) for k in ("split_seed", "focal_seed", "holdout_seed",
                                               "simulation_seed")},
        "versions": versions(),
        "stages": {},
    }
    source = {"path": cfg.input}
    stages = []
    if cfg.input is None:
        def simulate():
            res = stage_simulate(cfg.world, out_dir, cfg.simulation_seed)
            source["path"] = res["path"]
            return res
        stages.append(("simulate", simulate))
    stages += [
        ("split", lambda: stage_split(source["path"], out_dir, cfg.split_seed, cfg.format)),
        ("featurize", lambda: stage_featurize(out_dir, cfg.focal_seed, cfg.eapm_mode,
                                              cfg.scaler)),
        ("fit", lambda: stage_fit(out_dir)),
        ("tp", lambda: stage_tp(out_dir, cfg.tau, cfg.sweep, cfg.holdout_seed,
                                cfg.test_share, cfg.bin_size, focal_only=cfg.focal_only)),
        ("analyze", lambda: stage_analyze(out_dir, cfg)),
    ]
    try:
        for name, fn in stages:
            log.info("stage %s", name)
            try:
                manifest["stages"][name] = fn()
            except Exception as exc:
                manifest["status"] = "failed"
                manifest["failed_stage"] = name
                manifest["error"] = f"{type(exc).__name__}: {exc}"
                write_manifest(lay.manifest, manifest)
                raise StageError(name, exc) from exc
        manifest["status"] = "complete"
        manifest["sample_hashes"] = {
            "S": manifest["stages"]["split"]["s"]["hash"],
            "T1": manifest["stages"]["split"]["t1"]["hash"],
            "T2": manifest["stages"]["split"]["t2"]["hash"],
            "S1_suite": manifest["stages"]["fit"]["sample_hash"],
            "S2_suite": manifest["stages"]["analyze"]["s2_sample_hash"],
        }
        manifest["beta_hash"] = manifest["stages"]["fit"]["beta_hash"]
        manifest["reports"] = {f: file_sha256(os.path.join(lay.reports, f))
                               for f in REPORT_FILES
                               if os.path.exists(os.path.join(lay.reports, f))}
        write_manifest(lay.manifest, manifest)
    finally:
        lock.release()
    return manifest


# -- report rendering --------------------------------------------------------

def _fmt(v, digits=4):
    if pd.isna(v):
        return ""
    return f"{v:.{digits}f}"


def _stars(v):
    return v if isinstance(v, str) else ""


def render_suite(table: pd.DataFrame, title) -> str:
    lines = [title]
    for name, g in table.groupby("model", sort=False):
        lines.append(f"  {name}")
        for _, r in g.iterrows():
            if r["term"] in ("pseudo_r2", "n_obs", "accuracy"):
                continue
            lines.append(f"    {r['term']:<14}{_fmt(r['coef']):>10}{_stars(r['stars']):<4}"
                         f" ({_fmt(r['se'])})")
        stats = g.set_index("term")["coef"]
        extra = f"    pseudo R2 {_fmt(stats.get('pseudo_r2'))}  n {int(stats.get('n_obs', 0))}"
        if "accuracy" in stats.index:
            extra += f"  accuracy {_fmt(stats['accuracy'])}"
            if "delta_accuracy" in g.columns:
                d = g.loc[g["term"] == "accuracy", "delta_accuracy"].iloc[0]
                extra += f" ({float(d):+.4f} vs previous)"
        lines.append(extra)
    return "\n".join(lines)


def render_report(report_dir) -> str:
    m = read_manifest(report_dir)
    out = [f"run status: {m['status']}"]
    if m["status"] != "complete":
        out.append(f"failed stage: {m.get('failed_stage')} ({m.get('error')})")
    tp = m.get("stages", {}).get("tp")
    if tp:
        out.append(f"inclusion threshold tau = {tp['tau']} "
                   f"({tp['n_qualified']} of {tp['n_players']} players qualify)")
    out.append("significance: * p<0.05, ** p<0.01, *** p<0.001; clustered SEs in parentheses")
    for fname, title in (("s1_suite.csv", "S1 suite (T1)"), ("s2_suite.csv", "S2 suite (T2 train)")):
        path = os.path.join(report_dir, fname)
        if os.path.exists(path):
            t = pd.read_csv(path, keep_default_na=False, na_values=[""])
            out.append(render_suite(t, title))
    path = os.path.join(report_dir, "mem.csv")
    if os.path.exists(path):
        mem = pd.read_csv(path, keep_default_na=False, na_values=[""])
        out.append("Marginal effects at the mean")
        for _, r in mem.iterrows():
            out.append(f"  {r['term']:<20}{_fmt(r['mem']):>10}{_stars(r['stars']):<4}"
                       f" ({_fmt(r['se'])})")
    return "\n".join(out) + "\n"
