"""Synthetic match worlds with Elo ladders, balanced matchmaking and known latent traits.

A world has a solo warm-up phase (building Solo Elo and eAPM history) and a
team phase in which players keep playing some solo matches. Every match
draws its randomness from a Philox stream keyed on (seed, match ordinal).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .data import MatchRecord, PlayerObservation, write_matches

MODES = {"2v2": 2, "3v3": 3, "4v4": 4}
SLOTS = {1: ("none",), 2: ("flank", "pocket"), 3: ("flank", "pocket", "flank"),
         4: ("flank", "pocket", "pocket", "flank")}
BASE_TS = 1_600_000_000


@dataclass
class TraitDist:
    mean: float = 0.0
    sd: float = 1.0


@dataclass
class SyntheticConfig:
    n_players: int = 400
    mechanical: TraitDist = field(default_factory=lambda: TraitDist(40.0, 8.0))
    tactical: TraitDist = field(default_factory=lambda: TraitDist(0.0, 1.0))
    theta: TraitDist = field(default_factory=lambda: TraitDist(0.0, 1.0))
    # weight of standardized mechanical skill inside the skill index
    mechanical_weight: float = 0.3
    # outcome weights: skill, theta, familiarity x theta, familiarity
    a: float = 1.5
    b: float = 2.0
    c: float = 0.0
    d: float = 0.0
    noise: float = 0.0
    premade_prob: float = 0.2
    premade_share: float = 0.5
    solo_warmup: int = 40
    solo_per_team: float = 0.5
    # unlogged team matches per player that settle Team Elo before the log starts
    team_burn_in: int = 0
    team_matches: int = 10_000
    mode_weights: dict = field(default_factory=lambda: {"2v2": 1.0, "3v3": 1.0, "4v4": 1.0})
    maps: list = field(default_factory=lambda: ["arabia", "arena", "black_forest", "nomad",
                                                "islands", "gold_rush"])
    civs: list = field(default_factory=lambda: [f"civ{i:02d}" for i in range(24)])
    civ_pool_size: int = 3
    duration: TraitDist = field(default_factory=lambda: TraitDist(35.0, 8.0))
    action_sd: float = 0.15
    activity_sd: float = 0.0
    k_factor: float = 32.0
    scale: float = 400.0
    base_elo: float = 1000.0
    tolerance: float = 200.0
    queue_size: int = 0
    matchmaking_rating: str = "team"
    seed: int = 0

    def validate(self):
        for name in ("mechanical", "tactical", "theta", "duration"):
            if getattr(self, name).sd < 0:
                raise ValueError(f"{name} sd must be >= 0")
        for name in ("premade_prob", "premade_share"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("a", "b", "c", "d", "noise"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"weight {name} must be finite")
        if self.team_burn_in < 0 or self.solo_warmup < 0:
            raise ValueError("warm-up and burn-in lengths must be >= 0")
        if self.k_factor <= 0 or self.scale <= 0:
            raise ValueError("Elo K and scale must be positive")
        if self.matchmaking_rating not in ("team", "solo"):
            raise ValueError("matchmaking_rating must be 'team' or 'solo'")
        max_size = max((MODES[m] for m, w in self.mode_weights.items() if w > 0), default=1)
        if self.n_players < 2 * max_size:
            raise ValueError(f"need at least {2 * max_size} players, got {self.n_players}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for name in ("mechanical", "tactical", "theta", "duration"):
            if name in d and isinstance(d[name], dict):
                d[name] = TraitDist(**d[name])
        return cls(**d).validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Population:
    ids: list
    mu: np.ndarray
    s: np.ndarray
    theta: np.ndarray
    activity: np.ndarray
    groups: list
    group_of: np.ndarray
    civ_pref: np.ndarray

    def skill(self, cfg):
        sd = cfg.mechanical.sd
        mech = (self.mu - cfg.mechanical.mean) / sd if sd > 0 else np.zeros_like(self.mu)
        return self.s + cfg.mechanical_weight * mech

    def sidecar(self) -> pd.DataFrame:
        return pd.DataFrame({"player_id": self.ids, "mu": self.mu, "s": self.s,
                             "theta": self.theta})


def _rng(seed, *counter):
    c = list(counter) + [0] * (4 - len(counter))
    return np.random.Generator(np.random.Philox(key=seed, counter=c[::-1]))


def generate_players(cfg: SyntheticConfig) -> Population:
    cfg.validate()
    n = cfg.n_players
    rng = _rng(cfg.seed, 0, 0, 1)
    mu = rng.normal(cfg.mechanical.mean, cfg.mechanical.sd, n)
    s = rng.normal(cfg.tactical.mean, cfg.tactical.sd, n)
    theta = rng.normal(cfg.theta.mean, cfg.theta.sd, n)
    activity = np.exp(rng.normal(0.0, cfg.activity_sd, n)) if cfg.activity_sd > 0 \
        else np.ones(n)
    # premade friend groups of two or three players
    order = rng.permutation(n)
    n_grouped = int(round(cfg.premade_share * n))
    groups, group_of = [], np.full(n, -1)
    i = 0
    while i + 1 < n_grouped:
        size = 2 if rng.random() < 0.7 else 3
        members = tuple(sorted(int(v) for v in order[i:min(i + size, n_grouped)]))
        if len(members) >= 2:
            group_of[list(members)] = len(groups)
            groups.append(members)
        i += size
    k = min(cfg.civ_pool_size, len(cfg.civs))
    civ_pref = np.array([rng.choice(len(cfg.civs), k, replace=False) for _ in range(n)]) \
        if k else np.zeros((n, 0), dtype=int)
    ids = [f"p{j:05d}" for j in range(n)]
    return Population(ids, mu, s, theta, activity, groups, group_of, civ_pref)


def expected_score(r_a, r_b, scale=400.0):
    return 1.0 / (1.0 + 10.0 ** (-(r_a - r_b) / scale))


def update_ratings(ratings_a, ratings_b, winner, k=32.0, scale=400.0):
    """Elo update for two sides; team sides use team-mean ratings.

    Every member of a side moves by the same amount, so the update is zero-sum
    for equal team sizes.
    """
    ra = np.asarray(ratings_a, dtype=float)
    rb = np.asarray(ratings_b, dtype=float)
    if k <= 0 or scale <= 0:
        raise ValueError("K and scale must be positive")
    e_a = expected_score(ra.mean(), rb.mean(), scale)
    s_a = 1.0 if winner == "A" else 0.0
    delta = k * (s_a - e_a)
    return ra + delta, rb - delta


class MatchmakingQueue:
    """Waiting units (single players or premade groups) in arrival order."""

    def __init__(self):
        self.units: list[tuple] = []
        self.members: set = set()

    def __len__(self):
        return len(self.members)

    def add(self, unit):
        unit = tuple(u for u in unit if u not in self.members)
        if unit:
            self.units.append(unit)
            self.members.update(unit)

    def remove(self, units):
        drop = set(units)
        self.units = [u for u in self.units if u not in drop]
        for u in drop:
            self.members.difference_update(u)

    def rotate(self):
        if self.units:
            self.units.append(self.units.pop(0))


def matchmake(queue: MatchmakingQueue, team_size, tolerance, ratings, rng=None):
    """Assemble two balanced rosters around the longest-waiting unit.

    Units are gathered nearest-rating-first until ``2 * team_size`` players
    are available; the split into two teams (premade units atomic) minimizing
    the gap in mean rating is chosen. Returns ``(team_a, team_b)`` as lists of
    player indices with positions assigned at random within each team, or
    None (queue untouched) when no split is within ``tolerance``.
    """
    n = team_size
    usable = [u for u in queue.units if len(u) <= n]
    if not usable:
        return None
    anchor = usable[0]
    mean_r = {u: float(np.mean(ratings[list(u)])) for u in usable}
    ref = mean_r[anchor]
    others = sorted(usable[1:], key=lambda u: (abs(mean_r[u] - ref), usable.index(u)))
    chosen, total = [anchor], len(anchor)
    for u in others:
        if total == 2 * n:
            break
        if total + len(u) <= 2 * n:
            chosen.append(u)
            total += len(u)
    if total != 2 * n:
        return None
    best = None
    # unit 0 fixed on side A to skip mirror splits
    for mask in range(0, 1 << (len(chosen) - 1)):
        side_a = [chosen[0]] + [u for i, u in enumerate(chosen[1:]) if mask >> i & 1]
        if sum(len(u) for u in side_a) != n:
            continue
        side_b = [u for u in chosen if u not in side_a]
        a = [p for u in side_a for p in u]
        b = [p for u in side_b for p in u]
        gap = abs(float(ratings[a].mean() - ratings[b].mean()))
        if best is None or gap < best[0] - 1e-12:
            best = (gap, a, b)
    if best is None or best[0] > tolerance:
        return None
    queue.remove(chosen)
    _, a, b = best
    if rng is not None:
        a = [a[i] for i in rng.permutation(len(a))]
        b = [b[i] for i in rng.permutation(len(b))]
    return a, b


def simulate_match(team_a, team_b, skill, theta, tfam_a, tfam_b, cfg, rng):
    """Draw the winner; returns ``(winner, p_a)`` with p_a the true P(A wins)."""
    ta, tb = theta[team_a].mean(), theta[team_b].mean()
    eta = (cfg.a * (skill[team_a].mean() - skill[team_b].mean())
           + cfg.b * (ta - tb)
           + cfg.c * (tfam_a * ta - tfam_b * tb)
           + cfg.d * (tfam_a - tfam_b))
    if cfg.noise > 0:
        eta += rng.normal(0.0, cfg.noise)
    p_a = 1.0 / (1.0 + math.exp(-eta))
    winner = "A" if rng.random() < p_a else "B"
    return winner, p_a


def _tfam(pairs, team):
    n = len(team)
    if n < 2:
        return 0.0
    tot = 0
    for x, y in itertools.combinations(sorted(team), 2):
        tot += pairs[(x, y)]
    return math.log1p(2 * tot / (n * (n - 1)))


@dataclass
class World:
    records: list
    players: pd.DataFrame
    truth: pd.DataFrame


def run_world(cfg: SyntheticConfig) -> World:
    cfg.validate()
    pop = generate_players(cfg)
    n = cfg.n_players
    skill = pop.skill(cfg)
    solo_elo = np.full(n, cfg.base_elo)
    team_elo = np.full(n, cfg.base_elo)
    pairs = Counter()
    cum_act = np.cumsum(pop.activity) / pop.activity.sum()
    modes = [m for m, w in cfg.mode_weights.items() if w > 0]
    mode_p = np.array([cfg.mode_weights[m] for m in modes], dtype=float)
    mode_cum = np.cumsum(mode_p / mode_p.sum())
    records, truth = [], []
    ordinal = 0

    def draw_players(rng, k):
        return np.minimum(np.searchsorted(cum_act, rng.random(k), side="right"), n - 1)

    def observation(j, pos, duration, rng):
        mean = pop.mu[j] * duration
        actions = max(0, int(round(rng.normal(mean, cfg.action_sd * abs(mean)))))
        civs = pop.civ_pref[j]
        if len(civs) and rng.random() < 0.8:
            civ = cfg.civs[int(civs[int(rng.integers(len(civs)))])]
        else:
            civ = cfg.civs[int(rng.integers(len(cfg.civs)))]
        return PlayerObservation(pop.ids[j], float(solo_elo[j]), actions, pos, civ,
                                 float(team_elo[j]))

    def emit(mode, a, b, pos_a, pos_b, winner, p_a, rng):
        nonlocal ordinal
        duration = max(5.0, float(rng.normal(cfg.duration.mean, cfg.duration.sd)))
        duration = round(duration, 2)
        map_name = cfg.maps[int(rng.integers(len(cfg.maps)))]
        rec = MatchRecord(
            match_id=f"m{ordinal:07d}", timestamp=BASE_TS + 60 * ordinal, mode=mode,
            map=map_name,
            team_a=tuple(observation(j, q, duration, rng) for j, q in zip(a, pos_a)),
            team_b=tuple(observation(j, q, duration, rng) for j, q in zip(b, pos_b)),
            winner=winner, duration=duration,
        )
        records.append(rec)
        truth.append((rec.match_id, p_a))
        ordinal += 1

    def solo_match():
        rng = _rng(cfg.seed, 1, ordinal)
        cand = draw_players(rng, 8)
        i = int(cand[0])
        rest = [int(c) for c in cand[1:] if c != i]
        if not rest:
            rest = [(i + 1) % n]
        j = min(rest, key=lambda c: abs(solo_elo[c] - solo_elo[i]))
        a, b = [i], [j]
        eta = cfg.a * (skill[i] - skill[j])
        p_a = 1.0 / (1.0 + math.exp(-eta))
        winner = "A" if rng.random() < p_a else "B"
        emit("solo", a, b, ("none",), ("none",), winner, p_a, rng)
        ra, rb = update_ratings(solo_elo[a], solo_elo[b], winner, cfg.k_factor, cfg.scale)
        solo_elo[a], solo_elo[b] = ra, rb

    queue = MatchmakingQueue()
    rating = team_elo if cfg.matchmaking_rating == "team" else solo_elo

    def team_match(logged=True, burn=0):
        rng = _rng(cfg.seed, 2, ordinal) if logged else _rng(cfg.seed, 3, burn)
        mode = modes[int(np.searchsorted(mode_cum, rng.random(), side="right").clip(
            0, len(modes) - 1))]
        size = MODES[mode]
        result = None
        for attempt in range(64):
            while len(queue) < max(cfg.queue_size, 2 * size) + 2 * size * (attempt // 4):
                j = int(draw_players(rng, 1)[0])
                g = pop.group_of[j]
                if g >= 0 and rng.random() < cfg.premade_prob:
                    queue.add(pop.groups[g])
                else:
                    queue.add((j,))
            result = matchmake(queue, size, cfg.tolerance, rating, rng)
            if result is not None:
                break
            queue.rotate()
        if result is None:
            raise RuntimeError("matchmaking failed to form a match")
        a, b = result
        fa, fb = _tfam(pairs, a), _tfam(pairs, b)
        winner, p_a = simulate_match(np.array(a), np.array(b), skill, pop.theta, fa, fb, cfg,
                                     rng)
        if logged:
            slots = SLOTS[size]
            emit(mode, a, b, slots, slots, winner, p_a, rng)
        ra, rb = update_ratings(team_elo[a], team_elo[b], winner, cfg.k_factor, cfg.scale)
        team_elo[a], team_elo[b] = ra, rb
        if not logged:
            return
        for team in (a, b):
            for x, y in itertools.combinations(sorted(team), 2):
                pairs[(x, y)] += 1

    for _ in range(cfg.solo_warmup * n // 2):
        solo_match()
    # ladder history before the observed window: Team Elo moves, nothing is logged
    per_match = 2 * float(np.dot(mode_p / mode_p.sum(), [MODES[m] for m in modes]))
    for i in range(int(round(cfg.team_burn_in * n / per_match))):
        team_match(logged=False, burn=i)
    queue = MatchmakingQueue()
    carry = 0.0
    for _ in range(cfg.team_matches):
        team_match()
        carry += cfg.solo_per_team
        while carry >= 1.0:
            solo_match()
            carry -= 1.0

    truth_df = pd.DataFrame(truth, columns=["match_id", "true_p"])
    return World(records, pop.sidecar(), truth_df)


def write_world(world: World, out_path, truth_dir):
    with open(out_path, "w") as fh:
        write_matches(world.records, fh, "jsonl")
    os.makedirs(truth_dir, exist_ok=True)
    world.players.to_csv(os.path.join(truth_dir, "players.csv"), index=False,
                         quoting=csv.QUOTE_MINIMAL)
    world.truth.to_csv(os.path.join(truth_dir, "matches.csv"), index=False)
