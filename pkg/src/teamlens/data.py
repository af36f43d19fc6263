"""Match records, log ingestion (JSONL / CSV), chronological ordering and splits."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

TEAM_SIZES = {"solo": 1, "2v2": 2, "3v3": 3, "4v4": 4}
POSITIONS = ("flank", "pocket", "none")

# fixed column order of the per-observation CSV variant
CSV_COLUMNS = (
    "match_id", "ts", "mode", "map", "duration_min", "winner",
    "team", "pid", "selo", "telo", "actions", "pos", "civ",
)


class SchemaError(ValueError):
    """A match log row violates the ingestion schema."""

    def __init__(self, message, row=None, field=None):
        self.row = row
        self.field = field
        where = []
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class PlayerObservation:
    player: str
    solo_elo: float
    effective_actions: int
    position: str = "none"
    civilization: str = ""
    team_elo: float | None = None


@dataclass(frozen=True)
class MatchRecord:
    match_id: str
    timestamp: int
    mode: str
    map: str
    team_a: tuple[PlayerObservation, ...]
    team_b: tuple[PlayerObservation, ...]
    winner: str
    duration: float

    @property
    def team_size(self) -> int:
        return TEAM_SIZES[self.mode]

    @property
    def is_solo(self) -> bool:
        return self.mode == "solo"

    def players(self):
        return [o.player for o in self.team_a + self.team_b]


@dataclass
class DatasetSplits:
    split_s: list[MatchRecord]
    split_t1: list[MatchRecord]
    split_t2: list[MatchRecord]
    seed: int
    t1_ids: frozenset = field(default_factory=frozenset, repr=False)


def validate_record(rec: MatchRecord, row=None) -> MatchRecord:
    if rec.mode not in TEAM_SIZES:
        raise SchemaError(f"unknown mode {rec.mode!r}", row, "mode")
    if rec.winner not in ("A", "B"):
        raise SchemaError(f"winner must be 'A' or 'B', got {rec.winner!r}", row, "winner")
    if not (rec.duration > 0) or not math.isfinite(rec.duration):
        raise SchemaError("nonpositive duration", row, "duration_min")
    size = TEAM_SIZES[rec.mode]
    if len(rec.team_a) != size or len(rec.team_b) != size:
        raise SchemaError(
            f"roster size mismatch for mode {rec.mode}: "
            f"{len(rec.team_a)} vs {len(rec.team_b)} (expected {size})",
            row, "team_a" if len(rec.team_a) != size else "team_b",
        )
    pids = rec.players()
    if len(set(pids)) != len(pids):
        raise SchemaError("player appears twice in one match", row, "pid")
    for obs in rec.team_a + rec.team_b:
        if obs.effective_actions < 0:
            raise SchemaError("negative effective actions", row, "actions")
        if not math.isfinite(obs.solo_elo):
            raise SchemaError("non-finite solo elo", row, "selo")
        if obs.position not in POSITIONS:
            raise SchemaError(f"unknown position {obs.position!r}", row, "pos")
    return rec


def _get(obj, key, row, conv):
    if key not in obj:
        raise SchemaError("missing field", row, key)
    try:
        return conv(obj[key])
    except (TypeError, ValueError):
        raise SchemaError(f"cannot decode value {obj[key]!r}", row, key) from None


def _opt_float(v):
    if v is None or v == "":
        return None
    return float(v)


def _observation(obj, row) -> PlayerObservation:
    if not isinstance(obj, dict):
        raise SchemaError("player entry must be an object", row, "team")
    actions = _get(obj, "actions", row, float)
    if actions != int(actions):
        raise SchemaError("actions must be an integer count", row, "actions")
    return PlayerObservation(
        player=_get(obj, "pid", row, str),
        solo_elo=_get(obj, "selo", row, float),
        team_elo=_opt_float(obj.get("telo")),
        effective_actions=int(actions),
        position=_get(obj, "pos", row, str) if "pos" in obj else "none",
        civilization=str(obj.get("civ", "")),
    )


def record_from_dict(obj: dict, row=None) -> MatchRecord:
    if not isinstance(obj, dict):
        raise SchemaError("line is not a JSON object", row)
    for side in ("team_a", "team_b"):
        if not isinstance(obj.get(side), list):
            raise SchemaError("roster must be a list", row, side)
    rec = MatchRecord(
        match_id=_get(obj, "match_id", row, str),
        timestamp=_get(obj, "ts", row, int),
        mode=_get(obj, "mode", row, str),
        map=_get(obj, "map", row, str),
        team_a=tuple(_observation(o, row) for o in obj["team_a"]),
        team_b=tuple(_observation(o, row) for o in obj["team_b"]),
        winner=_get(obj, "winner", row, str),
        duration=_get(obj, "duration_min", row, float),
    )
    return validate_record(rec, row)


def record_to_dict(rec: MatchRecord) -> dict:
    def obs(o):
        return {"pid": o.player, "selo": o.solo_elo, "telo": o.team_elo,
                "actions": o.effective_actions, "pos": o.position, "civ": o.civilization}

    return {
        "match_id": rec.match_id, "ts": rec.timestamp, "mode": rec.mode, "map": rec.map,
        "duration_min": rec.duration, "winner": rec.winner,
        "team_a": [obs(o) for o in rec.team_a], "team_b": [obs(o) for o in rec.team_b],
    }


def _text(source) -> IO[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    if hasattr(source, "read"):
        # binary stream
        return io.TextIOWrapper(source, encoding="utf-8")
    raise TypeError("source must be bytes or a readable stream")


def parse_matches(source, format: str = "jsonl") -> list[MatchRecord]:
    """Parse a match log into validated records, preserving input order.

    ``source`` may be bytes, a text stream or a binary stream. Errors are
    raised as :class:`SchemaError` carrying the 1-based row number.
    """
    stream = _text(source)
    if format == "jsonl":
        return _parse_jsonl(stream)
    if format == "csv":
        return _parse_csv(stream)
    raise ValueError(f"unknown format {format!r}")


def _parse_jsonl(stream) -> list[MatchRecord]:
    out = []
    for i, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON ({exc.msg})", i) from None
        out.append(record_from_dict(obj, i))
    return out


def _parse_csv(stream) -> list[MatchRecord]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return []
    missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise SchemaError(f"missing columns {missing}", 1)
    groups: dict[str, dict] = {}
    first_row: dict[str, int] = {}
    for i, row in enumerate(reader, start=2):
        mid = row["match_id"]
        g = groups.get(mid)
        if g is None:
            g = {k: row[k] for k in ("match_id", "ts", "mode", "map", "duration_min", "winner")}
            g["team_a"], g["team_b"] = [], []
            groups[mid] = g
            first_row[mid] = i
        else:
            for k in ("ts", "mode", "map", "duration_min", "winner"):
                if row[k] != g[k]:
                    raise SchemaError("match-level column differs within match", i, k)
        side = row["team"]
        if side not in ("A", "B"):
            raise SchemaError(f"team must be 'A' or 'B', got {side!r}", i, "team")
        g["team_a" if side == "A" else "team_b"].append(
            {"pid": row["pid"], "selo": row["selo"], "telo": row["telo"],
             "actions": row["actions"], "pos": row["pos"] or "none", "civ": row["civ"]}
        )
    return [record_from_dict(g, first_row[mid]) for mid, g in groups.items()]


def write_matches(records: Iterable[MatchRecord], stream: IO[str], format: str = "jsonl") -> None:
    if format == "jsonl":
        for rec in records:
            stream.write(json.dumps(record_to_dict(rec), separators=(",", ":")))
            stream.write("\n")
    elif format == "csv":
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            for side, team in (("A", rec.team_a), ("B", rec.team_b)):
                for o in team:
                    writer.writerow([
                        rec.match_id, rec.timestamp, rec.mode, rec.map, repr(rec.duration),
                        rec.winner, side, o.player, repr(o.solo_elo),
                        "" if o.team_elo is None else repr(o.team_elo),
                        o.effective_actions, o.position, o.civilization,
                    ])
    else:
        raise ValueError(f"unknown format {format!r}")


def order_chronologically(records: Sequence[MatchRecord]) -> list[MatchRecord]:
    return sorted(records, key=lambda r: (r.timestamp, r.match_id))


def uniform_hash(seed: int, token: str) -> float:
    """Seeded uniform draw in [0, 1) keyed on a token; independent of input order."""
    h = hashlib.blake2b(f"{seed}:{token}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0**64


def split_dataset(records: Sequence[MatchRecord], seed: int) -> DatasetSplits:
    """Solo matches go to S; team matches are split 50:50 into T1 / T2.

    The team partition ranks matches by a seeded hash of their id, so the
    assignment of a match does not depend on the rest of the input.
    """
    solo = [r for r in records if r.is_solo]
    team = [r for r in records if not r.is_solo]
    ranked = sorted(team, key=lambda r: (uniform_hash(seed, r.match_id), r.match_id))
    t1_ids = frozenset(r.match_id for r in ranked[: (len(ranked) + 1) // 2])
    return DatasetSplits(
        split_s=solo,
        split_t1=[r for r in team if r.match_id in t1_ids],
        split_t2=[r for r in team if r.match_id not in t1_ids],
        seed=seed,
        t1_ids=t1_ids,
    )
