"""Append-only run-record store.

One JSON line per record with a per-record integrity digest, so partial
or torn writes are detectable and concurrent whole-record appends are
safe. Readers get a prefix-consistent view; a corrupt tail is reported,
never silently aggregated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from mitobench.errors import IntegrityError
from mitobench.metrics import EvalResult

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunRecord:
    """One evaluation outcome of one training session."""

    run_id: str
    session_id: str
    model: str
    mode: str
    dataset: str
    plan_kind: str
    fold_index: int
    seed: int
    result: EvalResult
    fraction: float | None = None
    train_domain: str | None = None
    test_domain: str | None = None
    in_domain: bool | None = None
    wall_time: float = 0.0
    config_digest: str = ""

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "session_id": self.session_id,
            "model": self.model,
            "mode": self.mode,
            "dataset": self.dataset,
            "plan_kind": self.plan_kind,
            "fold_index": self.fold_index,
            "seed": self.seed,
            "fraction": self.fraction,
            "train_domain": self.train_domain,
            "test_domain": self.test_domain,
            "in_domain": self.in_domain,
            "wall_time": self.wall_time,
            "config_digest": self.config_digest,
            "result": self.result.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        return cls(
            run_id=obj["run_id"],
            session_id=obj["session_id"],
            model=obj["model"],
            mode=obj["mode"],
            dataset=obj["dataset"],
            plan_kind=obj["plan_kind"],
            fold_index=int(obj["fold_index"]),
            seed=int(obj["seed"]),
            result=EvalResult.from_json(obj["result"]),
            fraction=None if obj.get("fraction") is None else float(obj["fraction"]),
            train_domain=obj.get("train_domain"),
            test_domain=obj.get("test_domain"),
            in_domain=obj.get("in_domain"),
            wall_time=float(obj.get("wall_time", 0.0)),
            config_digest=obj.get("config_digest", ""),
        )


def _record_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class StoreIssue:
    line: int
    reason: str


class ResultsStore:
    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, record: RunRecord) -> None:
        payload = record.to_json()
        line = json.dumps(
            {"schema_version": SCHEMA_VERSION, "record": payload, "digest": _record_digest(payload)},
            sort_keys=True,
        )
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    def _scan(self) -> tuple[list[RunRecord], list[StoreIssue]]:
        records: list[RunRecord] = []
        issues: list[StoreIssue] = []
        if not self.path.exists():
            return records, issues
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    payload = obj["record"]
                    if obj.get("digest") != _record_digest(payload):
                        raise IntegrityError("digest mismatch")
                    records.append(RunRecord.from_json(payload))
                except (json.JSONDecodeError, KeyError, IntegrityError, TypeError, ValueError) as exc:
                    issues.append(StoreIssue(line=lineno, reason=str(exc) or type(exc).__name__))
        return records, issues

    def records(self, strict: bool = False) -> list[RunRecord]:
        records, issues = self._scan()
        if strict and issues:
            raise IntegrityError(
                f"{self.path}: {len(issues)} corrupt record line(s), first at line {issues[0].line}"
            )
        return records

    def issues(self) -> list[StoreIssue]:
        return self._scan()[1]

    def completed_run_ids(self) -> set[str]:
        return {r.run_id for r in self.records()}

    def __len__(self) -> int:
        return len(self.records())
