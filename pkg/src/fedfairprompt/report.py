"""Run reports: per-round records, the report container, and file emission.

The CSV and markdown outputs are byte-deterministic functions of the
report's records so reruns can be compared with ``cmp``. Wall-clock
timestamps therefore live only in the report object and its JSON dump,
never in the CSV or markdown.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import Config, config_hash, config_lines
from .metrics import MetricRecord

__all__ = [
    "RoundRecord",
    "FairnessReport",
    "emit_report",
    "CSV_HEADER",
    "SUMMARY_WINDOW",
]

CSV_HEADER = "round,client,a_b,phi_a,phi_demo,phi_eq,f_global,score,weight"

# headline numbers average the global record over this many final rounds
SUMMARY_WINDOW = 5

_METRIC_COLUMNS = ("a_b", "phi_a", "phi_demo", "phi_eq", "f_global")


@dataclass(frozen=True)
class RoundRecord:
    """One round's evaluations: per-client rows plus the global row.

    Client metrics are measured on the server validation split; the
    global record is measured on the balanced test set. Round 0 is the
    evaluation of the initial prompts and carries no client entries.
    ``f_global_excluded`` lists clients dropped from the cross-client
    recall-parity aggregate for lacking positives in some group.
    """

    round: int
    client_records: list[MetricRecord]
    scores: list[float]
    weights: list[float]
    global_record: MetricRecord
    f_global_excluded: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.client_records)
        if len(self.scores) != n or len(self.weights) != n:
            raise ValueError(
                f"round {self.round}: {n} client records need {n} scores and weights"
            )
        if self.round < 0:
            raise ValueError("round index must be >= 0")
        if self.weights:
            total = sum(self.weights)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"round {self.round}: weights sum to {total!r}, not 1")
            if min(self.weights) < 0.0:
                raise ValueError(f"round {self.round}: negative fusion weight")


@dataclass
class FairnessReport:
    """Complete record of one federation run."""

    config: Config
    backbone_hash: str
    rounds: list[RoundRecord]
    started: str = ""
    finished: str = ""
    incomplete: bool = False
    failure: str = ""

    def __post_init__(self):
        for i, rec in enumerate(self.rounds):
            if rec.round != i:
                raise ValueError(
                    f"rounds must be contiguous from 0; position {i} holds round {rec.round}"
                )

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def final_record(self) -> MetricRecord:
        if not self.rounds:
            raise ValueError("empty report")
        return self.rounds[-1].global_record

    def summary_records(self) -> list[MetricRecord]:
        """Global records inside the trailing summary window.

        The last SUMMARY_WINDOW training rounds; the round-0 snapshot
        (taken before any training) is excluded whenever at least one
        trained round exists.
        """
        if not self.rounds:
            raise ValueError("empty report")
        tail = self.rounds[max(1, len(self.rounds) - SUMMARY_WINDOW):]
        if not tail:
            tail = self.rounds[-1:]
        return [rec.global_record for rec in tail]

    def summary(self) -> dict:
        """Headline metrics: trailing-window means of the global records.

        Averaging the last few rounds damps round-to-round oscillation
        symmetrically; a single final round would make every headline
        number hostage to one optimizer step.
        """
        records = self.summary_records()
        return {
            "method": self.config.method,
            "rounds_completed": len(self.rounds) - 1,
            "incomplete": self.incomplete,
            **{
                name: float(np.mean([getattr(r, name) for r in records]))
                for name in _METRIC_COLUMNS
            },
        }


def _fmt(value: float) -> str:
    return repr(float(value))


def _csv_text(report: FairnessReport) -> str:
    lines = [CSV_HEADER]
    for rec in report.rounds:
        for cid, (metrics, score, weight) in enumerate(
            zip(rec.client_records, rec.scores, rec.weights)
        ):
            cells = [str(rec.round), str(cid)]
            cells += [_fmt(getattr(metrics, name)) for name in _METRIC_COLUMNS]
            cells += [_fmt(score), _fmt(weight)]
            lines.append(",".join(cells))
        cells = [str(rec.round), "global"]
        cells += [_fmt(getattr(rec.global_record, name)) for name in _METRIC_COLUMNS]
        cells += ["", ""]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _markdown_text(report: FairnessReport) -> str:
    summary = report.summary()
    head = [
        "# Federation run summary",
        "",
        f"- method: `{report.config.method}`",
        f"- config hash: `{report.config_hash}`",
        f"- master seed: {report.config.master_seed}",
        f"- backbone hash: `{report.backbone_hash}`",
        f"- rounds completed: {len(report.rounds) - 1}",
        f"- headline window: mean over last {len(report.summary_records())} rounds",
    ]
    if report.incomplete:
        head.append(f"- **incomplete run**: {report.failure}")
    head += [
        "",
        "| method | A_B | Phi_A | Phi_demo | Phi_eq | F_global |",
        "| --- | --- | --- | --- | --- | --- |",
        "| {} | {} | {} | {} | {} | {} |".format(
            report.config.method,
            *(_fmt(summary[name]) for name in _METRIC_COLUMNS),
        ),
        "",
    ]
    return "\n".join(head)


def _json_payload(report: FairnessReport) -> dict:
    return {
        "config_hash": report.config_hash,
        "master_seed": report.config.master_seed,
        "backbone_hash": report.backbone_hash,
        "started": report.started,
        "finished": report.finished,
        "incomplete": report.incomplete,
        "failure": report.failure,
        "summary": report.summary(),
        "rounds": [
            {
                "round": rec.round,
                "clients": [
                    {name: getattr(m, name) for name in _METRIC_COLUMNS}
                    for m in rec.client_records
                ],
                "scores": list(rec.scores),
                "weights": list(rec.weights),
                "global": {
                    name: getattr(rec.global_record, name) for name in _METRIC_COLUMNS
                },
                "f_global_excluded": list(rec.f_global_excluded),
            }
            for rec in report.rounds
        ],
    }


def emit_report(report: FairnessReport, out_dir: str) -> dict[str, str]:
    """Write rounds.csv, summary.md, config.txt and report.json.

    Returns the written paths. Everything except report.json is a pure
    function of the report's records and config.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "csv": os.path.join(out_dir, "rounds.csv"),
        "markdown": os.path.join(out_dir, "summary.md"),
        "config": os.path.join(out_dir, "config.txt"),
        "json": os.path.join(out_dir, "report.json"),
    }
    texts = {
        "csv": _csv_text(report),
        "markdown": _markdown_text(report),
        "config": config_lines(report.config),
        "json": json.dumps(_json_payload(report), indent=2, sort_keys=True) + "\n",
    }
    for key, path in paths.items():
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(texts[key])
    return paths
