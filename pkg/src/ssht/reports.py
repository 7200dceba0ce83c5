"""Run-report persistence: a key-value document plus a CSV sidecar.

The document (version "ssht-report/1") round-trips every RunReport
field losslessly; floats are written with repr() so write -> read ->
write is byte identical. The sidecar at <path>.csv holds the per-epoch
curves with exactly the columns

    epoch,l_c,l_u,l_d,total,mask_rate,test_acc,diversity_ratio

for external plotting tools.
"""

import csv
import io
from typing import Dict, List

from .fileio import atomic_write_text, read_text
from .pipeline import AdaptConfig, EpochRecord, RunReport

REPORT_FORMAT = "ssht-report/1"

CSV_COLUMNS = ("epoch", "l_c", "l_u", "l_d", "total", "mask_rate",
               "test_acc", "diversity_ratio")

_EPOCH_FIELDS = ("l_c", "l_u", "l_d", "total", "mask_rate", "labeled_acc",
                 "test_acc", "diversity_ratio")


class ReportFormatError(ValueError):
    """Raised when a report document fails to parse."""


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_report(report: RunReport) -> str:
    cfg = report.config
    lines = [REPORT_FORMAT]
    for name in ("method", "tau", "lambda_u", "lambda_d", "lr", "momentum",
                 "nesterov", "weight_decay", "labeled_batch", "unlabeled_batch",
                 "epochs", "seed", "freeze_classifier", "labeled_aug"):
        lines.append(f"config.{name} = {_fmt(getattr(cfg, name))}")
    lines.append(f"fingerprint = {report.model_fingerprint}")
    lines.append(f"passes.unlabeled_weak = {report.unlabeled_weak_passes}")
    lines.append(f"passes.unlabeled_strong = {report.unlabeled_strong_passes}")
    lines.append(f"aborted_epoch = {_fmt(report.aborted_epoch) if report.aborted_epoch is not None else 'none'}")
    for rec in report.records:
        vals = " ".join(repr(float(getattr(rec, f))) for f in _EPOCH_FIELDS)
        lines.append(f"epoch.{rec.epoch} = {vals}")
    lines.append(f"final.accuracy = {repr(float(report.final_accuracy))}")
    lines.append("final.per_class = " +
                 " ".join(repr(float(v)) for v in report.per_class_accuracy))
    lines.append("final.confusion = " +
                 " ".join(str(int(v)) for row in report.confusion for v in row))
    return "\n".join(lines) + "\n"


def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in report.records:
        writer.writerow([rec.epoch, repr(rec.l_c), repr(rec.l_u),
                         repr(rec.l_d), repr(rec.total), repr(rec.mask_rate),
                         repr(rec.test_acc), repr(rec.diversity_ratio)])
    return buf.getvalue()


def write_report(report: RunReport, path: str) -> None:
    atomic_write_text(path, serialize_report(report))
    atomic_write_text(path + ".csv", report_csv(report))


def deserialize_report(text: str) -> RunReport:
    lines = text.splitlines()
    if not lines or lines[0].strip() != REPORT_FORMAT:
        head = lines[0].strip() if lines else ""
        raise ReportFormatError(f"expected header {REPORT_FORMAT!r}, got {head!r}")
    kv: Dict[str, str] = {}
    epoch_lines: List[str] = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        if " = " not in ln:
            raise ReportFormatError(f"malformed line: {ln[:60]!r}")
        key, val = ln.split(" = ", 1)
        kv[key.strip()] = val
        if key.startswith("epoch."):
            epoch_lines.append(key.strip())

    def need(key: str) -> str:
        if key not in kv:
            raise ReportFormatError(f"missing field {key}")
        return kv[key]

    def as_bool(s: str) -> bool:
        if s not in ("true", "false"):
            raise ReportFormatError(f"bad boolean {s!r}")
        return s == "true"

    try:
        cfg = AdaptConfig(
            method=need("config.method"),
            tau=float(need("config.tau")),
            lambda_u=float(need("config.lambda_u")),
            lambda_d=float(need("config.lambda_d")),
            lr=float(need("config.lr")),
            momentum=float(need("config.momentum")),
            nesterov=as_bool(need("config.nesterov")),
            weight_decay=float(need("config.weight_decay")),
            labeled_batch=(None if need("config.labeled_batch") == "None"
                           else int(need("config.labeled_batch"))),
            unlabeled_batch=int(need("config.unlabeled_batch")),
            epochs=int(need("config.epochs")),
            seed=int(need("config.seed")),
            freeze_classifier=as_bool(need("config.freeze_classifier")),
            labeled_aug=need("config.labeled_aug"))
        cfg.validate()

        records = []
        for key in sorted(epoch_lines, key=lambda k: int(k.split(".")[1])):
            toks = kv[key].split()
            if len(toks) != len(_EPOCH_FIELDS):
                raise ReportFormatError(f"epoch line {key} has {len(toks)} "
                                        f"values, wants {len(_EPOCH_FIELDS)}")
            vals = dict(zip(_EPOCH_FIELDS, (float(t) for t in toks)))
            records.append(EpochRecord(epoch=int(key.split(".")[1]), **vals))

        per_class = [float(t) for t in need("final.per_class").split()]
        flat = [int(t) for t in need("final.confusion").split()]
        c = len(per_class)
        if c == 0 or len(flat) != c * c:
            raise ReportFormatError("confusion matrix does not square with "
                                    "per-class accuracy length")
        confusion = [flat[i * c:(i + 1) * c] for i in range(c)]
        aborted_raw = need("aborted_epoch")
        report = RunReport(
            config=cfg,
            model_fingerprint=need("fingerprint"),
            records=records,
            final_accuracy=float(need("final.accuracy")),
            per_class_accuracy=per_class,
            confusion=confusion,
            unlabeled_weak_passes=int(need("passes.unlabeled_weak")),
            unlabeled_strong_passes=int(need("passes.unlabeled_strong")),
            aborted_epoch=None if aborted_raw == "none" else int(aborted_raw))
    except ReportFormatError:
        raise
    except ValueError as e:
        raise ReportFormatError(f"bad field value: {e}") from e
    return report


def read_report(path: str) -> RunReport:
    return deserialize_report(read_text(path))
