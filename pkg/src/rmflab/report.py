"""Report envelopes and their JSON / CSV / aligned-text renderings."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any

from . import __version__

FORMATS = ("json", "csv", "table")


def _clean(obj: Any) -> Any:
    """Make ``obj`` JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def envelope(command: str, config: dict, result: Any, *, table_limit: int | None, seed: int | None) -> dict:
    return _clean(
        {
            "tool": "rmflab",
            "version": __version__,
            "command": command,
            "config": config,
            "table_limit": table_limit,
            "seed": seed,
            "result": result,
        }
    )


def to_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    if isinstance(obj, dict):
        out = []
        for k in sorted(obj):
            out += _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
        return out
    if isinstance(obj, list) and obj and all(isinstance(v, (dict, list)) for v in obj):
        out = []
        for i, v in enumerate(obj):
            out += _flatten(v, f"{prefix}[{i}]")
        return out
    return [(prefix, json.dumps(obj) if isinstance(obj, list) else obj)]


def to_csv(doc: dict) -> str:
    """Rows of the ``result`` block: tables stay tabular, everything else is key,value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    rows = doc["result"].get("rows") if isinstance(doc["result"], dict) else None
    if rows and all(isinstance(r, dict) for r in rows):
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([r.get(c) for c in cols])
    else:
        w.writerow(["key", "value"])
        for k, v in _flatten(doc["result"]):
            w.writerow([k, v])
    return buf.getvalue()


def to_table(doc: dict) -> str:
    head = f"# rmflab {doc['version']}  command={doc['command']}  table_limit={doc['table_limit']}  seed={doc['seed']}\n"
    rows = doc["result"].get("rows") if isinstance(doc["result"], dict) else None
    if rows and all(isinstance(r, dict) for r in rows):
        cols = list(rows[0])
        cells = [[_fmt(r.get(c)) for c in cols] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(wd) for c, wd in zip(cols, widths))]
        lines += ["  ".join(v.rjust(wd) for v, wd in zip(row, widths)) for row in cells]
        extra = {k: v for k, v in doc["result"].items() if k != "rows"}
        tail = "".join(f"{k}: {_fmt(v)}\n" for k, v in _flatten(extra))
        return head + "\n".join(lines) + "\n" + tail
    pairs = _flatten(doc["result"])
    width = max((len(k) for k, _ in pairs), default=0)
    return head + "".join(f"{k.ljust(width)}  {_fmt(v)}\n" for k, v in pairs)


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render(doc: dict, fmt: str) -> str:
    if fmt == "json":
        return to_json(doc)
    if fmt == "csv":
        return to_csv(doc)
    if fmt == "table":
        return to_table(doc)
    raise ValueError(f"unknown format {fmt!r}")


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
