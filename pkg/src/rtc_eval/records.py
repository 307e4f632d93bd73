"""Line-delimited record files (UTF-8, one JSON object per line).

Serialization is compact and key-order-stable so reruns with mock models
produce bitwise-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator


def dumps_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: Path | str, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_line(record))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: Path | str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_json(path: Path | str, document: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(document, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
