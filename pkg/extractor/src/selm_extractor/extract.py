"""Batch feature extraction: audio list in, feature files + manifest out."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .audio import AudioDecodeError, load_waveform
from .encoder import SpeechEncoder
from .formats import VIEWS, manifest_row, write_feature, write_manifest

DEFAULT_LAYER = 4


@dataclass
class ExtractJob:
    items: list          # (audio path, label, view) triples
    out_dir: Path
    layer: int = DEFAULT_LAYER

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        for path, label, view in self.items:
            if view not in VIEWS:
                raise ValueError(f"{path}: unknown view {view!r}")


def read_audio_list(path):
    """TSV with columns (audio path, label, view); blank and # lines skipped."""
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields")
            items.append((fields[0], fields[1], fields[2]))
    return items


def extract(job: ExtractJob, encoder: SpeechEncoder):
    """Run the encoder over every decodable input; returns (rows, errors).

    One feature file per distinct audio path; manifest rows follow the input
    order. Per-file failures are recorded in errors.log in the output
    directory and skipped; the job continues.
    """
    encoder.validate_layer(job.layer)
    out_dir = job.out_dir
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rows = []
    errors = []
    done = {}
    for path, label, view in job.items:
        path = str(path)
        try:
            if path not in done:
                waveform = load_waveform(path)
                feat = encoder.encode(waveform, job.layer)
                stem = Path(path).stem
                rel = f"features/{stem}.sf"
                write_feature(out_dir / rel, feat)
                done[path] = rel
            rel = done[path]
            row_id = f"{Path(path).stem}:{view}"
            rows.append(manifest_row(row_id, rel, view, label))
        except (AudioDecodeError, KeyError, ValueError, OSError) as e:
            errors.append(f"{path}\t{view}\t{type(e).__name__}: {e}")
    write_manifest(out_dir / "manifest.jsonl", rows)
    if errors:
        with open(out_dir / "errors.log", "w", encoding="utf-8") as f:
            f.write("\n".join(errors) + "\n")
    return rows, errors
