"""selm-extract: offline audio -> feature-file + manifest exporter."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .encoder import EncoderUnavailableError, SpeechEncoder
from .extract import DEFAULT_LAYER, ExtractJob, extract, read_audio_list


@click.command()
@click.option("--audio-list", "list_path", required=True, type=click.Path(exists=True),
              help="TSV with columns: audio path, label, view.")
@click.option("--layer", type=int, default=DEFAULT_LAYER, show_default=True,
              help="1-based transformer block whose hidden state is exported.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--encoder", "encoder_ref", default=None,
              help="Local path (or cached name) of pretrained encoder weights.")
@click.option("--seeded-random-encoder", is_flag=True,
              help="Use seeded random weights of the same architecture "
                   "(offline smoke/integration mode; features are not meaningful).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Weight seed for --seeded-random-encoder.")
def main(list_path, layer, out_dir, encoder_ref, seeded_random_encoder, seed):
    """Run the frozen speech encoder over an audio list and export features."""
    try:
        if seeded_random_encoder:
            encoder = SpeechEncoder.seeded_random(seed=seed)
        elif encoder_ref:
            encoder = SpeechEncoder.pretrained(encoder_ref)
        else:
            raise EncoderUnavailableError(
                "no encoder specified: pass --encoder <path> or "
                "--seeded-random-encoder"
            )
        job = ExtractJob(items=read_audio_list(list_path), out_dir=Path(out_dir),
                         layer=layer)
        rows, errors = extract(job, encoder)
    except (EncoderUnavailableError, ValueError, OSError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        sys.exit(1)
    report = {
        "out_dir": str(out_dir),
        "layer": layer,
        "n_rows": len(rows),
        "n_errors": len(errors),
        "seed": seed,
        "encoder": "seeded-random" if seeded_random_encoder else str(encoder_ref),
    }
    json.dump(report, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    print(f"wrote {len(rows)} rows, {len(errors)} errors -> {out_dir}", file=sys.stderr)
    if errors:
        print(f"see {Path(out_dir) / 'errors.log'}", file=sys.stderr)


if __name__ == "__main__":
    main()
