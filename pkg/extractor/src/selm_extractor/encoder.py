"""Frozen speech encoder wrapper: pretrained weights or a seeded random stand-in.

The encoder is the standard 12-block/768-wide convolutional-transformer speech
model at 16 kHz (20 ms hop after the conv stack). Layer indexing is 1-based
over the transformer blocks; layer k returns the hidden state after block k.
"""

from __future__ import annotations

import numpy as np

SAMPLE_RATE = 16000


class EncoderUnavailableError(RuntimeError):
    """No usable pretrained encoder could be loaded (fatal for the job)."""


class SpeechEncoder:
    def __init__(self, model, n_layers):
        import torch

        self._torch = torch
        self.model = model.eval()
        self.n_layers = n_layers
        for p in self.model.parameters():
            p.requires_grad_(False)

    @classmethod
    def pretrained(cls, name_or_path):
        """Load pretrained weights from a local directory or cached model name."""
        try:
            from transformers import Wav2Vec2Model
            model = Wav2Vec2Model.from_pretrained(name_or_path, local_files_only=True)
        except Exception as e:
            raise EncoderUnavailableError(
                f"cannot load pretrained encoder {name_or_path!r}: {e}"
            ) from e
        return cls(model, model.config.num_hidden_layers)

    @classmethod
    def seeded_random(cls, seed=0):
        """Same architecture, seeded random weights.

        Deterministic and offline; meant for smoke tests and format-level
        integration, not for meaningful features.
        """
        import torch
        from transformers import Wav2Vec2Config, Wav2Vec2Model

        torch.manual_seed(seed)
        config = Wav2Vec2Config()
        model = Wav2Vec2Model(config)
        return cls(model, config.num_hidden_layers)

    def validate_layer(self, layer):
        if not 1 <= layer <= self.n_layers:
            raise ValueError(
                f"layer index {layer} outside [1, {self.n_layers}]"
            )

    def encode(self, waveform, layer):
        """Mono float waveform at 16 kHz -> (frames, hidden) float32 matrix."""
        self.validate_layer(layer)
        torch = self._torch
        x = torch.from_numpy(np.asarray(waveform, dtype=np.float32))[None, :]
        with torch.no_grad():
            out = self.model(x, output_hidden_states=True)
        # hidden_states[0] is the pre-block projection; block k is index k
        return out.hidden_states[layer][0].numpy().astype(np.float64)
