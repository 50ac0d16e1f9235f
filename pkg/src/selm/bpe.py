"""Byte-level BPE tokenizer: trainable, serializable, lossless on any byte string.

Ids are laid out as PAD=0, BOS=1, EOS=2, raw bytes 3..258, then one id per
learned merge. Because the base alphabet covers all 256 bytes, encode() can
never fail, and decode(encode(s)) == s for every byte string s.
"""

from __future__ import annotations

from collections import Counter

from .errors import ConfigError, FormatError, VocabularyError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
N_SPECIALS = 3
MIN_VOCAB = N_SPECIALS + 256

_SPECIAL_NAMES = {PAD_ID: "<pad>", BOS_ID: "<bos>", EOS_ID: "<eos>"}

VOCAB_MAGIC = "SELMVOCAB"
VOCAB_VERSION = 1


class Vocabulary:
    """Learned merge list over the byte alphabet plus the three fixed specials."""

    def __init__(self, merges=()):
        self.merges = [(bytes(a), bytes(b)) for a, b in merges]
        self._token_bytes = [b""] * N_SPECIALS + [bytes([i]) for i in range(256)]
        self._byte_to_id = {bytes([i]): N_SPECIALS + i for i in range(256)}
        self._ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            merged = a + b
            self._token_bytes.append(merged)
            self._ranks[(a, b)] = rank
        self._pair_to_id = {
            pair: MIN_VOCAB + rank for pair, rank in self._ranks.items()
        }

    def __len__(self):
        return len(self._token_bytes)

    def token_bytes(self, token_id):
        if not 0 <= token_id < len(self._token_bytes):
            raise VocabularyError(f"unknown token id {token_id}")
        return self._token_bytes[token_id]

    def encode(self, text):
        """Text (or bytes) -> token ids; never emits specials."""
        raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        # parts carry (byte string, token id); distinct merges may share bytes,
        # so ids must travel through the merge loop rather than be re-derived.
        parts = [(bytes([b]), N_SPECIALS + b) for b in raw]
        while len(parts) > 1:
            best_rank = None
            best_pair = None
            for (a, _), (b, _) in zip(parts, parts[1:]):
                rank = self._ranks.get((a, b))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pair = (a, b)
            if best_pair is None:
                break
            merged = (best_pair[0] + best_pair[1], self._pair_to_id[best_pair])
            out = []
            i = 0
            while i < len(parts):
                if (i + 1 < len(parts)
                        and (parts[i][0], parts[i + 1][0]) == best_pair):
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        return [tid for _, tid in parts]

    def decode(self, ids):
        """Token ids -> text; specials decode to nothing."""
        out = bytearray()
        for i in ids:
            out.extend(self.token_bytes(int(i)))
        return out.decode("utf-8", errors="replace")

    # -- serialization -------------------------------------------------------

    def dumps(self):
        lines = [f"{VOCAB_MAGIC} v{VOCAB_VERSION}"]
        lines.append(f"specials pad={PAD_ID} bos={BOS_ID} eos={EOS_ID}")
        lines.append("base 256")
        for a, b in self.merges:
            lines.append(f"merge {_escape(a)} {_escape(b)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith(VOCAB_MAGIC):
            raise FormatError("vocabulary file: bad magic line")
        if lines[0] != f"{VOCAB_MAGIC} v{VOCAB_VERSION}":
            raise FormatError(f"vocabulary file: unsupported version line {lines[0]!r}")
        if len(lines) < 3 or not lines[1].startswith("specials ") or lines[2] != "base 256":
            raise FormatError("vocabulary file: malformed header")
        merges = []
        for ln, line in enumerate(lines[3:], start=4):
            if not line:
                continue
            fields = line.split(" ")
            if fields[0] != "merge" or len(fields) != 3:
                raise FormatError(f"vocabulary file: bad record on line {ln}")
            merges.append((_unescape(fields[1]), _unescape(fields[2])))
        return cls(merges)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.loads(f.read())


def _escape(bs):
    out = []
    for b in bs:
        c = chr(b)
        if 0x21 <= b <= 0x7E and c != "\\":
            out.append(c)
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(s):
    out = bytearray()
    i = 0
    while i < len(s):
        if s[i] == "\\":
            if i + 3 >= len(s) or s[i + 1] != "x":
                raise FormatError(f"vocabulary file: bad escape in {s!r}")
            out.append(int(s[i + 2:i + 4], 16))
            i += 4
        else:
            out.append(ord(s[i]))
            i += 1
    return bytes(out)


def train_bpe(corpus, target_vocab):
    """Greedy pair merging over the corpus until target_vocab is reached.

    The highest-frequency adjacent pair is merged each round; frequency ties
    break toward the lexicographically smaller (left, right) byte-string pair.
    Stops early once no pair occurs twice.
    """
    if not corpus:
        raise ConfigError("empty training corpus")
    if target_vocab < MIN_VOCAB:
        raise ConfigError(f"target vocab {target_vocab} below minimum {MIN_VOCAB}")
    sequences = [
        [bytes([b]) for b in (line.encode("utf-8") if isinstance(line, str) else bytes(line))]
        for line in corpus
    ]
    merges = []
    while len(merges) + MIN_VOCAB < target_vocab:
        counts = Counter()
        for seq in sequences:
            counts.update(zip(seq, seq[1:]))
        if not counts:
            break
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        pair, freq = best
        if freq < 2:
            break
        merges.append(pair)
        merged = pair[0] + pair[1]
        for si, seq in enumerate(sequences):
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            sequences[si] = out
    return Vocabulary(merges)
