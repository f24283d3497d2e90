"""Encoder-decoder summarizer with temporal fusion ([TI] row) and a
patient-metadata cross-attention branch in selected decoder layers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..corpus.vocab import BOS, EOS, PAD, SEP, TI, UNK
from ..substrate import ParamStore, Tensor, ops
from . import layers as L

PIA_CHOICES = ("all", "first_half", "last_half")
NEVER_SAMPLED = (PAD, BOS, UNK, TI, SEP)
CONTENT_EXCLUDED = (PAD, BOS, EOS, TI)


@dataclass
class ModelConfig:
    vs: int
    d: int = 64
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    max_note_len: int = 128
    max_summary_len: int = 64
    lambda2: float = 0.3
    pia_layers: str = "all"
    tau: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 1 <= self.max_summary_len <= 500:
            raise ValueError("max_summary_len must be in 1..500")
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ValueError("lambda2 must be in [0, 1]")
        if self.pia_layers not in PIA_CHOICES:
            raise ValueError(f"pia_layers must be one of {PIA_CHOICES}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if min(self.n_layers_enc, self.n_layers_dec, self.vs, self.ff_dim, self.max_note_len) < 1:
            raise ValueError("sizes must be positive")

    @property
    def n_pos(self):
        # +1 so a full-length note can be teacher-forced behind [TI] during reconstruction
        return max(self.max_note_len + 1, self.max_summary_len + 2)

    def pia_layer_ids(self):
        n = self.n_layers_dec
        half = max(1, n // 2)
        return {"all": list(range(n)), "first_half": list(range(half)),
                "last_half": list(range(n - half, n))}[self.pia_layers]

    def to_dict(self):
        return asdict(self)


@dataclass
class EncodedNote:
    H_enc: Tensor
    h: Tensor


def tif_weights(n):
    """Normalized temporal weights j / sum(1..n) for j = 1..n."""
    if n == 0:
        return np.zeros(0)
    j = np.arange(1, n + 1, dtype=np.float64)
    return j / j.sum()


@dataclass
class DecoderState:
    cross_kv: list
    pia_kv: dict
    enc_mask: np.ndarray
    pa_mask: np.ndarray | None
    self_kv: list = field(default_factory=list)
    pos: int = 0


@dataclass
class Generation:
    ids: np.ndarray          # (B, T) sampled ids, junk after a sequence's EOS
    onehots: list            # per step (B, vs) Tensors, hard forward / soft backward
    lengths: np.ndarray      # content tokens before the first EOS
    ended: np.ndarray        # bool (B,): emitted EOS within the budget

    def tokens(self, i):
        """Emitted ids for sample i, including its EOS when present."""
        n = int(self.lengths[i]) + int(self.ended[i])
        return [int(t) for t in self.ids[i, :n]]


class Seq2SeqModel:
    def __init__(self, cfg, store=None):
        self.cfg = cfg
        if store is None:
            store = ParamStore()
            self._init(store, np.random.default_rng(cfg.init_seed))
        self.store = store
        self.pia_ids = set(cfg.pia_layer_ids())
        allowed = np.ones(cfg.vs, dtype=bool)
        allowed[[t for t in NEVER_SAMPLED if t < cfg.vs]] = False
        self.allowed = allowed
        self.allowed_first = allowed.copy()
        self.allowed_first[EOS] = False

    def _init(self, s, rng):
        c = self.cfg
        s.add("tok_emb", rng.normal(0.0, 1.0 / np.sqrt(c.d), size=(c.vs, c.d)))
        L.init_encoder(s, "enc", c.n_layers_enc, c.d, c.ff_dim, c.n_pos, rng)
        s.add("dec.pos", rng.normal(0.0, 0.02, size=(c.n_pos, c.d)))
        for i in range(c.n_layers_dec):
            p = f"dec.l{i}"
            L.init_ln(s, f"{p}.ln1", c.d)
            L.init_attention(s, f"{p}.self", c.d, rng)
            L.init_ln(s, f"{p}.ln2", c.d)
            L.init_attention(s, f"{p}.cross", c.d, rng)
            if i in c.pia_layer_ids():
                L.init_attention(s, f"{p}.pia", c.d, rng)
            L.init_ln(s, f"{p}.ln3", c.d)
            L.init_ffn(s, f"{p}.ff", c.d, c.ff_dim, rng)
        L.init_ln(s, "dec.ln_f", c.d)
        s.add("dec.lm_bias", np.zeros(c.vs))

    # ------------------------------------------------------------ parameter groups
    def encoder_names(self):
        return [n for n in self.store.names() if n.startswith("enc.")]

    def decoder_names(self):
        return [n for n in self.store.names() if n.startswith("dec.")]

    # ------------------------------------------------------------ encoder
    def encode_batch(self, seqs):
        """Encode id lists (each starting with the note-start token) -> (H, mask)."""
        for s in seqs:
            if not 1 <= len(s) <= self.cfg.max_note_len:
                raise ValueError(f"encoder input of length {len(s)} outside 1..{self.cfg.max_note_len}")
        ids, mask = L.pad_ids(seqs, PAD)
        x = ops.embedding(ids, self.store["tok_emb"])
        H = L.encoder_stack(self.store, "enc", x, mask, self.cfg.n_layers_enc, self.cfg.n_heads)
        return H, mask

    def encode(self, tokens):
        H, _ = self.encode_batch([list(tokens)])
        H = ops.getitem(H, 0)
        return EncodedNote(H, ops.getitem(H, 0))

    # ------------------------------------------------------------ temporal fusion
    def tif_fuse(self, past):
        """Weighted average of past first-token vectors; [PAD] embedding when empty."""
        if len(past) == 0:
            return ops.getitem(self.store["tok_emb"], PAD)
        w = tif_weights(len(past))
        out = ops.scale(past[0], w[0])
        for wj, h in zip(w[1:], past[1:]):
            out = ops.add(out, ops.scale(h, wj))
        return out

    def tif_batch(self, histories):
        """Stack tif_fuse over a batch of history lists -> (B, d)."""
        return ops.stack([self.tif_fuse(h) for h in histories], axis=0)

    # ------------------------------------------------------------ decoder
    def start_decoding(self, H_enc, enc_mask, H_pa=None, pa_mask=None):
        c, s = self.cfg, self.store
        cross = [L.project_kv(s, f"dec.l{i}.cross", H_enc, c.n_heads) for i in range(c.n_layers_dec)]
        pia = {}
        if H_pa is not None:
            pia = {i: L.project_kv(s, f"dec.l{i}.pia", H_pa, c.n_heads) for i in sorted(self.pia_ids)}
        return DecoderState(cross, pia, L.key_mask(enc_mask),
                            None if H_pa is None else L.key_mask(pa_mask),
                            [None] * c.n_layers_dec, 0)

    def decoder_rows(self, state, x):
        """Run new input rows x (B, t, d) through the decoder; returns final hidden rows.

        Self-attention sees every cached row plus the new rows causally.
        """
        c, s = self.cfg, self.store
        t = x.shape[1]
        p0 = state.pos
        if p0 + t > c.n_pos:
            raise ValueError(f"decoder prefix of {p0 + t} rows exceeds {c.n_pos}")
        x = ops.add(x, ops.getitem(s["dec.pos"], slice(p0, p0 + t)))
        qpos = p0 + np.arange(t)
        self_mask = (np.arange(p0 + t)[None, :] <= qpos[:, None])[None, None]
        for i in range(c.n_layers_dec):
            p = f"dec.l{i}"
            h = L.ln(s, f"{p}.ln1", x)
            k, v = L.project_kv(s, f"{p}.self", h, c.n_heads)
            if state.self_kv[i] is not None:
                k = ops.concat([state.self_kv[i][0], k], axis=2)
                v = ops.concat([state.self_kv[i][1], v], axis=2)
            state.self_kv[i] = (k, v)
            x = ops.add(x, L.attend(s, f"{p}.self", h, k, v, c.n_heads, self_mask))
            h = L.ln(s, f"{p}.ln2", x)
            ck, cv = state.cross_kv[i]
            x = ops.add(x, L.attend(s, f"{p}.cross", h, ck, cv, c.n_heads, state.enc_mask))
            if i in state.pia_kv:
                pk, pv = state.pia_kv[i]
                x = ops.add(x, ops.scale(L.attend(s, f"{p}.pia", h, pk, pv, c.n_heads, state.pa_mask), c.lambda2))
            x = ops.add(x, L.ffn(s, f"{p}.ff", L.ln(s, f"{p}.ln3", x)))
        state.pos = p0 + t
        return L.ln(s, "dec.ln_f", x)

    def lm_head(self, h):
        return ops.add(ops.matmul(h, ops.transpose(self.store["tok_emb"])), self.store["dec.lm_bias"])

    def embed_prefix(self, tif, prefix):
        """Decoder input rows [h_TIF, emb(prefix)...] for one sequence.

        `prefix` is an id list or a (j+1, vs) one-hot Tensor, starting with [BOS].
        """
        if isinstance(prefix, Tensor):
            rows = ops.embed_one_hot(prefix, self.store["tok_emb"])
        else:
            rows = ops.embedding(np.asarray(prefix, dtype=np.int64), self.store["tok_emb"])
        return ops.concat([ops.reshape(tif, (1, -1)), rows], axis=0)

    def decode_step(self, H_enc, H_pa, tif, prefix):
        """Full-prefix decoder pass for one sequence.

        Returns (next-token logits (vs,), H_dec (j+2, d)) for prefix
        [[TI], [BOS], y_1..y_j]. `H_pa` None removes the metadata branch.
        """
        n_rows = len(prefix) + 1 if not isinstance(prefix, Tensor) else prefix.shape[0] + 1
        if n_rows > self.cfg.max_summary_len + 2:
            raise ValueError(f"prefix of {n_rows} rows exceeds max_summary_len + 2 = {self.cfg.max_summary_len + 2}")
        H_enc3 = ops.reshape(H_enc, (1,) + H_enc.shape)
        enc_mask = np.ones((1, H_enc.shape[0]), dtype=bool)
        if H_pa is not None:
            state = self.start_decoding(H_enc3, enc_mask, ops.reshape(H_pa, (1,) + H_pa.shape),
                                        np.ones((1, H_pa.shape[0]), dtype=bool))
        else:
            state = self.start_decoding(H_enc3, enc_mask)
        x = ops.reshape(self.embed_prefix(tif, prefix), (1, n_rows, self.cfg.d))
        H_dec = ops.getitem(self.decoder_rows(state, x), 0)
        return self.lm_head(ops.getitem(H_dec, n_rows - 1)), H_dec

    # ------------------------------------------------------------ generation
    def generate_batch(self, H_enc, enc_mask, H_pa, pa_mask, tif, mode="greedy", rngs=None,
                       max_len=None, tape=None):
        """Lockstep autoregressive generation for a batch.

        `tif` is (B, d). In st_gumbel mode `rngs` is one generator per sample and
        the returned one-hots carry the straight-through gradient path.
        """
        if mode not in ("greedy", "st_gumbel"):
            raise ValueError(f"unknown generation mode {mode!r}")
        c, s = self.cfg, self.store
        B = tif.shape[0]
        if mode == "st_gumbel" and (rngs is None or len(rngs) != B) and not (tape is not None and tape.replaying):
            raise ValueError("st_gumbel generation needs one rng per sample")
        max_len = c.max_summary_len if max_len is None else min(max_len, c.max_summary_len)
        state = self.start_decoding(H_enc, enc_mask, H_pa, pa_mask)
        bos = ops.getitem(s["tok_emb"], np.full(B, BOS))
        x = ops.stack([tif, bos], axis=1)
        h = self.decoder_rows(state, x)
        last = ops.getitem(h, (slice(None), -1))
        ids = np.zeros((B, max_len), dtype=np.int64)
        onehots = []
        done = np.zeros(B, dtype=bool)
        lengths = np.zeros(B, dtype=np.int64)
        for t in range(max_len):
            logits = self.lm_head(last)
            allowed = self.allowed_first if t == 0 else self.allowed
            if mode == "greedy":
                picked = np.argmax(np.where(allowed, logits.data, -np.inf), axis=-1)
                y = Tensor(ops.one_hot(picked, c.vs))
            else:
                noise = None
                if not (tape is not None and tape.replaying):
                    noise = np.stack([ops.gumbel_noise((c.vs,), r) for r in rngs])
                y, _ = ops.gumbel_softmax_st(logits, c.tau, noise=noise, mask=allowed, tape=tape)
                picked = np.argmax(y.data, axis=-1)
            ids[:, t] = picked
            onehots.append(y)
            lengths += ~done & (picked != EOS)
            done |= picked == EOS
            if done.all() or t == max_len - 1:
                break
            x = ops.reshape(ops.embed_one_hot(y, s["tok_emb"]), (B, 1, c.d))
            last = ops.getitem(self.decoder_rows(state, x), (slice(None), -1))
        T = len(onehots)
        return Generation(ids[:, :T], onehots, lengths, done.copy())

    def generate(self, note_ids, metadata_ids, history_h, mode="greedy", rng=None, max_len=None):
        """Summarize one note. Returns (token ids, one-hot list)."""
        H, mask = self.encode_batch([note_ids])
        H_pa, pa_mask = self.encode_batch([metadata_ids]) if metadata_ids is not None else (None, None)
        tif = ops.reshape(self.tif_fuse(history_h), (1, self.cfg.d))
        g = self.generate_batch(H, mask, H_pa, pa_mask, tif, mode, None if rng is None else [rng], max_len)
        return g.tokens(0), [ops.getitem(y, 0) for y in g.onehots]

    # ------------------------------------------------------------ teacher forcing
    def teacher_forced(self, H_enc, enc_mask, H_pa, pa_mask, tif, targets):
        """Mean token CE of decoding each target (plus [EOS]) behind [TI] [BOS].

        Returns (loss Tensor, correct count, token count).
        """
        c, s = self.cfg, self.store
        B = len(targets)
        inputs = [[BOS] + list(t) for t in targets]
        outputs = [list(t) + [EOS] for t in targets]
        in_ids, mask = L.pad_ids(inputs, PAD)
        out_ids, _ = L.pad_ids(outputs, PAD)
        state = self.start_decoding(H_enc, enc_mask, H_pa, pa_mask)
        x = ops.concat([ops.reshape(tif, (B, 1, c.d)), ops.embedding(in_ids, s["tok_emb"])], axis=1)
        h = self.decoder_rows(state, x)
        logits = self.lm_head(ops.getitem(h, (slice(None), slice(1, None))))
        loss = ops.cross_entropy_ids(logits, out_ids, mask)
        pred = np.argmax(logits.data, axis=-1)
        correct = int(((pred == out_ids) & mask).sum())
        return loss, correct, int(mask.sum())

    def reconstruct_forward(self, notes):
        """Teacher-forced reconstruction of each note's own tokens from its encoding.

        `notes` are content-id lists; the encoder sees [BOS] + note, the decoder
        has no history ([TI] = [PAD] embedding) and no metadata branch.
        """
        H, mask = self.encode_batch([[BOS] + list(n) for n in notes])
        pad = ops.getitem(self.store["tok_emb"], np.full(len(notes), PAD))
        return self.teacher_forced(H, mask, None, None, pad, notes)


def content_length(ids):
    return sum(1 for t in ids if t not in CONTENT_EXCLUDED)
