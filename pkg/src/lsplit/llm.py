"""Desk-scale decoder-only autoregressive transformer and its triadic split.

The stack is: token + position embedding -> N pre-norm decoder blocks ->
final norm -> LM head, greedy decoding, EOS = vocab - 1. A partition plan
(X, Y) slices the block stack into head [0, X), body [X, Y) and tail
[Y, N); the sub-models share the same weight arrays, so concatenated
application is the monolithic model by construction, and every kernel
underneath accumulates left-to-right so incremental (cached) stepping is
bit-identical to batched recomputation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PlanError, StateError
from .tensor import (
    KvCache,
    causal_attention_fused,
    gelu,
    layer_norm,
    matmul,
    seeded_uniform,
)

MLP_RATIO = 2  # hidden width of the MLP, in units of D


@dataclass(frozen=True)
class LlmConfig:
    n_blocks: int = 8
    dim: int = 64
    n_heads: int = 4
    vocab: int = 256
    max_len: int = 128
    seed: int = 42

    def __post_init__(self):
        if self.n_blocks < 2:
            raise ParameterError("n_blocks must be >= 2")
        if self.dim % self.n_heads != 0:
            raise ParameterError(f"dim {self.dim} not divisible by {self.n_heads} heads")
        if self.vocab < 2:
            raise ParameterError("vocab must be >= 2")
        if self.max_len < 1:
            raise ParameterError("max_len must be >= 1")

    @property
    def eos_id(self) -> int:
        return self.vocab - 1


class DecoderBlock:
    """Pre-norm block: x += attn(ln1(x)); x += mlp(ln2(x))."""

    __slots__ = ("ln1_g", "ln1_b", "w_qkv", "wo", "ln2_g", "ln2_b", "w_up", "w_down",
                 "n_heads", "dim")

    def __init__(self, rng: np.random.Generator, dim: int, n_heads: int):
        self.dim = dim
        self.n_heads = n_heads
        self.ln1_g = np.ones(dim, np.float32)
        self.ln1_b = np.zeros(dim, np.float32)
        self.w_qkv = seeded_uniform(rng, (dim, 3 * dim), dim)
        self.wo = seeded_uniform(rng, (dim, dim), dim)
        self.ln2_g = np.ones(dim, np.float32)
        self.ln2_b = np.zeros(dim, np.float32)
        hidden = MLP_RATIO * dim
        self.w_up = seeded_uniform(rng, (dim, hidden), dim)
        self.w_down = seeded_uniform(rng, (hidden, dim), hidden)

    def forward(self, x: np.ndarray, cache: KvCache) -> np.ndarray:
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        x = x + causal_attention_fused(h, cache, self.w_qkv, self.wo, self.n_heads)
        h = layer_norm(x, self.ln2_g, self.ln2_b)
        return x + matmul(gelu(matmul(h, self.w_up)), self.w_down)

    def param_count(self) -> int:
        return sum(w.size for w in (self.ln1_g, self.ln1_b, self.w_qkv, self.wo,
                                    self.ln2_g, self.ln2_b, self.w_up, self.w_down))


class ToyLlm:
    def __init__(self, cfg: LlmConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.tok_emb = seeded_uniform(rng, (cfg.vocab, cfg.dim), cfg.dim)
        self.pos_emb = seeded_uniform(rng, (cfg.max_len, cfg.dim), cfg.dim)
        self.blocks = [DecoderBlock(rng, cfg.dim, cfg.n_heads) for _ in range(cfg.n_blocks)]
        self.lnf_g = np.ones(cfg.dim, np.float32)
        self.lnf_b = np.zeros(cfg.dim, np.float32)
        self.w_lm = seeded_uniform(rng, (cfg.dim, cfg.vocab), cfg.dim)

    def param_count(self) -> int:
        n = self.tok_emb.size + self.pos_emb.size + self.lnf_g.size + self.lnf_b.size + self.w_lm.size
        return n + sum(b.param_count() for b in self.blocks)

    @staticmethod
    def param_count_formula(cfg: LlmConfig) -> int:
        """Closed form for the total parameter count of this architecture."""
        d = cfg.dim
        per_block = 3 * d * d + d * d + 2 * (MLP_RATIO * d * d) + 4 * d
        return (cfg.vocab * d + cfg.max_len * d          # embeddings
                + cfg.n_blocks * per_block               # decoder blocks
                + 2 * d                                  # final norm
                + d * cfg.vocab)                         # LM head


def build_toy_llm(cfg: LlmConfig) -> ToyLlm:
    """Deterministically seeded toy model; same cfg -> bit-identical weights."""
    return ToyLlm(cfg)


@dataclass(frozen=True)
class PartitionPlan:
    n_blocks: int
    x: int
    y: int

    def __post_init__(self):
        if not 0 <= self.x <= self.y <= self.n_blocks:
            raise PlanError(f"invalid plan: need 0 <= X <= Y <= N, got "
                            f"X={self.x}, Y={self.y}, N={self.n_blocks}")

    @property
    def local_layers(self) -> int:
        return self.x + (self.n_blocks - self.y)

    @property
    def cloud_layers(self) -> int:
        return self.y - self.x

    @property
    def ratio_label(self) -> str:
        return f"{self.local_layers} : {self.cloud_layers}"


class SubState:
    """Session-confined attention caches and position counter for one sub-model."""

    def __init__(self, sub: "SubModel"):
        cfg = sub.model.cfg
        dh = cfg.dim // cfg.n_heads
        self.kv = [KvCache(cfg.n_heads, dh, cfg.max_len) for _ in sub.blocks]
        self.pos = 0


class SubModel:
    """View over a contiguous block range of a ToyLlm, with optional
    embedding front-end and LM-head back-end. Weights are shared with the
    parent model; all per-session state lives in SubState."""

    def __init__(self, model: ToyLlm, lo: int, hi: int, embed: bool = False,
                 lm_head: bool = False):
        if not 0 <= lo <= hi <= model.cfg.n_blocks:
            raise PlanError(f"block range [{lo}, {hi}) outside model")
        self.model = model
        self.lo = lo
        self.hi = hi
        self.embed = embed
        self.lm_head = lm_head
        self.blocks = model.blocks[lo:hi]

    def new_state(self) -> SubState:
        return SubState(self)

    def forward_tokens(self, state: SubState, token_ids) -> np.ndarray:
        """Embed new tokens at the state's current position and run the blocks."""
        if not self.embed:
            raise StateError("this sub-model has no embedding front-end")
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ParameterError("token ids must be a non-empty 1-D sequence")
        if ids.min() < 0 or ids.max() >= self.model.cfg.vocab:
            raise ParameterError("token id outside vocabulary")
        r = ids.size
        if state.pos + r > self.model.cfg.max_len:
            raise StateError(f"position overflow beyond max_len={self.model.cfg.max_len}")
        x = self.model.tok_emb[ids] + self.model.pos_emb[state.pos : state.pos + r]
        return self._run_blocks(state, x, advance=r)

    def forward_hidden(self, state: SubState, hidden: np.ndarray) -> np.ndarray:
        """Run received hidden rows through this sub-model's blocks."""
        hidden = np.asarray(hidden, dtype=np.float32)
        if hidden.ndim != 2 or hidden.shape[1] != self.model.cfg.dim:
            raise StateError(f"hidden rows must be (r, {self.model.cfg.dim})")
        return self._run_blocks(state, hidden, advance=hidden.shape[0])

    def _run_blocks(self, state: SubState, x: np.ndarray, advance: int) -> np.ndarray:
        for block, cache in zip(self.blocks, state.kv):
            x = block.forward(x, cache)
        state.pos += advance
        return x

    def logits(self, hidden_rows: np.ndarray) -> np.ndarray:
        if not self.lm_head:
            raise StateError("this sub-model has no LM head")
        h = layer_norm(hidden_rows, self.model.lnf_g, self.model.lnf_b)
        return matmul(h, self.model.w_lm)


def partition(model: ToyLlm, plan: PartitionPlan):
    """Split into (head, body, tail). Head keeps the embedding, tail keeps the
    final norm, LM head and detokenizer side; body is the cloud block range."""
    if plan.n_blocks != model.cfg.n_blocks:
        raise PlanError(f"plan is for N={plan.n_blocks}, model has N={model.cfg.n_blocks}")
    head = SubModel(model, 0, plan.x, embed=True)
    body = SubModel(model, plan.x, plan.y)
    tail = SubModel(model, plan.y, model.cfg.n_blocks, lm_head=True)
    return head, body, tail


def head_forward(head: SubModel, new_tokens, state: SubState) -> np.ndarray:
    """Hidden rows for the new token positions only (head-side KV caches)."""
    return head.forward_tokens(state, new_tokens)


def body_forward(body: SubModel, new_hidden, state: SubState) -> np.ndarray:
    """Body outputs for newly received hidden rows."""
    return body.forward_hidden(state, new_hidden)


def tail_forward(tail: SubModel, new_hidden, state: SubState) -> int:
    """Greedy next token from the final position; ties break toward lower id."""
    x = tail.forward_hidden(state, new_hidden)
    logits = tail.logits(x[-1:])
    return int(np.argmax(logits[0]))


def greedy_token(logits_row: np.ndarray) -> int:
    return int(np.argmax(logits_row))


def generate_monolithic(model: ToyLlm, prompt_tokens, l_out: int,
                        stop_at_eos: bool = True) -> list[int]:
    """Single-process greedy decoding; the exactness oracle for split runs."""
    if l_out < 0:
        raise ParameterError("l_out must be >= 0")
    full = SubModel(model, 0, model.cfg.n_blocks, embed=True, lm_head=True)
    state = full.new_state()
    prompt_tokens = list(prompt_tokens)
    if len(prompt_tokens) + l_out > model.cfg.max_len:
        raise StateError("prompt + l_out exceeds max_len")
    if l_out == 0:
        return []
    tokens: list[int] = []
    x = full.forward_tokens(state, prompt_tokens)
    while True:
        tok = greedy_token(full.logits(x[-1:])[0])
        tokens.append(tok)
        if len(tokens) >= l_out or (stop_at_eos and tok == model.cfg.eos_id):
            return tokens
        x = full.forward_tokens(state, [tok])


def generate_monolithic_timed(model: ToyLlm, prompt_tokens, l_out: int,
                              stop_at_eos: bool = True):
    t0 = time.perf_counter()
    tokens = generate_monolithic(model, prompt_tokens, l_out, stop_at_eos)
    return tokens, time.perf_counter() - t0


def tokenize(text: str) -> list[int]:
    """Byte-level toy tokenizer: one token per UTF-8 byte. UTF-8 never emits
    0xFF, so the EOS id (255) cannot appear in encoded prompts."""
    return list(text.encode("utf-8"))


def detokenize(tokens, eos_id: int = 255) -> str:
    return bytes(t for t in tokens if t != eos_id).decode("latin-1")
