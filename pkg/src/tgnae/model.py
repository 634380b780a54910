"""Desk-scale decoder-only transformer for TG, TG-comp and vanilla LMs.

All three variants share one architecture; they differ only in the input
sequence and the attention plan:

* ``TG``: close-duplicated action sequence with COMPOSE/STACK masks.
* ``TGminusComp``: the plain action sequence under a causal mask.
* ``Vanilla``: terminal subwords under a causal mask.
"""

from __future__ import annotations

import copy
import json
import math
import struct
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .lexicon import Vocabulary, action_ids, segment_actions
from .treebank import (
    ActionSequence,
    AttentionMaskPlan,
    DuplicatedSequence,
    Kind,
    causal_plan,
    tg_plan,
)

VARIANTS = ("TG", "TGminusComp", "Vanilla")
CHECKPOINT_MAGIC = b"TGNAECK1"


class InvalidConfig(ValueError):
    pass


class LengthExceeded(ValueError):
    pass


class PlanMismatch(ValueError):
    pass


class AllMasked(ValueError):
    pass


class DivergedLoss(RuntimeError):
    pass


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 2
    model_dim: int = 32
    ffn_dim: int = 64
    vocab_size: int = 0
    max_len: int = 128
    dropout: float = 0.0
    variant: str = "TG"
    positional: str = "learned"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown variant {self.variant!r}")
        if min(self.layers, self.heads, self.model_dim, self.ffn_dim) < 1:
            raise InvalidConfig("layers, heads and dimensions must be positive")
        if self.model_dim % self.heads:
            raise InvalidConfig(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.vocab_size < 1 or self.max_len < 1:
            raise InvalidConfig("vocab_size and max_len must be positive")
        if self.positional != "learned":
            raise InvalidConfig(f"unsupported positional scheme {self.positional!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")


@dataclass
class AttentionRecord:
    """Attention of every layer and head.

    ``weights[l, h, i, j]`` is the softmax weight from query ``i`` to key ``j``
    (exactly 0 outside the plan); ``norm_weights`` multiplies it by the norm
    of key ``j``'s value vector pushed through head ``h``'s output slice.
    """

    weights: np.ndarray
    norm_weights: np.ndarray

    def top(self, weighting: str = "norm") -> np.ndarray:
        """``[heads, L, L]`` for the last layer."""
        src = self.norm_weights if weighting == "norm" else self.weights
        return src[-1]


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.d_head = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask, record: bool = False):
        b, t, d = x.shape
        h, dh = self.heads, self.d_head
        q = self.q(x).view(b, t, h, dh).transpose(1, 2)
        k = self.k(x).view(b, t, h, dh).transpose(1, 2)
        v = self.v(x).view(b, t, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~mask[:, None], float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        ctx = self.drop(alpha) @ v
        out = self.o(ctx.transpose(1, 2).reshape(b, t, d))
        if not record:
            return out, None
        # per-head value vectors through the head's slice of the output map
        w_o = self.o.weight.view(d, h, dh)
        transformed = torch.einsum("bhtk,dhk->bhtd", v, w_o)
        norms = transformed.norm(dim=-1)
        return out, (alpha.detach(), (alpha * norms[:, :, None, :]).detach())


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.attn = Attention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.ff1 = nn.Linear(cfg.model_dim, cfg.ffn_dim)
        self.ff2 = nn.Linear(cfg.ffn_dim, cfg.model_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask, record=False):
        a, rec = self.attn(self.ln1(x), mask, record)
        x = x + self.drop(a)
        x = x + self.drop(self.ff2(F.gelu(self.ff1(self.ln2(x)))))
        return x, rec


class TransformerLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.model_dim)
        self.pos = nn.Embedding(cfg.max_len, cfg.model_dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.model_dim)
        self.out = nn.Linear(cfg.model_dim, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout)

    def embeddings(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[-1] > self.cfg.max_len:
            raise LengthExceeded(f"length {ids.shape[-1]} > max_len {self.cfg.max_len}")
        positions = torch.arange(ids.shape[-1], device=ids.device)
        return self.embed(ids) + self.pos(positions)

    def forward_embeddings(self, x, mask, record: bool = False):
        """Run the stack on precomputed input embeddings ``x`` (B, L, D)."""
        x = self.drop(x)
        records = []
        for blk in self.blocks:
            x, rec = blk(x, mask, record)
            records.append(rec)
        logits = self.out(self.ln_f(x))
        return logits, (records if record else None)

    def forward(self, ids, mask, record: bool = False):
        return self.forward_embeddings(self.embeddings(ids), mask, record)


def init_model(cfg: ModelConfig, seed: int = 0) -> TransformerLM:
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = TransformerLM(cfg)
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                nn.init.zeros_(p)
            elif ".ln" in name or name.startswith("ln_"):
                nn.init.ones_(p)
            else:
                nn.init.normal_(p, mean=0.0, std=0.02)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# --------------------------------------------------------------------------
# sequence encodings per variant


@dataclass
class Encoded:
    """One sentence ready for a given variant.

    ``lexical[p]`` is the word index of the terminal at model position ``p``
    (absent for structural positions). ``action_of[p]`` maps model positions to
    indices in the segmented action sequence; for ``Vanilla`` it maps to the
    terminal's action index so tree-based attribution still works.
    """

    variant: str
    ids: list[int]
    plan: AttentionMaskPlan
    lexical: dict[int, int]
    action_of: list[int]
    actions: ActionSequence
    dup: DuplicatedSequence | None = None
    mask: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mask is None:
            self.mask = self.plan.matrix()

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def scored(self) -> np.ndarray:
        """Boolean over items: True where item ``i`` is predicted by row ``i-1``."""
        tm = self.plan.target_mask
        out = np.zeros(len(self.ids), dtype=bool)
        out[1:] = tm[:-1]
        return out


def encode_sentence(variant: str, seq: ActionSequence, vocab: Vocabulary) -> Encoded:
    segmented, word_of = segment_actions(vocab, seq)
    term_positions = segmented.terminal_positions
    word_at_action = dict(zip(term_positions, word_of))
    if variant == "TG":
        dup, plan = tg_plan(segmented)
        ids = action_ids(vocab, dup.items)
        action_of = list(dup.origin_index)
        lexical = {
            p: word_at_action[k]
            for p, k in enumerate(action_of)
            if dup.items[p].kind is Kind.TERMINAL
        }
        return Encoded(variant, ids, plan, lexical, action_of, segmented, dup)
    if variant == "TGminusComp":
        ids = action_ids(vocab, segmented)
        return Encoded(variant, ids, causal_plan(len(ids)),
                       dict(word_at_action), list(range(len(ids))), segmented)
    if variant == "Vanilla":
        ids = [vocab.action_id(segmented[k]) for k in term_positions]
        lexical = {p: w for p, w in enumerate(word_of)}
        return Encoded(variant, ids, causal_plan(len(ids)), lexical,
                       list(term_positions), segmented)
    raise InvalidConfig(f"unknown variant {variant!r}")


def _mask_tensor(plan_or_mask, n: int) -> torch.Tensor:
    if isinstance(plan_or_mask, AttentionMaskPlan):
        m = plan_or_mask.matrix()
    elif plan_or_mask is None or (isinstance(plan_or_mask, str) and plan_or_mask == "causal"):
        m = np.tril(np.ones((n, n), dtype=bool))
    else:
        m = np.asarray(plan_or_mask, dtype=bool)
    if m.shape != (n, n):
        raise PlanMismatch(f"plan covers {m.shape[0]} positions, sequence has {n}")
    if np.triu(m, 1).any():
        raise PlanMismatch("plan lets a position attend to its future")
    return torch.from_numpy(m)


def forward(model: TransformerLM, ids: Sequence[int], plan=None):
    """Logits ``(L, V)`` and an :class:`AttentionRecord` for one sequence.

    ``plan`` is an :class:`AttentionMaskPlan`, a boolean matrix, or
    ``None``/``"causal"``.
    """
    n = len(ids)
    if n > model.cfg.max_len:
        raise LengthExceeded(f"length {n} > max_len {model.cfg.max_len}")
    mask = _mask_tensor(plan, n)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            t = torch.as_tensor([list(ids)], dtype=torch.long)
            logits, recs = model(t, mask[None], record=True)
    finally:
        model.train(was_training)
    weights = np.stack([r[0][0].numpy() for r in recs])
    norm_w = np.stack([r[1][0].numpy() for r in recs])
    return logits[0], AttentionRecord(weights.astype(np.float64), norm_w.astype(np.float64))


def loss(logits, targets, loss_mask, reduction: str = "mean"):
    """Negative log-likelihood over positions where ``loss_mask`` is False."""
    logits = torch.as_tensor(logits)
    targets = torch.as_tensor(targets, dtype=torch.long)
    masked = torch.as_tensor(loss_mask, dtype=torch.bool)
    keep = ~masked
    if not bool(keep.any()):
        raise AllMasked("every position is masked")
    nll = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1).clamp(min=0),
        reduction="none",
    ).reshape(targets.shape)
    total = nll[keep].sum()
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / keep.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def targets_for(ids: Sequence[int], plan: AttentionMaskPlan, pad_id: int = 0):
    """Next-item targets and the excluded-position mask for one sequence."""
    n = len(ids)
    targets = list(ids[1:]) + [pad_id]
    masked = [not t for t in plan.target_mask]
    assert len(masked) == n
    return targets, masked


def score_sequence(model: TransformerLM, ids: Sequence[int], plan=None) -> np.ndarray:
    """NLL (nats) of each item given its prefix, indexed by item.

    Item ``i`` is scored from row ``i - 1``. Unscored items (the first item and
    items following a loss-masked row) are ``nan``.
    """
    if plan is None or isinstance(plan, str):
        plan = causal_plan(len(ids))
    logits, _ = forward(model, ids, plan)
    logp = torch.log_softmax(logits.double(), dim=-1).numpy()
    out = np.full(len(ids), np.nan)
    tm = plan.target_mask
    for i in range(len(ids) - 1):
        if tm[i]:
            out[i + 1] = -logp[i, ids[i + 1]]
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    warmup: int | None = None
    init_lr_ratio: float = 2.5e-8 / 3.75e-5
    final_lr_ratio: float = 7.5e-8 / 3.75e-5
    eval_every: int = 100
    seed: int = 0
    grad_clip: float | None = 1.0


@dataclass
class TrainLog:
    seed: int
    step_loss: list[float] = field(default_factory=list)
    valid: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0
    best_valid: float = math.nan


def lr_at(step: int, hp: TrainConfig) -> float:
    """Linear warm-up from ``init`` to ``lr``, then cosine decay to ``final``."""
    warmup = hp.warmup if hp.warmup is not None else max(1, hp.steps // 20)
    lo, hi, end = hp.lr * hp.init_lr_ratio, hp.lr, hp.lr * hp.final_lr_ratio
    if step < warmup:
        return lo + (hi - lo) * step / warmup
    span = max(1, hp.steps - warmup)
    frac = min(1.0, (step - warmup) / span)
    return end + 0.5 * (hi - end) * (1 + math.cos(math.pi * frac))


def collate(batch: Sequence[Encoded], pad_id: int = 0):
    n = max(len(e) for e in batch)
    b = len(batch)
    ids = torch.full((b, n), pad_id, dtype=torch.long)
    targets = torch.full((b, n), pad_id, dtype=torch.long)
    masked = torch.ones((b, n), dtype=torch.bool)
    mask = torch.zeros((b, n, n), dtype=torch.bool)
    idx = torch.arange(n)
    mask[:, idx, idx] = True  # padded rows see only themselves
    for r, e in enumerate(batch):
        L = len(e)
        ids[r, :L] = torch.as_tensor(e.ids)
        t, m = targets_for(e.ids, e.plan, pad_id)
        targets[r, :L] = torch.as_tensor(t)
        masked[r, :L] = torch.as_tensor(m)
        mask[r, :L, :L] = torch.from_numpy(e.mask)
    return ids, targets, masked, mask


def evaluate(model: TransformerLM, data: Sequence[Encoded], batch_size: int = 64,
             pad_id: int = 0) -> float:
    """Mean NLL per scored item over ``data``."""
    was = model.training
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for s in range(0, len(data), batch_size):
            ids, targets, masked, mask = collate(data[s:s + batch_size], pad_id)
            logits, _ = model(ids, mask)
            total += float(loss(logits, targets, masked, "sum"))
            count += int((~masked).sum())
    model.train(was)
    return total / count


def train(model: TransformerLM, dataset: Sequence[Encoded], hyper: TrainConfig,
          valid: Sequence[Encoded] | None = None, pad_id: int = 0):
    """Adam with warm-up + cosine schedule; keeps the best validation checkpoint."""
    log = TrainLog(seed=hyper.seed)
    if hyper.steps <= 0:
        return model, log
    if not dataset:
        raise ValueError("empty training set")
    valid = list(valid) if valid else list(dataset)
    rng = np.random.default_rng(hyper.seed)
    torch.manual_seed(hyper.seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr_at(0, hyper),
                           betas=(hyper.beta1, hyper.beta2))
    best_state = copy.deepcopy(model.state_dict())
    log.best_valid = evaluate(model, valid, pad_id=pad_id)
    log.valid.append((0, log.best_valid))
    model.train()
    for step in range(1, hyper.steps + 1):
        for g in opt.param_groups:
            g["lr"] = lr_at(step - 1, hyper)
        pick = rng.choice(len(dataset), size=min(hyper.batch_size, len(dataset)),
                          replace=False)
        ids, targets, masked, mask = collate([dataset[i] for i in pick], pad_id)
        logits, _ = model(ids, mask)
        value = loss(logits, targets, masked, "mean")
        if not torch.isfinite(value):
            raise DivergedLoss(f"non-finite training loss at step {step}")
        opt.zero_grad()
        value.backward()
        if hyper.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), hyper.grad_clip)
        opt.step()
        log.step_loss.append(value.item())
        if step % hyper.eval_every == 0 or step == hyper.steps:
            v = evaluate(model, valid, pad_id=pad_id)
            if not math.isfinite(v):
                raise DivergedLoss(f"non-finite validation loss at step {step}")
            log.valid.append((step, v))
            if v < log.best_valid:
                log.best_valid, log.best_step = v, step
                best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model, log


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: TransformerLM, path, extra: dict | None = None) -> None:
    """Write ``magic | u32 header length | header JSON | float32 LE blocks``.

    The header lists parameter names and shapes in block order.
    """
    state = model.state_dict()
    names = list(state)
    header = {
        "version": 1,
        "config": asdict(model.cfg),
        "params": [[n, list(state[n].shape)] for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.writelines(state[n].detach().cpu().numpy().astype("<f4").tobytes() for n in names)


def load_checkpoint(path) -> tuple[TransformerLM, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size).decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        model = TransformerLM(cfg)
        state = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
