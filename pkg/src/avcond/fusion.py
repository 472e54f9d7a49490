"""Context fusion: enrich text embeddings with reference and phoneme tokens.

The four conditioning groups are concatenated into one sequence, processed
by a small stack of pre-norm transformer blocks whose attention uses the
anchored 3D rotary coordinates, and each block's first len(c_txt) outputs
are projected through a zero-initialized tap and accumulated onto the
original text embeddings. At fresh initialization the module is an exact
identity on c_txt.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import sqrt

import torch
from torch import Tensor, nn

from .errors import InvalidDim, ShapeMismatch
from .positions import PositionalAssignment, RopeConfig, group_coord_tensors, rope_rotate

DTYPE = torch.float64


@dataclass
class ConditionBundle:
    """Conditioning sequences plus their positional assignment.

    c_txt: (T_txt, d) text embeddings; c_v / c_a: image / audio reference
    latents stacked by subject id; c_tts: phoneme embeddings stacked by
    utterance. Group lengths must match the assignment's coordinate counts.
    """

    c_txt: Tensor
    c_v: Tensor
    c_a: Tensor
    c_tts: Tensor
    assignment: PositionalAssignment

    def validate(self) -> None:
        groups = {"c_txt": self.c_txt, "c_v": self.c_v, "c_a": self.c_a, "c_tts": self.c_tts}
        for name, t in groups.items():
            if t.ndim != 2:
                raise ShapeMismatch(f"{name} must be 2-D, got {tuple(t.shape)}")
        d = self.c_txt.shape[1]
        for name, t in groups.items():
            if t.shape[1] != d:
                raise ShapeMismatch(
                    f"{name} embedding dim {t.shape[1]} != c_txt dim {d}"
                )
        counts = self.assignment.group_counts()
        actual = (len(self.c_txt), len(self.c_v), len(self.c_a), len(self.c_tts))
        if counts != actual:
            raise ShapeMismatch(
                f"sequence lengths {actual} do not match assignment counts {counts}"
            )

    def with_text(self, c_txt: Tensor) -> "ConditionBundle":
        return replace(self, c_txt=c_txt)


class MultiAxisAttention(nn.Module):
    """Full attention over one sequence with per-head 3D rotary rotation."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.k = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.v = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.out = nn.Linear(d, d, bias=False, dtype=DTYPE)

    def forward(self, x: Tensor, coords: Tensor, rope: RopeConfig) -> Tensor:
        n, d = x.shape
        q = self.q(x).reshape(n, self.n_heads, self.head_dim)
        k = self.k(x).reshape(n, self.n_heads, self.head_dim)
        v = self.v(x).reshape(n, self.n_heads, self.head_dim)
        q = rope_rotate(q, coords, rope)
        k = rope_rotate(k, coords, rope)
        logits = torch.einsum("nhd,mhd->hnm", q, k) / sqrt(self.head_dim)
        weights = torch.softmax(logits, dim=-1)
        mixed = torch.einsum("hnm,mhd->nhd", weights, v).reshape(n, d)
        return self.out(mixed)


class FusionBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(d, dtype=DTYPE)
        self.attn = MultiAxisAttention(d, n_heads)
        self.norm2 = nn.LayerNorm(d, dtype=DTYPE)
        self.ffn = nn.Sequential(
            nn.Linear(d, ffn_mult * d, dtype=DTYPE),
            nn.GELU(),
            nn.Linear(ffn_mult * d, d, dtype=DTYPE),
        )
        self.tap = nn.Linear(d, d, bias=False, dtype=DTYPE)  # zero at init

    def forward(self, h: Tensor, coords: Tensor, rope: RopeConfig) -> Tensor:
        h = h + self.attn(self.norm1(h), coords, rope)
        h = h + self.ffn(self.norm2(h))
        return h


class ContextFusion(nn.Module):
    """The fusion stack parameters: L blocks over embedding dim d."""

    def __init__(self, d: int, n_layers: int, n_heads: int):
        super().__init__()
        self.d = d
        self.n_heads = n_heads
        self.blocks = nn.ModuleList(FusionBlock(d, n_heads) for _ in range(n_layers))


def seeded_uniform_init_(module: nn.Module, seed: int, scale: float) -> None:
    """Fill weight matrices from U(-scale, scale); zero biases; unit norms."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim >= 2:
                p.uniform_(-scale, scale, generator=gen)
            elif name.endswith("weight"):
                p.fill_(1.0)  # norm gains
            else:
                p.zero_()


def init_ocf_params(d: int, n_layers: int, seed: int, n_heads: int = 1) -> ContextFusion:
    """Deterministically initialized fusion stack; every tap starts at zero."""
    if d <= 0 or n_heads <= 0 or d % n_heads:
        raise InvalidDim(f"embedding dim {d} not divisible by {n_heads} heads")
    if n_layers < 1:
        raise InvalidDim(f"need at least one block, got {n_layers}")
    module = ContextFusion(d, n_layers, n_heads)
    seeded_uniform_init_(module, seed, 1.0 / sqrt(d))
    with torch.no_grad():
        for block in module.blocks:
            block.tap.weight.zero_()
    return module


def ocf_forward(
    bundle: ConditionBundle, params: ContextFusion, rope: RopeConfig
) -> Tensor:
    """Run the fusion stack; returns the enriched (T_txt, d) text embeddings.

    output = c_txt + sum over blocks of tap(first T_txt trunk outputs).
    """
    bundle.validate()
    if bundle.c_txt.shape[1] != params.d:
        raise ShapeMismatch(
            f"bundle dim {bundle.c_txt.shape[1]} != params dim {params.d}"
        )
    if rope.head_dim != params.d // params.n_heads:
        raise ShapeMismatch(
            f"rope head_dim {rope.head_dim} != per-head dim "
            f"{params.d // params.n_heads}"
        )
    c_txt = bundle.c_txt.to(DTYPE)
    n_txt = c_txt.shape[0]
    trunk = torch.cat(
        [c_txt, bundle.c_v.to(DTYPE), bundle.c_a.to(DTYPE), bundle.c_tts.to(DTYPE)]
    )
    coords = torch.cat(group_coord_tensors(bundle.assignment))
    if coords.shape[0] != trunk.shape[0]:
        raise ShapeMismatch(
            f"{trunk.shape[0]} tokens vs {coords.shape[0]} coordinates"
        )
    enriched = c_txt
    h = trunk
    for block in params.blocks:
        h = block(h, coords, rope)
        enriched = enriched + block.tap(h[:n_txt])
    return enriched
