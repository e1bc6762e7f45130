"""Recurrent cells, heads, embeddings and losses composed from autodiff primitives.

GRU convention used throughout::

    r  = sigmoid(W_r x + U_r h + b_r)
    z  = sigmoid(W_z x + U_z h + b_z)
    n  = tanh(W_n x + r * (U_n h) + b_n)
    h' = (1 - z) * h + z * n
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, init_params
from .errors import ConfigurationError, ContractError, DimensionError, VocabularyError

DURATION_BINS = 100
DURATION_FLOOR = 1e-3
LOG_VAR_BOUND = 10.0


class Module:
    """Anything that owns named parameters."""

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError


@dataclass
class GruCell(Module):
    W_r: Parameter
    W_z: Parameter
    W_n: Parameter
    U_r: Parameter
    U_z: Parameter
    U_n: Parameter
    b_r: Parameter
    b_z: Parameter
    b_n: Parameter

    @classmethod
    def create(cls, input_size: int, hidden_size: int, seed: int, prefix: str = "gru"):
        def p(name, shape, fan_in):
            full = f"{prefix}.{name}"
            return init_params(shape, ad.derive_seed(seed, full), fan_in=fan_in, name=full)

        H, I = hidden_size, input_size
        return cls(
            W_r=p("W_r", (H, I), H), W_z=p("W_z", (H, I), H), W_n=p("W_n", (H, I), H),
            U_r=p("U_r", (H, H), H), U_z=p("U_z", (H, H), H), U_n=p("U_n", (H, H), H),
            b_r=p("b_r", (H,), H), b_z=p("b_z", (H,), H), b_n=p("b_n", (H,), H),
        )

    @property
    def hidden_size(self) -> int:
        return self.U_r.value.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_r.value.shape[1]

    def parameters(self):
        return [self.W_r, self.W_z, self.W_n, self.U_r, self.U_z, self.U_n,
                self.b_r, self.b_z, self.b_n]


def gru_step(cell: GruCell, x, h) -> Node:
    x = x if isinstance(x, Node) else ad.constant(x)
    h = h if isinstance(h, Node) else ad.constant(h)
    if x.value.shape != (cell.input_size,):
        raise DimensionError(
            f"gru_step: input gate expects input of width {cell.input_size}, got {tuple(x.value.shape)}")
    if h.value.shape != (cell.hidden_size,):
        raise DimensionError(
            f"gru_step: update gate expects hidden of width {cell.hidden_size}, got {tuple(h.value.shape)}")
    r = ad.sigmoid(ad.add(ad.add(ad.matvec(cell.W_r, x), ad.matvec(cell.U_r, h)), cell.b_r))
    z = ad.sigmoid(ad.add(ad.add(ad.matvec(cell.W_z, x), ad.matvec(cell.U_z, h)), cell.b_z))
    n = ad.tanh(ad.add(ad.add(ad.matvec(cell.W_n, x), ad.hadamard(r, ad.matvec(cell.U_n, h))), cell.b_n))
    # (1 - z) * h + z * n == h + z * (n - h)
    return ad.add(h, ad.hadamard(z, ad.sub(n, h)))


@dataclass
class Linear(Module):
    weight: Parameter
    bias: Parameter

    @classmethod
    def create(cls, in_size: int, out_size: int, seed: int, name: str):
        w = init_params((out_size, in_size), ad.derive_seed(seed, f"{name}.weight"), name=f"{name}.weight")
        b = init_params((out_size,), ad.derive_seed(seed, f"{name}.bias"), fan_in=in_size, name=f"{name}.bias")
        return cls(w, b)

    def __call__(self, x) -> Node:
        return ad.add(ad.matvec(self.weight, x), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


@dataclass
class Mlp(Module):
    """Stack of linear layers with tanh between them (none after the last)."""

    layers: list[Linear]

    @classmethod
    def create(cls, sizes, seed: int, name: str):
        layers = [Linear.create(sizes[i], sizes[i + 1], seed, f"{name}.{i}") for i in range(len(sizes) - 1)]
        return cls(layers)

    def __call__(self, x) -> Node:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.tanh(x)
        return x

    @property
    def in_size(self) -> int:
        return self.layers[0].weight.value.shape[1]

    @property
    def out_size(self) -> int:
        return self.layers[-1].weight.value.shape[0]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class MlpHead(Module):
    """Maps a hidden state to ``label_out`` logits plus one duration unit."""

    mlp: Mlp
    label_out: int

    @classmethod
    def create(cls, hidden_size: int, label_out: int, seed: int, name: str, width: int = 16):
        return cls(Mlp.create([hidden_size, width, label_out + 1], seed, name), label_out)

    def parameters(self):
        return self.mlp.parameters()


def head_predict(head: MlpHead, h) -> tuple[Node, Node]:
    """Raw logits and a duration squashed into [DURATION_FLOOR, 1]."""
    if h.value.shape != (head.mlp.in_size,):
        raise DimensionError(f"head_predict: expected hidden of width {head.mlp.in_size}, got {tuple(h.value.shape)}")
    out = head.mlp(h)
    logits = ad.slice_(out, 0, head.label_out)
    duration = ad.clip(ad.sigmoid(ad.pick(out, head.label_out)), DURATION_FLOOR, 1.0)
    return logits, duration


@dataclass
class EmbeddingTable(Module):
    matrix: Parameter

    @classmethod
    def create(cls, vocab_size: int, embed_dim: int, seed: int, name: str, frozen: bool = False):
        # N(0, 1) rows, the usual embedding init
        rng = np.random.default_rng(ad.derive_seed(seed, name))
        return cls(Parameter(rng.standard_normal((vocab_size, embed_dim)), name=name, frozen=frozen))

    @property
    def vocab_size(self) -> int:
        return self.matrix.value.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.matrix.value.shape[1]

    def lookup(self, index: int) -> Node:
        if not 0 <= index < self.vocab_size:
            raise VocabularyError(f"index {index} outside vocabulary of size {self.vocab_size}")
        return ad.row(self.matrix, index)

    def parameters(self):
        return [self.matrix]


def duration_bin(accum: float, bins: int = DURATION_BINS) -> int:
    if not -1e-9 <= accum <= 1.0 + 1e-9:
        raise ContractError(f"accumulated duration {accum} outside [0, 1]")
    return min(max(int(np.floor(accum * bins)), 0), bins - 1)


def embed_inputs(label: int, accum_duration: float, label_table: EmbeddingTable,
                 duration_table: EmbeddingTable) -> Node:
    """concat(label embedding, embedding of the quantised accumulated duration)."""
    return ad.concat([label_table.lookup(label),
                      duration_table.lookup(duration_bin(accum_duration, duration_table.vocab_size))])


def nll_loss(logits: Node, target: int) -> Node:
    if not 0 <= target < logits.value.shape[0]:
        raise VocabularyError(f"target class {target} outside {logits.value.shape[0]} classes")
    return ad.neg(ad.pick(ad.log_softmax(logits), target))


def mse_loss(pred, target) -> Node:
    diff = ad.sub(pred, target if isinstance(target, Node) else ad.constant(target))
    return ad.hadamard(diff, diff)


@dataclass
class TaskWeights(Module):
    """Learned log-variances ``s`` for uncertainty-weighted multi-task loss."""

    log_vars: dict[str, Parameter]

    @classmethod
    def create(cls, tasks):
        return cls({t: Parameter(np.zeros(()), name=f"log_var.{t}") for t in tasks})

    def parameters(self):
        return [self.log_vars[k] for k in sorted(self.log_vars)]


def weighted_total_loss(per_task_losses: Mapping[str, Node], weights: TaskWeights) -> Node:
    """sum_task exp(-s) * L + s, with s clamped to [-10, 10]."""
    terms = []
    for task in sorted(per_task_losses):
        if task not in weights.log_vars:
            raise ConfigurationError(f"no learned weight for task {task!r}")
        s = ad.clip(weights.log_vars[task], -LOG_VAR_BOUND, LOG_VAR_BOUND)
        terms.append(ad.add(ad.hadamard(ad.exp(ad.neg(s)), per_task_losses[task]), s))
    return ad.add_all(terms)
