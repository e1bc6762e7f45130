"""Reference predictors: the under-segmenting dummy and three RNN baselines.

The RNN baselines work in absolute task time (fraction of the whole video) at
every level and are trained with teacher forcing on whole videos.  At
inference the segment straddling t* is restarted without a refresher: the
level head reads the last hidden state, predicts the full duration of that
segment, and whatever exceeds the observed part is its remaining length.
"""
from __future__ import annotations

import enum

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigurationError, ContractError
from .hierarchy import (BOUNDARY_TOL, COARSE, FINE, ActivityHierarchy, ObservationSplit,
                        absolute_intervals, observed_intervals)
from .model import Forecast, HeraConfig, HeraModel, Losses, _snap_end
from .nn import (DURATION_BINS, DURATION_FLOOR, EmbeddingTable, GruCell, MlpHead, TaskWeights,
                 embed_inputs, gru_step, head_predict, mse_loss, nll_loss, weighted_total_loss)


class BaselineKind(enum.Enum):
    Dummy = "dummy"
    IndependentSingleRnn = "ind-rnn"
    JointSingleRnn = "joint-rnn"
    SyncedPairRnn = "synced-rnn"


MODEL_KINDS = ("hera",) + tuple(k.value for k in BaselineKind)


def _zeros(n):
    return ad.constant(np.zeros(n))


def _split_observed(split: ObservationSplit, level: int):
    """(finished intervals, interrupted piece or None) at one level."""
    iv = observed_intervals(split, level)
    if split.partial[level] is not None:
        return iv[:-1], iv[-1]
    return iv, None


def _clamp_step(acc, d, steps, cap):
    truncated = False
    if steps >= cap and acc + d < 1.0 - DURATION_FLOOR:
        truncated = True
        d = 1.0 - acc
    if acc + d > 1.0 - DURATION_FLOOR:
        d = 1.0 - acc
    return d, truncated


def _restart_end(start, t_star, predicted_full):
    """End of the interrupted segment from a full-duration estimate."""
    end = max(start + predicted_full, t_star + DURATION_FLOOR)
    if end > 1.0 - DURATION_FLOOR:
        end = 1.0
    return end


def _merge_runs(pieces):
    """Merge consecutive pieces with equal labels: [(label, s, e)] -> [(label, s, e)]."""
    out = []
    for label, s, e in pieces:
        if out and out[-1][0] == label:
            out[-1] = (label, out[-1][1], e)
        else:
            out.append((label, s, e))
    return out


# ---------------------------------------------------------------------------
# dummy

def dummy_predict(split: ObservationSplit) -> Forecast:
    """The interrupted (else the last observed) label runs to the end of the task."""
    out = []
    for level in (COARSE, FINE):
        iv = observed_intervals(split, level)
        if not iv:
            raise ContractError("dummy_predict: empty observation")
        out.append([(iv[-1][0], split.t_star, 1.0)])
    return Forecast(out[0], out[1], split.t_star)


class DummyModel:
    kind = BaselineKind.Dummy.value
    trainable = False

    def __init__(self, n_coarse: int, n_fine: int, config: HeraConfig | None = None, vocab=None):
        self.n_coarse, self.n_fine = n_coarse, n_fine
        self.config = config or HeraConfig()
        self.vocab = vocab

    def parameters(self):
        return []

    def named_parameters(self):
        return {}

    def predict(self, split: ObservationSplit) -> Forecast:
        return dummy_predict(split)


# ---------------------------------------------------------------------------
# shared training protocol for the recurrent baselines

class _RecurrentBaseline:
    trainable = True
    tasks: tuple[str, ...] = ()

    def __init__(self, n_coarse: int, n_fine: int, config: HeraConfig | None = None, vocab=None):
        self.config = config or HeraConfig()
        self.n_coarse, self.n_fine = n_coarse, n_fine
        self.vocab = vocab
        self.task_weights = TaskWeights.create(self.tasks)

    def modules(self):
        raise NotImplementedError

    def parameters(self) -> list[ad.Parameter]:
        return [p for m in self.modules() for p in m.parameters()]

    def named_parameters(self) -> dict[str, ad.Parameter]:
        return {p.name: p for p in self.parameters()}

    def training_examples(self, h: ActivityHierarchy, rng=None):
        return [h]

    def validation_examples(self, h: ActivityHierarchy):
        return [h]

    def compute_loss(self, h: ActivityHierarchy):
        raise NotImplementedError

    def loss(self, example, rng=None):
        total, per_task = self.compute_loss(example)
        return total, sum(node.item() for node in per_task.values())

    def _level_tables(self, n, prefix):
        cfg = self.config
        labels = EmbeddingTable.create(n, cfg.embed_dim, cfg.seed, f"{prefix}.emb.label", cfg.freeze_embeddings)
        durs = EmbeddingTable.create(DURATION_BINS, cfg.embed_dim, cfg.seed, f"{prefix}.emb.duration",
                                     cfg.freeze_embeddings)
        return labels, durs


def _fine_with_parents(h: ActivityHierarchy):
    """Fine intervals in absolute time, each with its parent's label and start."""
    coarse = absolute_intervals(h, COARSE)
    out = []
    for (label, s, e), p in zip(absolute_intervals(h, FINE), h.fine.parent_index):
        out.append((label, s, e, coarse[p][0], coarse[p][1]))
    return out


def _observed_fine_with_parents(split: ObservationSplit):
    coarse = observed_intervals(split, COARSE)
    fine = observed_intervals(split, FINE)
    parents = list(split.observed.fine.parent_index)
    if split.partial[FINE] is not None:
        parents.append(split.partial[FINE].parent)
    return [(l, s, e, coarse[p][0], coarse[p][1]) for (l, s, e), p in zip(fine, parents)]


# ---------------------------------------------------------------------------
# independent single-level RNNs

class LevelRnn:
    """One GRU + head over a single level's (label, accumulated time) inputs."""

    def __init__(self, n_labels: int, config: HeraConfig, prefix: str):
        cfg = config
        E, H = cfg.embed_dim, cfg.hidden_size
        self.hidden_size = H
        self.labels = EmbeddingTable.create(n_labels, E, cfg.seed, f"{prefix}.emb.label", cfg.freeze_embeddings)
        self.durations = EmbeddingTable.create(DURATION_BINS, E, cfg.seed, f"{prefix}.emb.duration",
                                               cfg.freeze_embeddings)
        self.gru = GruCell.create(2 * E, H, cfg.seed, f"{prefix}.gru")
        self.head = MlpHead.create(H, n_labels, cfg.seed, f"{prefix}.head", cfg.mlp_width)

    def parameters(self):
        return (self.labels.parameters() + self.durations.parameters() + self.gru.parameters()
                + self.head.parameters())

    def step(self, label, accum, h):
        return gru_step(self.gru, embed_inputs(label, min(accum, 1.0), self.labels, self.durations), h)

    def sequence_loss(self, intervals, losses: Losses, prefix: str):
        h = _zeros(self.hidden_size)
        for label, s, e in intervals:
            logits, dur = head_predict(self.head, h)
            losses.add(f"{prefix}.label", nll_loss(logits, label))
            losses.add(f"{prefix}.duration", mse_loss(dur, e - s))
            h = self.step(label, e, h)

    def forecast(self, finished, partial, t_star, cap):
        h = _zeros(self.hidden_size)
        for label, _, e in finished:
            h = self.step(label, e, h)
        out = []
        acc = t_star
        if partial is not None:
            label, s, _ = partial
            _, dur = head_predict(self.head, h)
            acc = _restart_end(s, t_star, dur.item())
            out.append((label, t_star, acc))
            h = self.step(label, acc, h)
        steps = 0
        truncated = False
        while acc < 1.0 - BOUNDARY_TOL:
            logits, dur = head_predict(self.head, h)
            label = int(np.argmax(logits.value))
            steps += 1
            d, trunc = _clamp_step(acc, dur.item(), steps, cap)
            truncated |= trunc
            out.append((label, acc, acc + d))
            acc += d
            h = self.step(label, acc, h)
        return out, truncated, steps


class IndependentSingleRnn(_RecurrentBaseline):
    kind = BaselineKind.IndependentSingleRnn.value
    tasks = ("coarse.duration", "coarse.label", "fine.duration", "fine.label")

    def __init__(self, n_coarse, n_fine, config=None, vocab=None):
        super().__init__(n_coarse, n_fine, config, vocab)
        self.coarse_rnn = LevelRnn(n_coarse, self.config, "ind.coarse")
        self.fine_rnn = LevelRnn(n_fine, self.config, "ind.fine")

    def modules(self):
        return [self.coarse_rnn, self.fine_rnn, self.task_weights]

    def compute_loss(self, h: ActivityHierarchy):
        losses = Losses()
        self.coarse_rnn.sequence_loss(absolute_intervals(h, COARSE), losses, "coarse")
        self.fine_rnn.sequence_loss(absolute_intervals(h, FINE), losses, "fine")
        per_task = losses.averaged()
        return weighted_total_loss(per_task, self.task_weights), per_task

    def predict(self, split: ObservationSplit) -> Forecast:
        cap = self.config.max_rollout_steps_per_level
        c_fin, c_part = _split_observed(split, COARSE)
        f_fin, f_part = _split_observed(split, FINE)
        coarse, t1, n_c = self.coarse_rnn.forecast(c_fin, c_part, split.t_star, cap)
        fine, t2, n_f = self.fine_rnn.forecast(f_fin, f_part, split.t_star, cap)
        _snap_end(coarse)
        _snap_end(fine)
        return Forecast(coarse, fine, split.t_star, truncated=t1 or t2, steps=(n_c, n_f))


# ---------------------------------------------------------------------------
# synchronous baselines on the fine clock

class _FineClockBaseline(_RecurrentBaseline):
    """Shared teacher forcing and roll-out for models stepping once per fine action."""

    tasks = ("coarse.label", "fine.duration", "fine.label")

    def _initial(self):
        raise NotImplementedError

    def _advance(self, state, coarse_label, coarse_start, fine_label, fine_end):
        raise NotImplementedError

    def _heads(self, state) -> tuple[Node, Node, Node]:
        """(coarse logits, fine logits, fine absolute duration) for the next step."""
        raise NotImplementedError

    def compute_loss(self, h: ActivityHierarchy):
        losses = Losses()
        state = self._initial()
        for label, s, e, c_label, c_start in _fine_with_parents(h):
            c_logits, f_logits, dur = self._heads(state)
            losses.add("coarse.label", nll_loss(c_logits, c_label))
            losses.add("fine.label", nll_loss(f_logits, label))
            losses.add("fine.duration", mse_loss(dur, e - s))
            state = self._advance(state, c_label, c_start, label, e)
        per_task = losses.averaged()
        return weighted_total_loss(per_task, self.task_weights), per_task

    def predict(self, split: ObservationSplit) -> Forecast:
        cap = self.config.max_rollout_steps_per_level
        t_star = split.t_star
        observed = _observed_fine_with_parents(split)
        fp = split.partial[FINE]
        finished = observed[:-1] if fp is not None else observed
        state = self._initial()
        c_label, c_start = None, 0.0
        for label, _, e, c_label, c_start in finished:
            state = self._advance(state, c_label, c_start, label, e)
        pieces = []  # (coarse label, fine label, start, end)
        acc = t_star
        if fp is not None:
            label, s, _, c_label, c_start = observed[-1]
            _, _, dur = self._heads(state)
            acc = _restart_end(s, t_star, dur.item())
            pieces.append((c_label, label, t_star, acc))
            state = self._advance(state, c_label, c_start, label, acc)
        steps = 0
        truncated = False
        while acc < 1.0 - BOUNDARY_TOL:
            c_logits, f_logits, dur = self._heads(state)
            new_c = int(np.argmax(c_logits.value))
            label = int(np.argmax(f_logits.value))
            steps += 1
            d, trunc = _clamp_step(acc, dur.item(), steps, cap)
            truncated |= trunc
            if new_c != c_label:
                c_label, c_start = new_c, acc
            pieces.append((c_label, label, acc, acc + d))
            acc += d
            state = self._advance(state, c_label, c_start, label, acc)
        coarse = _merge_runs([(c, s, e) for c, _, s, e in pieces])
        fine = [(f, s, e) for _, f, s, e in pieces]
        _snap_end(coarse)
        _snap_end(fine)
        return Forecast(coarse, fine, t_star, truncated=truncated, steps=(len(coarse), steps))


class JointSingleRnn(_FineClockBaseline):
    """One GRU over concatenated coarse and fine inputs, one joint head.

    The coarse input of a fine step is the parent's label with the parent's
    start time, so it is available for the unfinished parent at inference.
    """

    kind = BaselineKind.JointSingleRnn.value

    def __init__(self, n_coarse, n_fine, config=None, vocab=None):
        super().__init__(n_coarse, n_fine, config, vocab)
        cfg = self.config
        E, H = cfg.embed_dim, cfg.hidden_size
        self.coarse_labels, self.coarse_durations = self._level_tables(n_coarse, "joint.coarse")
        self.fine_labels, self.fine_durations = self._level_tables(n_fine, "joint.fine")
        self.gru = GruCell.create(4 * E, H, cfg.seed, "joint.gru")
        self.head = MlpHead.create(H, n_coarse + n_fine, cfg.seed, "joint.head", cfg.mlp_width)

    def modules(self):
        return [self.coarse_labels, self.coarse_durations, self.fine_labels, self.fine_durations,
                self.gru, self.head, self.task_weights]

    @property
    def input_width(self) -> int:
        return self.gru.input_size

    def _initial(self):
        return _zeros(self.config.hidden_size)

    def _advance(self, h, coarse_label, coarse_start, fine_label, fine_end):
        x = ad.concat([embed_inputs(coarse_label, min(coarse_start, 1.0), self.coarse_labels, self.coarse_durations),
                       embed_inputs(fine_label, min(fine_end, 1.0), self.fine_labels, self.fine_durations)])
        return gru_step(self.gru, x, h)

    def _heads(self, h):
        logits, dur = head_predict(self.head, h)
        return ad.slice_(logits, 0, self.n_coarse), ad.slice_(logits, self.n_coarse, self.n_coarse + self.n_fine), dur


class SyncedPairRnn(_FineClockBaseline):
    """Coarse and fine GRUs on the fine clock; the coarse state feeds the fine
    input every step, nothing flows upward."""

    kind = BaselineKind.SyncedPairRnn.value

    def __init__(self, n_coarse, n_fine, config=None, vocab=None):
        super().__init__(n_coarse, n_fine, config, vocab)
        cfg = self.config
        E, H = cfg.embed_dim, cfg.hidden_size
        self.coarse_labels, self.coarse_durations = self._level_tables(n_coarse, "synced.coarse")
        self.fine_labels, self.fine_durations = self._level_tables(n_fine, "synced.fine")
        self.coarse_gru = GruCell.create(2 * E, H, cfg.seed, "synced.coarse.gru")
        self.fine_gru = GruCell.create(2 * E + H, H, cfg.seed, "synced.fine.gru")
        self.coarse_head = MlpHead.create(H, n_coarse, cfg.seed, "synced.coarse.head", cfg.mlp_width)
        self.fine_head = MlpHead.create(H, n_fine, cfg.seed, "synced.fine.head", cfg.mlp_width)

    def modules(self):
        return [self.coarse_labels, self.coarse_durations, self.fine_labels, self.fine_durations,
                self.coarse_gru, self.fine_gru, self.coarse_head, self.fine_head, self.task_weights]

    def _initial(self):
        H = self.config.hidden_size
        return _zeros(H), _zeros(H)

    def _advance(self, state, coarse_label, coarse_start, fine_label, fine_end):
        h_c, h_f = state
        x_c = embed_inputs(coarse_label, min(coarse_start, 1.0), self.coarse_labels, self.coarse_durations)
        h_c = gru_step(self.coarse_gru, x_c, h_c)
        msg = h_c if self.config.cross_level_messages else _zeros(self.config.hidden_size)
        x_f = ad.concat([embed_inputs(fine_label, min(fine_end, 1.0), self.fine_labels, self.fine_durations), msg])
        return h_c, gru_step(self.fine_gru, x_f, h_f)

    def _heads(self, state):
        h_c, h_f = state
        c_logits, _ = head_predict(self.coarse_head, h_c)
        f_logits, dur = head_predict(self.fine_head, h_f)
        return c_logits, f_logits, dur


# ---------------------------------------------------------------------------
# dispatch

def build_model(kind: str, n_coarse: int, n_fine: int, config: HeraConfig | None = None, vocab=None):
    """Model of the named kind; ``kind`` is one of ``MODEL_KINDS``."""
    if kind == "hera":
        return HeraModel(n_coarse, n_fine, config, vocab)
    try:
        which = BaselineKind(kind)
    except ValueError:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}") from None
    match which:
        case BaselineKind.Dummy:
            return DummyModel(n_coarse, n_fine, config, vocab)
        case BaselineKind.IndependentSingleRnn:
            return IndependentSingleRnn(n_coarse, n_fine, config, vocab)
        case BaselineKind.JointSingleRnn:
            return JointSingleRnn(n_coarse, n_fine, config, vocab)
        case BaselineKind.SyncedPairRnn:
            return SyncedPairRnn(n_coarse, n_fine, config, vocab)
    raise AssertionError(f"unhandled baseline {which}")
