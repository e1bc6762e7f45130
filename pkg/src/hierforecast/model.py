"""Hierarchical encoder-refresher-anticipator for two-level activity forecasting.

Schedule, per observed coarse activity ``i``:

1. downward message from the coarse state before ``i`` (plus the embedding of
   ``i``'s label when ``label_in_downward_msg`` is on);
2. the fine GRU takes one start-of-activity step, then one step per child;
3. the upward message is the fine state after the last child;
4. the coarse GRU steps once on ``(label_i, a_i)`` and the upward message.

The interrupted coarse activity only gets steps 1-2 over its finished
children; the refresher then turns the encoder states plus the observed
partial lengths into refreshed states and remaining-length estimates.

Refreshed-state convention: the refreshed fine state stands for the state
*after* the interrupted fine action, so the fine head reads it directly to
predict the next child.  The refreshed coarse state stands for the state
*before* the interrupted coarse activity; the coarse GRU consumes that
activity once its fine roll-out has produced an upward message.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, VocabularyError
from .hierarchy import (BOUNDARY_TOL, COARSE, FINE, ActivityHierarchy, ObservationSplit,
                        intervals_to_hierarchy, observed_intervals, split_at)
from .nn import (DURATION_BINS, DURATION_FLOOR, EmbeddingTable, GruCell, Mlp, MlpHead, TaskWeights,
                 embed_inputs, gru_step, head_predict, mse_loss, nll_loss, weighted_total_loss)

LEVEL_NAMES = ("coarse", "fine")


@dataclass
class HeraConfig:
    hidden_size: int = 16
    embed_dim: int = 16
    mlp_width: int = 16
    lr: float = 1e-3
    batch_size: int = 512
    epochs: int = 20
    encoder_loss_enabled: bool = True
    label_in_downward_msg: bool = True
    cross_level_messages: bool = True
    max_rollout_steps_per_level: int = 50
    freeze_embeddings: bool = False
    scheduled_sampling: float = 0.0
    splits_per_video: int = 1
    split_range: tuple[float, float] = (0.1, 0.9)
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_size", "embed_dim", "mlp_width", "batch_size", "epochs",
                     "max_rollout_steps_per_level", "splits_per_video"):
            if getattr(self, name) <= 0:
                raise ContractError(f"HeraConfig.{name} must be positive")
        if self.lr <= 0:
            raise ContractError("HeraConfig.lr must be positive")
        self.split_range = tuple(self.split_range)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_range"] = list(self.split_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeraConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class HierState:
    h_c: Node
    h_f: Node
    a_c: float = 0.0
    a_f: float = 0.0
    last_upward: Node | None = None
    pending_downward: Node | None = None
    schedule: list[str] = field(default_factory=list)


@dataclass
class Refreshed:
    state: HierState
    remaining_coarse: Node | None
    remaining_fine: Node | None
    amended_coarse: float
    amended_fine: float


@dataclass
class Forecast:
    """Predicted future as absolute-fraction intervals covering [t*, 1].

    When a segment was interrupted at a level, the first interval of that
    level continues it.
    """

    coarse: list[tuple[int, float, float]]
    fine: list[tuple[int, float, float]]
    t_star: float
    remaining: tuple[float, float] = (0.0, 0.0)
    truncated: bool = False
    steps: tuple[int, int] = (0, 0)


def _zeros(n):
    return ad.constant(np.zeros(n))


class Losses:
    """Per-task lists of loss terms, averaged per task on collection."""

    def __init__(self):
        self.terms: dict[str, list[Node]] = {}

    def add(self, task, node):
        self.terms.setdefault(task, []).append(node)

    def label_and_duration(self, stage, level, logits, duration, target):
        self.add(f"{stage}.{LEVEL_NAMES[level]}.label", nll_loss(logits, target.label))
        self.add(f"{stage}.{LEVEL_NAMES[level]}.duration", mse_loss(duration, target.rel_duration))

    def averaged(self) -> dict[str, Node]:
        return {t: ad.scale(ad.add_all(v), 1.0 / len(v)) for t, v in self.terms.items() if v}


def task_names(encoder_loss: bool = True) -> list[str]:
    tasks = []
    for level in LEVEL_NAMES:
        stages = ("enc", "ant") if encoder_loss else ("ant",)
        for stage in stages:
            tasks += [f"{stage}.{level}.label", f"{stage}.{level}.duration"]
        tasks.append(f"ref.{level}.duration")
    return sorted(tasks)


class HeraModel:
    kind = "hera"
    trainable = True

    def __init__(self, n_coarse: int, n_fine: int, config: HeraConfig | None = None,
                 vocab: tuple[list[str], list[str]] | None = None):
        self.config = config or HeraConfig()
        self.vocab = vocab
        cfg = self.config
        H, E, W, seed = cfg.hidden_size, cfg.embed_dim, cfg.mlp_width, cfg.seed
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.bos = n_fine
        frozen = cfg.freeze_embeddings
        self.coarse_labels = EmbeddingTable.create(n_coarse, E, seed, "emb.coarse", frozen)
        self.fine_labels = EmbeddingTable.create(n_fine + 1, E, seed, "emb.fine", frozen)
        self.durations = EmbeddingTable.create(DURATION_BINS, E, seed, "emb.duration", frozen)
        self.msg_width = H + (E if cfg.label_in_downward_msg else 0)
        self.coarse_gru = GruCell.create(2 * E + H, H, seed, "gru.coarse")
        self.fine_gru = GruCell.create(2 * E + self.msg_width, H, seed, "gru.fine")
        self.coarse_head = MlpHead.create(H, n_coarse, seed, "head.coarse", W)
        self.fine_head = MlpHead.create(H, n_fine, seed, "head.fine", W)
        self.refresh_coarse = Mlp.create([H + E + 2, W, H], seed, "refresh.coarse")
        self.remain_coarse = Mlp.create([H, W, 1], seed, "remain.coarse")
        self.refresh_fine = Mlp.create([H + E + 2 + self.msg_width, W, H], seed, "refresh.fine")
        self.remain_fine = Mlp.create([H, W, 1], seed, "remain.fine")
        self.task_weights = TaskWeights.create(task_names(True))

    # -- parameters ---------------------------------------------------------
    def modules(self):
        return [self.coarse_labels, self.fine_labels, self.durations, self.coarse_gru, self.fine_gru,
                self.coarse_head, self.fine_head, self.refresh_coarse, self.remain_coarse,
                self.refresh_fine, self.remain_fine, self.task_weights]

    def parameters(self) -> list[ad.Parameter]:
        return [p for m in self.modules() for p in m.parameters()]

    def named_parameters(self) -> dict[str, ad.Parameter]:
        return {p.name: p for p in self.parameters()}

    # -- building blocks ----------------------------------------------------
    def _down(self, h_c: Node, coarse_label: int) -> Node:
        if not self.config.cross_level_messages:
            return _zeros(self.msg_width)
        if self.config.label_in_downward_msg:
            return ad.concat([h_c, self.coarse_labels.lookup(coarse_label)])
        return h_c

    def _up(self, h_f: Node) -> Node:
        if not self.config.cross_level_messages:
            return _zeros(self.config.hidden_size)
        return h_f

    def _fine_step(self, label, accum, down, h_f, state=None):
        if state is not None:
            state.schedule.append("fine" if label != self.bos else "start")
        x = ad.concat([embed_inputs(label, min(accum, 1.0), self.fine_labels, self.durations), down])
        return gru_step(self.fine_gru, x, h_f)

    def _coarse_step(self, label, accum, up, h_c, state=None):
        if state is not None:
            state.schedule.append("coarse")
        x = ad.concat([embed_inputs(label, min(accum, 1.0), self.coarse_labels, self.durations), up])
        return gru_step(self.coarse_gru, x, h_c)

    def _check_labels(self, split: ObservationSplit):
        for level, limit in ((COARSE, self.n_coarse), (FINE, self.n_fine)):
            labels = [s.label for s in split.observed.levels[level].segments]
            labels += [s.label for s in split.future.levels[level].segments]
            if split.partial[level] is not None:
                labels.append(split.partial[level].label)
            for x in labels:
                if not 0 <= x < limit:
                    raise VocabularyError(f"{LEVEL_NAMES[level]} label {x} outside vocabulary of size {limit}")

    # -- encoder ------------------------------------------------------------
    def encode(self, split: ObservationSplit, losses: Losses | None = None) -> HierState:
        obs = split.observed
        if not obs.coarse.segments and split.partial[COARSE] is None:
            raise ContractError("encode: empty observation")
        H = self.config.hidden_size
        state = HierState(_zeros(H), _zeros(H))
        collect = losses is not None and self.config.encoder_loss_enabled
        kids: dict[int, list] = {}
        for seg, p in zip(obs.fine.segments, obs.fine.parent_index):
            kids.setdefault(p, []).append(seg)
        h_c, h_f = state.h_c, state.h_f
        acc_c = 0.0
        for i, cseg in enumerate(obs.coarse.segments):
            if collect:
                logits, dur = head_predict(self.coarse_head, h_c)
                losses.label_and_duration("enc", COARSE, logits, dur, cseg)
            down = self._down(h_c, cseg.label)
            h_f = self._encode_children(kids.get(i, []), down, h_f, state, losses if collect else None)
            acc_c += cseg.rel_duration
            h_c = self._coarse_step(cseg.label, acc_c, self._up(h_f), h_c, state)
        state.a_c = acc_c
        state.a_f = 0.0
        cp = split.partial[COARSE]
        if cp is not None:
            down = self._down(h_c, cp.label)
            h_f = self._encode_children(kids.get(cp.index, []), down, h_f, state, losses if collect else None)
            state.pending_downward = down
            state.a_f = split.observed_accumulated[FINE]
        state.h_c, state.h_f = h_c, h_f
        state.last_upward = h_f
        return state

    def _encode_children(self, children, down, h_f, state, losses):
        h_f = self._fine_step(self.bos, 0.0, down, h_f, state)
        acc = 0.0
        for seg in children:
            if losses is not None:
                logits, dur = head_predict(self.fine_head, h_f)
                losses.label_and_duration("enc", FINE, logits, dur, seg)
            acc += seg.rel_duration
            h_f = self._fine_step(seg.label, acc, down, h_f, state)
        return h_f

    # -- refresher ----------------------------------------------------------
    def refresh(self, state: HierState, split: ObservationSplit) -> Refreshed:
        cp, fp = split.partial
        h_c, h_f = state.h_c, state.h_f
        r_c = r_f = None
        amended_c = amended_f = 0.0
        down = state.pending_downward
        if cp is not None:
            extra = ad.constant([cp.accumulated, cp.partial])
            x = ad.concat([h_c, self.coarse_labels.lookup(cp.label), extra])
            h_c = ad.tanh(self.refresh_coarse(x))
            r_c = ad.scale(ad.sigmoid(ad.pick(self.remain_coarse(h_c), 0)), 1.0 - cp.accumulated)
            amended_c = cp.partial + r_c.item()
            down = self._down(h_c, cp.label)
        if fp is not None:
            if cp is None:
                raise ContractError("refresh: fine segment interrupted inside a finished coarse activity")
            extra = ad.constant([fp.accumulated, fp.partial])
            x = ad.concat([h_f, self.fine_labels.lookup(fp.label), extra, down])
            h_f = ad.tanh(self.refresh_fine(x))
            r_f = ad.scale(ad.sigmoid(ad.pick(self.remain_fine(h_f), 0)), 1.0 - fp.accumulated)
            amended_f = fp.partial + r_f.item()
        new_state = HierState(h_c, h_f, state.a_c, state.a_f, state.last_upward, down, state.schedule)
        return Refreshed(new_state, r_c, r_f, amended_c, amended_f)

    # -- training loss ------------------------------------------------------
    def compute_loss(self, split: ObservationSplit, rng: np.random.Generator | None = None):
        """Teacher-forced loss; returns ``(weighted total, per-task losses)``."""
        if not split.has_truth:
            raise ContractError("compute_loss needs the ground-truth future")
        self._check_labels(split)
        losses = Losses()
        state = self.encode(split, losses)
        ref = self.refresh(state, split)
        cp, fp = split.partial
        if ref.remaining_coarse is not None:
            losses.add("ref.coarse.duration", mse_loss(ref.remaining_coarse, split.remaining(COARSE)))
        if ref.remaining_fine is not None:
            losses.add("ref.fine.duration", mse_loss(ref.remaining_fine, split.remaining(FINE)))
        self._teacher_forced_future(split, ref, losses, rng)
        per_task = losses.averaged()
        return weighted_total_loss(per_task, self.task_weights), per_task

    def _feed_label(self, truth: int, logits: Node, rng) -> int:
        p = self.config.scheduled_sampling
        if p > 0 and rng is not None and rng.random() < p:
            return int(np.argmax(logits.value))
        return truth

    def _teacher_forced_future(self, split, ref: Refreshed, losses: Losses, rng):
        fut = split.future
        cp, fp = split.partial
        st = ref.state
        f_kids: dict[int, list] = {}
        for seg, p in zip(fut.fine.segments, fut.fine.parent_index):
            f_kids.setdefault(p, []).append(seg)
        h_c, h_f = st.h_c, st.h_f
        acc_c = split.observed_accumulated[COARSE]
        coarse_future = list(enumerate(fut.coarse.segments))
        first_index = cp.index if cp is not None else len(split.observed.coarse.segments)
        if cp is not None:
            kids = f_kids.get(cp.index, [])
            acc_f = split.observed_accumulated[FINE]
            if fp is not None:
                acc_f += kids[0].rel_duration
                kids = kids[1:]
            down = st.pending_downward
            for seg in kids:
                logits, dur = head_predict(self.fine_head, h_f)
                losses.label_and_duration("ant", FINE, logits, dur, seg)
                acc_f += seg.rel_duration
                h_f = self._fine_step(self._feed_label(seg.label, logits, rng), acc_f, down, h_f)
            acc_c += fut.coarse.segments[0].rel_duration
            h_c = self._coarse_step(cp.label, acc_c, self._up(h_f), h_c)
            coarse_future = coarse_future[1:]
        for k, cseg in coarse_future:
            logits, dur = head_predict(self.coarse_head, h_c)
            losses.label_and_duration("ant", COARSE, logits, dur, cseg)
            label_c = self._feed_label(cseg.label, logits, rng)
            down = self._down(h_c, label_c)
            h_f = self._fine_step(self.bos, 0.0, down, h_f)
            acc_f = 0.0
            for seg in f_kids.get(first_index + k, []):
                logits_f, dur_f = head_predict(self.fine_head, h_f)
                losses.label_and_duration("ant", FINE, logits_f, dur_f, seg)
                acc_f += seg.rel_duration
                h_f = self._fine_step(self._feed_label(seg.label, logits_f, rng), acc_f, down, h_f)
            acc_c += cseg.rel_duration
            h_c = self._coarse_step(label_c, acc_c, self._up(h_f), h_c)

    # -- inference ----------------------------------------------------------
    def _roll_children(self, h_f, down, acc, cap):
        """Greedy fine roll-out until the parent is filled; returns pieces and state."""
        pieces = []
        truncated = False
        steps = 0
        while acc < 1.0 - BOUNDARY_TOL:
            logits, dur = head_predict(self.fine_head, h_f)
            label = int(np.argmax(logits.value))
            d = dur.item()
            steps += 1
            if steps >= cap and acc + d < 1.0 - DURATION_FLOOR:
                truncated = True
                d = 1.0 - acc
            if acc + d > 1.0 - DURATION_FLOOR:
                d = 1.0 - acc
            pieces.append((label, d))
            acc += d
            h_f = self._fine_step(label, acc, down, h_f)
        return pieces, h_f, truncated, steps

    def anticipate(self, ref: Refreshed, split: ObservationSplit) -> Forecast:
        cfg = self.config
        cap = cfg.max_rollout_steps_per_level
        cp, fp = split.partial
        st = ref.state
        h_c, h_f = st.h_c, st.h_f
        t_star = split.t_star
        coarse_out, fine_out = [], []
        truncated = False
        n_c = n_f = 0
        r_c = r_f = 0.0
        acc_c = split.observed_accumulated[COARSE]
        cursor = t_star
        if cp is not None:
            r_c = ref.remaining_coarse.item()
            if cp.accumulated + r_c > 1.0 - DURATION_FLOOR:
                r_c = 1.0 - cp.accumulated
            acc_c = cp.accumulated + r_c
            pieces = []
            if fp is not None:
                r_f = ref.remaining_fine.item()
                if fp.accumulated + r_f > 1.0 - DURATION_FLOOR:
                    r_f = 1.0 - fp.accumulated
                pieces.append((fp.label, r_f))
                acc_f = fp.accumulated + r_f
                base = fp.accumulated
            else:
                acc_f = split.observed_accumulated[FINE]
                base = acc_f
            more, h_f, trunc, steps = self._roll_children(h_f, st.pending_downward, acc_f, cap)
            pieces += more
            truncated |= trunc
            n_f += steps
            if pieces and r_c > 0:
                scale = r_c / (1.0 - base)
                t = t_star
                for label, d in pieces:
                    fine_out.append((label, t, t + d * scale))
                    t += d * scale
                fine_out[-1] = (fine_out[-1][0], fine_out[-1][1], t_star + r_c)
            coarse_out.append((cp.label, t_star, t_star + r_c))
            cursor = t_star + r_c
            h_c = self._coarse_step(cp.label, acc_c, self._up(h_f), h_c)
        steps_c = 0
        while acc_c < 1.0 - BOUNDARY_TOL:
            logits, dur = head_predict(self.coarse_head, h_c)
            label = int(np.argmax(logits.value))
            d = dur.item()
            steps_c += 1
            if steps_c >= cap and acc_c + d < 1.0 - DURATION_FLOOR:
                truncated = True
                d = 1.0 - acc_c
            if acc_c + d > 1.0 - DURATION_FLOOR:
                d = 1.0 - acc_c
            down = self._down(h_c, label)
            h_f = self._fine_step(self.bos, 0.0, down, h_f)
            pieces, h_f, trunc, steps = self._roll_children(h_f, down, 0.0, cap)
            truncated |= trunc
            n_f += steps
            t = cursor
            for fl, fd in pieces:
                fine_out.append((fl, t, t + fd * d))
                t += fd * d
            fine_out[-1] = (fine_out[-1][0], fine_out[-1][1], cursor + d)
            coarse_out.append((label, cursor, cursor + d))
            cursor += d
            acc_c += d
            h_c = self._coarse_step(label, acc_c, self._up(h_f), h_c)
        n_c = steps_c
        _snap_end(coarse_out)
        _snap_end(fine_out)
        return Forecast(coarse_out, fine_out, t_star, (r_c, r_f), truncated, (n_c, n_f))

    def predict(self, split: ObservationSplit) -> Forecast:
        self._check_labels(split)
        state = self.encode(split)
        return self.anticipate(self.refresh(state, split), split)

    # -- generic training protocol -------------------------------------------
    def training_examples(self, h: ActivityHierarchy, rng: np.random.Generator):
        lo, hi = self.config.split_range
        out = []
        for _ in range(self.config.splits_per_video):
            out.append(split_at(h, float(rng.uniform(lo, hi))))
        return out

    def validation_examples(self, h: ActivityHierarchy):
        return [split_at(h, p) for p in VALIDATION_POINTS]

    def loss(self, example, rng=None):
        total, per_task = self.compute_loss(example, rng)
        raw = sum(node.item() for node in per_task.values())
        return total, raw


VALIDATION_POINTS = (0.2, 0.3, 0.5, 0.7)


def _snap_end(intervals):
    """Absorb floating drift so the last interval ends exactly at 1."""
    if intervals:
        label, s, _ = intervals[-1]
        intervals[-1] = (label, s, 1.0)


def forecast_hierarchy(split: ObservationSplit, forecast: Forecast) -> ActivityHierarchy:
    """Full predicted hierarchy: observed prefix joined with the forecast at t*."""
    levels = []
    for level, fut in ((COARSE, forecast.coarse), (FINE, forecast.fine)):
        past = observed_intervals(split, level)
        fut = list(fut)
        if past and fut and split.partial[level] is not None and past[-1][0] == fut[0][0]:
            label, s, _ = past.pop()
            fut[0] = (label, s, fut[0][2])
        levels.append(past + fut)
    return intervals_to_hierarchy(levels[0], levels[1], split.task_id, split.total_frames)
