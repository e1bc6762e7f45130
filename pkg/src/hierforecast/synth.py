"""Synthetic two-level activity grammar for dataset-free training and tests.

A grammar lists tasks; each task is an ordered list of coarse activities with
mean durations, and each coarse activity expands into an ordered template of
fine actions.  Fine actions are shared between coarse activities, so the
fine sequence is only predictable when the coarse context is known.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GrammarError
from .hierarchy import ActivityHierarchy, make_hierarchy, validate


@dataclass(frozen=True)
class CoarseRule:
    label: str
    mean: float
    children: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class TaskRule:
    label: str
    activities: tuple[CoarseRule, ...]


@dataclass
class SynthGrammar:
    tasks: list[TaskRule]
    jitter: float = 0.10
    jitter_clip: float = 0.30
    skip_prob: float = 0.10
    swap_prob: float = 0.0
    frames: tuple[int, int] = (1200, 3000)
    coarse_vocab: list[str] = field(init=False)
    fine_vocab: list[str] = field(init=False)

    def __post_init__(self):
        coarse, fine = set(), set()
        for task in self.tasks:
            if not task.activities:
                raise GrammarError(f"task {task.label!r} has no coarse activities")
            for act in task.activities:
                if not act.children:
                    raise GrammarError(f"rule {task.label}/{act.label} yields no fine actions")
                coarse.add(act.label)
                fine.update(lbl for lbl, _ in act.children)
        self.coarse_vocab = sorted(coarse)
        self.fine_vocab = sorted(fine)


def _rule(label, mean, *children):
    return CoarseRule(label, mean, tuple(children))


def default_grammar(skip_prob: float = 0.1, jitter: float = 0.1) -> SynthGrammar:
    """Four breakfast-like tasks, 3-5 coarse activities each, 2-4 fine actions per activity."""
    take_cup = _rule("take-cup", 0.8, ("take", 0.4), ("place", 0.6))
    pour_coffee = _rule("pour-coffee", 1.4, ("open", 0.2), ("pour", 0.5), ("close", 0.3))
    add_milk = _rule("add-milk", 1.0, ("take", 0.3), ("open", 0.2), ("pour", 0.5))
    add_sugar = _rule("add-sugar", 0.7, ("take", 0.35), ("spoon", 0.4), ("stir", 0.25))
    stir_drink = _rule("stir-drink", 0.6, ("spoon", 0.3), ("stir", 0.7))
    take_bowl = _rule("take-bowl", 0.8, ("take", 0.5), ("place", 0.5))
    pour_cereal = _rule("pour-cereal", 1.2, ("open", 0.25), ("pour", 0.55), ("close", 0.2))
    pour_milk = _rule("pour-milk", 1.0, ("take", 0.25), ("pour", 0.6), ("place", 0.15))
    cut_bread = _rule("cut-bread", 1.3, ("take", 0.2), ("cut", 0.6), ("place", 0.2))
    spread_butter = _rule("spread-butter", 1.5, ("open", 0.15), ("spoon", 0.25), ("spread", 0.45), ("close", 0.15))
    crack_egg = _rule("crack-egg", 0.9, ("take", 0.3), ("crack", 0.5), ("pour", 0.2))
    fry_egg = _rule("fry-egg", 2.0, ("stir", 0.6), ("spoon", 0.4))
    serve = _rule("serve", 0.7, ("take", 0.3), ("spoon", 0.3), ("place", 0.4))
    tasks = [
        TaskRule("coffee", (take_cup, pour_coffee, add_milk, add_sugar, stir_drink)),
        TaskRule("cereals", (take_bowl, pour_cereal, pour_milk)),
        TaskRule("sandwich", (cut_bread, spread_butter, take_cup, serve)),
        TaskRule("eggs", (crack_egg, fry_egg, add_sugar, serve)),
    ]
    return SynthGrammar(tasks, jitter=jitter, skip_prob=skip_prob)


def fixed_duration_grammar() -> SynthGrammar:
    """One task, four equal coarse activities, no noise at all."""
    acts = tuple(_rule(f"step-{k}", 1.0, (f"a{k}", 0.5), (f"b{k}", 0.5)) for k in range(4))
    return SynthGrammar([TaskRule("fixed", acts)], jitter=0.0, skip_prob=0.0)


def coffee_grammar() -> SynthGrammar:
    """A single deterministic "make coffee" routine."""
    acts = (
        _rule("take-cup", 1.0, ("take", 0.5), ("place", 0.5)),
        _rule("pour-coffee", 1.5, ("open", 0.3), ("pour", 0.7)),
        _rule("pour-milk", 1.0, ("take", 0.4), ("pour", 0.6)),
        _rule("add-sugar", 0.8, ("spoon", 0.6), ("stir", 0.4)),
        _rule("stir-coffee", 0.7, ("spoon", 0.3), ("stir", 0.7)),
    )
    return SynthGrammar([TaskRule("coffee", acts)], jitter=0.0, skip_prob=0.0)


@dataclass
class SynthSample:
    hierarchy: ActivityHierarchy
    task: str
    skipped: int
    slots: int


def _jittered(rng, means, sigma, bound):
    means = np.asarray(means, dtype=float)
    if sigma <= 0:
        return means / means.sum()
    noise = np.clip(rng.normal(0.0, sigma, size=means.size), -bound, bound)
    d = means * (1.0 + noise)
    return d / d.sum()


def synth_sample(grammar: SynthGrammar, rng: np.random.Generator) -> SynthSample:
    task = grammar.tasks[int(rng.integers(len(grammar.tasks)))]
    acts = [a for a in task.activities if not (grammar.skip_prob > 0 and rng.random() < grammar.skip_prob)]
    skipped = len(task.activities) - len(acts)
    if not acts:
        acts = [task.activities[0]]
        skipped -= 1
    c_index = {lbl: k for k, lbl in enumerate(grammar.coarse_vocab)}
    f_index = {lbl: k for k, lbl in enumerate(grammar.fine_vocab)}
    coarse_d = _jittered(rng, [a.mean for a in acts], grammar.jitter, grammar.jitter_clip)
    coarse, fine = [], []
    for i, (act, d) in enumerate(zip(acts, coarse_d)):
        coarse.append((c_index[act.label], d))
        kids = list(act.children)
        if grammar.swap_prob > 0 and len(kids) > 1 and rng.random() < grammar.swap_prob:
            k = int(rng.integers(len(kids) - 1))
            kids[k], kids[k + 1] = kids[k + 1], kids[k]
        fd = _jittered(rng, [m for _, m in kids], grammar.jitter, grammar.jitter_clip)
        fine.extend((f_index[lbl], x, i) for (lbl, _), x in zip(kids, fd))
    lo, hi = grammar.frames
    frames = int(rng.integers(lo, hi + 1))
    h = make_hierarchy(coarse, fine, task_id=task.label, total_frames=frames)
    return SynthSample(h, task.label, skipped, len(task.activities))


def synth_generate(grammar: SynthGrammar, n: int, seed: int) -> list[ActivityHierarchy]:
    """``n`` hierarchies drawn from ``grammar``; identical for identical seeds."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        h = synth_sample(grammar, rng).hierarchy
        problems = validate(h)
        if problems:
            raise GrammarError(f"generated an invalid hierarchy: {problems[0]}")
        out.append(h)
    return out
