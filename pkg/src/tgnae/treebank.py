"""Bracketed trees, TG action sequences, close duplication and attention plans.

Trees are written in the labelled-close notation used for action sequences::

    (S (NP The blue bird NP) (VP sings VP) S)

Penn-style trees with bare closing brackets and preterminals are accepted by
:func:`parse_ptb`, which collapses ``(TAG word)`` into a terminal and keeps the
tag as the word's POS.
"""

from __future__ import annotations

import enum
import re
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field


class TreeError(ValueError):
    """Base class for malformed tree input."""


class UnbalancedBrackets(TreeError):
    pass


class EmptyPhrase(TreeError):
    pass


class LabelMismatch(TreeError):
    pass


class StackUnderflow(TreeError):
    pass


class Kind(str, enum.Enum):
    OPEN = "open"
    TERMINAL = "terminal"
    CLOSE = "close"


class Mode(str, enum.Enum):
    COMPOSE = "COMPOSE"
    STACK = "STACK"


@dataclass(frozen=True)
class Action:
    kind: Kind
    label: str

    def __str__(self) -> str:
        if self.kind is Kind.OPEN:
            return f"({self.label}"
        if self.kind is Kind.CLOSE:
            return f"{self.label})"
        return self.label

    @property
    def is_terminal(self) -> bool:
        return self.kind is Kind.TERMINAL


def open_nt(label: str) -> Action:
    return Action(Kind.OPEN, label)


def close_nt(label: str) -> Action:
    return Action(Kind.CLOSE, label)


def terminal(token: str) -> Action:
    return Action(Kind.TERMINAL, token)


@dataclass(frozen=True)
class ActionSequence:
    actions: tuple[Action, ...]
    sentence_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        validate(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Action]:
        return iter(self.actions)

    def __getitem__(self, i):
        return self.actions[i]

    @property
    def terminal_positions(self) -> list[int]:
        return [i for i, a in enumerate(self.actions) if a.is_terminal]

    @property
    def words(self) -> list[str]:
        return [a.label for a in self.actions if a.is_terminal]

    @property
    def n_close(self) -> int:
        return sum(a.kind is Kind.CLOSE for a in self.actions)

    def render(self) -> str:
        return " ".join(str(a) for a in self.actions)


def validate(actions: Sequence[Action]) -> None:
    """Raise a :class:`TreeError` unless ``actions`` is one well-formed tree."""
    if not actions:
        raise UnbalancedBrackets("empty action sequence")
    if actions[0].kind is not Kind.OPEN:
        raise UnbalancedBrackets("sequence must start with an open nonterminal")
    # each frame: [label, number of children]
    frames: list[list] = []
    for i, a in enumerate(actions):
        if not frames and i > 0:
            raise UnbalancedBrackets(f"material after the root closed at action {i}")
        if a.kind is Kind.OPEN:
            if frames:
                frames[-1][1] += 1
            frames.append([a.label, 0])
        elif a.kind is Kind.TERMINAL:
            if not frames:
                raise UnbalancedBrackets(f"terminal {a.label!r} outside any phrase")
            frames[-1][1] += 1
        else:
            if not frames:
                raise UnbalancedBrackets(f"unmatched close {a} at action {i}")
            label, n_children = frames.pop()
            if a.label != label:
                raise LabelMismatch(f"{a} closes ({label} at action {i}")
            if n_children == 0:
                raise EmptyPhrase(f"({label} has no children (action {i})")
    if frames:
        raise UnbalancedBrackets(f"{len(frames)} unclosed nonterminal(s)")


def _tokens(text: str) -> list[str]:
    return text.split()


def parse_tree(text: str, sentence_id: str = "") -> ActionSequence:
    """Parse a labelled-close tree into its top-down, left-to-right actions.

    A token ``(X`` opens ``X``; ``X)`` closes it; a lone ``)`` closes the most
    recent open nonterminal; anything else is a terminal.
    """
    actions: list[Action] = []
    open_labels: list[str] = []
    for tok in _tokens(text):
        if tok.startswith("(") and len(tok) > 1:
            open_labels.append(tok[1:])
            actions.append(open_nt(tok[1:]))
        elif tok == ")":
            if not open_labels:
                raise UnbalancedBrackets(f"unmatched ')' in {text!r}")
            actions.append(close_nt(open_labels[-1]))
            open_labels.pop()
        elif tok.endswith(")") and len(tok) > 1:
            label = tok[:-1]
            if not open_labels:
                raise UnbalancedBrackets(f"unmatched {tok!r} in {text!r}")
            actions.append(close_nt(label))
            open_labels.pop()
        else:
            actions.append(terminal(tok))
    return ActionSequence(tuple(actions), sentence_id)


_PTB_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_ptb(text: str, sentence_id: str = "") -> tuple[ActionSequence, list[str]]:
    """Parse a Penn-style tree, collapsing preterminals.

    Returns the action sequence and one POS tag per terminal.
    """
    toks = _PTB_TOKEN.findall(text)
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(toks) or toks[pos] != "(":
            raise UnbalancedBrackets(f"expected '(' at token {pos} in {text!r}")
        pos += 1
        if pos >= len(toks) or toks[pos] in "()":
            # an unlabelled wrapper such as "( (S ...) )"
            label = None
        else:
            label = toks[pos]
            pos += 1
        children = []
        while pos < len(toks) and toks[pos] != ")":
            if toks[pos] == "(":
                children.append(node())
            else:
                children.append(toks[pos])
                pos += 1
        if pos >= len(toks):
            raise UnbalancedBrackets(f"unclosed '(' in {text!r}")
        pos += 1
        return label, children

    root = node()
    if pos != len(toks):
        raise UnbalancedBrackets(f"trailing material after tree in {text!r}")
    while root[0] is None:
        if len(root[1]) != 1 or isinstance(root[1][0], str):
            raise UnbalancedBrackets("unlabelled root must wrap exactly one tree")
        root = root[1][0]

    actions: list[Action] = []
    tags: list[str] = []

    def emit(n):
        label, children = n
        if label is None:
            raise UnbalancedBrackets("unlabelled inner bracket")
        if len(children) == 1 and isinstance(children[0], str):
            actions.append(terminal(children[0]))
            tags.append(label)
            return
        actions.append(open_nt(label))
        for c in children:
            if isinstance(c, str):
                actions.append(terminal(c))
                tags.append("")
            else:
                emit(c)
        actions.append(close_nt(label))

    if len(root[1]) == 1 and isinstance(root[1][0], str):
        # a one-word tree; keep the tag as the phrase
        actions = [open_nt(root[0]), terminal(root[1][0]), close_nt(root[0])]
        tags = [root[0]]
    else:
        emit(root)
    return ActionSequence(tuple(actions), sentence_id), tags


# --------------------------------------------------------------------------
# close duplication


@dataclass(frozen=True)
class DuplicatedSequence:
    items: tuple[Action, ...]
    modes: tuple[Mode, ...]
    origin_index: tuple[int, ...]
    loss_masked: tuple[bool, ...]
    source: ActionSequence

    def __len__(self) -> int:
        return len(self.items)

    @property
    def second_copies(self) -> list[int]:
        """Positions holding the second (STACK) copy of a close."""
        return [i for i in range(1, len(self.items))
                if self.items[i].kind is Kind.CLOSE and self.modes[i - 1] is Mode.COMPOSE]

    @property
    def first_copy(self) -> list[int]:
        """For every source action, the position of its first copy."""
        out = [-1] * len(self.source)
        for i, k in enumerate(self.origin_index):
            if out[k] < 0:
                out[k] = i
        return out

    def render(self) -> str:
        return " ".join(str(a) for a in self.items)

    def collapse(self) -> ActionSequence:
        """Drop second copies, recovering the source sequence."""
        drop = set(self.second_copies)
        return ActionSequence(
            tuple(a for i, a in enumerate(self.items) if i not in drop),
            self.source.sentence_id,
        )


def duplicate_closes(a: ActionSequence) -> DuplicatedSequence:
    items: list[Action] = []
    modes: list[Mode] = []
    origin: list[int] = []
    for k, act in enumerate(a.actions):
        if act.kind is Kind.CLOSE:
            items += [act, act]
            modes += [Mode.COMPOSE, Mode.STACK]
            origin += [k, k]
        else:
            items.append(act)
            modes.append(Mode.STACK)
            origin.append(k)
    # a COMPOSE position predicts its own duplicate, which is not modelled
    loss_masked = tuple(m is Mode.COMPOSE for m in modes)
    return DuplicatedSequence(tuple(items), tuple(modes), tuple(origin), loss_masked, a)


# --------------------------------------------------------------------------
# stack simulation


class EntryKind(str, enum.Enum):
    OPEN = "open"
    TERMINAL = "terminal"
    COMPOSED = "composed"


@dataclass(frozen=True)
class StackEntry:
    kind: EntryKind
    position: int


@dataclass(frozen=True)
class StackState:
    entries: tuple[StackEntry, ...]

    @property
    def depth(self) -> int:
        return len(self.entries)

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(e.position for e in self.entries)


def simulate_stack(d: DuplicatedSequence) -> list[StackState]:
    """Stack contents after each position of ``d``."""
    stack: list[StackEntry] = []
    states: list[StackState] = []
    for i, (act, mode) in enumerate(zip(d.items, d.modes)):
        if act.kind is Kind.OPEN:
            stack.append(StackEntry(EntryKind.OPEN, i))
        elif act.kind is Kind.TERMINAL:
            stack.append(StackEntry(EntryKind.TERMINAL, i))
        elif mode is Mode.COMPOSE:
            while stack and stack[-1].kind is not EntryKind.OPEN:
                stack.pop()
            if not stack:
                raise StackUnderflow(f"close at position {i} has no open nonterminal")
            stack.pop()
            stack.append(StackEntry(EntryKind.COMPOSED, i))
        elif not stack:
            raise StackUnderflow(f"second close copy at position {i} on an empty stack")
        states.append(StackState(tuple(stack)))
    return states


# --------------------------------------------------------------------------
# attention plans


@dataclass(frozen=True)
class AttentionMaskPlan:
    """Per-position key sets for one sequence.

    ``loss_masked[i]`` marks rows whose next-item prediction is not modelled.
    The final row never has a target regardless of its flag.
    """

    modes: tuple[Mode, ...]
    attendable: tuple[frozenset[int], ...]
    spans: tuple[tuple[int, int] | None, ...]
    loss_masked: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.modes)

    def matrix(self):
        import numpy as np

        n = len(self.modes)
        m = np.zeros((n, n), dtype=bool)
        for i, keys in enumerate(self.attendable):
            m[i, sorted(keys)] = True
        return m

    @property
    def target_mask(self) -> tuple[bool, ...]:
        """True where row ``i`` is trained to predict item ``i + 1``."""
        n = len(self.modes)
        return tuple(i < n - 1 and not self.loss_masked[i] for i in range(n))


def causal_plan(n: int) -> AttentionMaskPlan:
    """Plain left-to-right plan: every row sees itself and all predecessors."""
    return AttentionMaskPlan(
        modes=(Mode.STACK,) * n,
        attendable=tuple(frozenset(range(i + 1)) for i in range(n)),
        spans=(None,) * n,
        loss_masked=(False,) * n,
    )


def build_attention_plan(d: DuplicatedSequence) -> AttentionMaskPlan:
    """COMPOSE rows see their bracket span; STACK rows see the stack plus self.

    Keeps a stack of positions and a stack of open-bracket indices into it,
    so each close pops its phrase in one slice.
    """
    stack: list[int] = []
    opens: list[int] = []  # index into ``stack`` of each unclosed "(X"
    attendable: list[frozenset[int]] = []
    spans: list[tuple[int, int] | None] = []
    for i, (act, mode) in enumerate(zip(d.items, d.modes)):
        if mode is Mode.COMPOSE:
            if not opens:
                raise StackUnderflow(f"close at position {i} has no open nonterminal")
            cut = opens.pop()
            start = stack[cut]
            del stack[cut:]
            stack.append(i)
            attendable.append(frozenset(range(start, i + 1)))
            spans.append((start, i))
            continue
        if act.kind is Kind.OPEN:
            opens.append(len(stack))
            stack.append(i)
        elif act.kind is Kind.TERMINAL:
            stack.append(i)
        attendable.append(frozenset(stack) | {i})
        spans.append(None)
    return AttentionMaskPlan(tuple(d.modes), tuple(attendable), tuple(spans), d.loss_masked)


def tg_plan(a: ActionSequence) -> tuple[DuplicatedSequence, AttentionMaskPlan]:
    d = duplicate_closes(a)
    return d, build_attention_plan(d)


def plan_debug_lines(d: DuplicatedSequence, plan: AttentionMaskPlan) -> list[str]:
    """Line-oriented golden format: ``index action mode masked keys``."""
    lines = []
    for i, act in enumerate(d.items):
        keys = ",".join(str(j) for j in sorted(plan.attendable[i]))
        lines.append(
            f"{i}\t{act}\t{plan.modes[i].value}\t{int(plan.loss_masked[i])}\t{keys}"
        )
    return lines


# --------------------------------------------------------------------------
# treebank files


@dataclass
class TreebankEntry:
    actions: ActionSequence
    pos_tags: list[str] = field(default_factory=list)
    story: str = "1"


def read_tree(text: str, sentence_id: str = "") -> tuple[ActionSequence, list[str]]:
    """Parse either notation; POS tags are empty strings when absent.

    Labelled-close notation is tried first. A Penn tree read that way fails
    with a label mismatch (``(DT The)`` closes ``The``), so it falls through.
    """
    try:
        seq = parse_tree(text, sentence_id)
    except (LabelMismatch, UnbalancedBrackets):
        return parse_ptb(text, sentence_id)
    return seq, [""] * len(seq.terminal_positions)


def read_treebank(lines: Iterable[str]) -> list[TreebankEntry]:
    """Read ``[story<TAB>]tree`` lines; blank lines and ``#`` comments are skipped."""
    out = []
    counters: dict[str, int] = {}
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in line:
            story, text = line.split("\t", 1)
        else:
            story, text = "1", line
        counters[story] = counters.get(story, 0) + 1
        sid = f"{story}:{counters[story]}"
        seq, tags = read_tree(text, sid)
        out.append(TreebankEntry(seq, tags, story))
    return out
