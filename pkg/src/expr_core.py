"""
expr_core.py

Token alphabet and the ordered-list priority-function representation.

A priority function is a flat token list holding the breadth-first traversal
of an expression tree. Arities make the list uniquely decodable, and the
remainder R = 1 + sum(arity) - len tells how many tokens are still missing.
"""
from __future__ import annotations

import sys
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

FLOAT_MAX = sys.float_info.max


class InvalidPolicyError(ValueError):
    """A token list that is not (or cannot become) a valid priority function."""


class MalformedPrefixError(InvalidPolicyError):
    """A strict prefix already closed the expression before the list ended."""


class Token(Enum):
    # Enumeration order is the canonical order: operators, then variables.
    ADD = ("add", 2)
    NEG = ("neg", 1)
    MUL = ("mul", 2)
    PROTDIV = ("div", 2)
    MIN = ("min", 2)
    MAX = ("max", 2)
    WI = ("WI", 0)
    WO = ("WO", 0)
    CI = ("CI", 0)
    CO = ("CO", 0)
    DI = ("DI", 0)
    DO = ("DO", 0)
    LI = ("LI", 0)
    LO = ("LO", 0)

    def __init__(self, text, arity):
        self.text = text
        self.arity = arity

    @property
    def is_operator(self):
        return self.arity > 0

    @property
    def is_variable(self):
        return self.arity == 0

    @property
    def feature_index(self):
        """Column of this variable in a LaneFeatures vector."""
        return VARIABLES.index(self)

    def __repr__(self):
        return f"Token.{self.name}"


class RootParent(Enum):
    """Pseudo-parent of the first token of a list."""
    ROOT = "root"


ROOT = RootParent.ROOT
ParentKey = Union[Token, RootParent]

OPERATORS = tuple(t for t in Token if t.is_operator)
VARIABLES = tuple(t for t in Token if t.is_variable)
ALL_TOKENS = tuple(Token)
TOKENS_BY_TEXT = {t.text: t for t in Token}
# Variables without the lane-occupancy pair, for the reduced feature set.
VARIABLES_WITHOUT_OCCUPANCY = tuple(t for t in VARIABLES if t not in (Token.LI, Token.LO))


@dataclass(frozen=True)
class PriorityFunction(Sequence):
    """An immutable token list; behaves as a read-only sequence of Token."""
    tokens: tuple

    def __init__(self, tokens: Iterable[Token] = ()):
        object.__setattr__(self, 'tokens', tuple(tokens))

    def __getitem__(self, index):
        if isinstance(index, slice):
            return PriorityFunction(self.tokens[index])
        return self.tokens[index]

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __add__(self, other):
        return PriorityFunction(self.tokens + tuple(other))

    def __str__(self):
        return render(self)

    @property
    def is_terminal(self):
        return remainder(self) == 0

    @classmethod
    def parse(cls, text):
        return parse(text)


@dataclass(frozen=True)
class ExprTree:
    """Arena of nodes in breadth-first order; node 0 is the root."""
    tokens: tuple
    children: tuple  # children[i] is a tuple of child indices of node i
    root: int = 0

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class PolicyCost:
    flops: int
    bytes: int


def _token_tuple(pf) -> tuple:
    return pf.tokens if isinstance(pf, PriorityFunction) else tuple(pf)


def operator_count(pf) -> int:
    return sum(1 for t in _token_tuple(pf) if t.is_operator)


def remainder(pf) -> int:
    """
    Number of arity-0 tokens still needed to complete the list.

    Raises MalformedPrefixError when a strict prefix already reached zero,
    which legal expansion can never produce.
    """
    rest = 1
    for position, token in enumerate(_token_tuple(pf)):
        if rest <= 0:
            raise MalformedPrefixError(
                f"expression is complete after {position} tokens but the list continues")
        rest += token.arity - 1
    return rest


def is_valid(pf) -> bool:
    try:
        return remainder(pf) == 0
    except InvalidPolicyError:
        return False


def _require_terminal(pf):
    tokens = _token_tuple(pf)
    rest = remainder(tokens)
    if rest != 0:
        raise InvalidPolicyError(f"token list is incomplete: {rest} more token(s) needed")
    return tokens


def build_tree(pf) -> ExprTree:
    """Decodes a terminal list by replaying the breadth-first slot queue."""
    tokens = _require_terminal(pf)
    children = [[] for _ in tokens]
    open_slots = deque()
    for index, token in enumerate(tokens):
        if index > 0:
            children[open_slots.popleft()].append(index)
        open_slots.extend([index] * token.arity)
    return ExprTree(tokens=tokens, children=tuple(tuple(c) for c in children))


def bft_serialize(tree: ExprTree) -> tuple:
    order = []
    queue = deque([tree.root])
    while queue:
        node = queue.popleft()
        order.append(tree.tokens[node])
        queue.extend(tree.children[node])
    return tuple(order)


def parent_slot(pf) -> ParentKey:
    """
    Token owning the argument slot the next appended token will fill.

    Returns ROOT for the empty list; rejects terminal lists, which have no
    open slot left.
    """
    tokens = _token_tuple(pf)
    if remainder(tokens) == 0:
        raise InvalidPolicyError("a terminal list has no open argument slot")
    if not tokens:
        return ROOT
    open_slots = deque()
    for index, token in enumerate(tokens):
        if index > 0:
            open_slots.popleft()
        open_slots.extend([token] * token.arity)
    return open_slots[0]


def parent_child_pairs(pf):
    """(parent, child) token pairs of the decoded tree, ROOT for the first token."""
    tree = build_tree(pf)
    pairs = [(ROOT, tree.tokens[tree.root])]
    for parent, kids in enumerate(tree.children):
        for child in kids:
            pairs.append((tree.tokens[parent], tree.tokens[child]))
    return pairs


def _saturate(value):
    if value > FLOAT_MAX:
        return FLOAT_MAX
    if value < -FLOAT_MAX:
        return -FLOAT_MAX
    return value


def _protected_div(numerator, denominator):
    if denominator == 0:
        return 1
    try:
        return numerator / denominator
    except OverflowError:
        return FLOAT_MAX if (numerator > 0) == (denominator > 0) else -FLOAT_MAX


def _feature_value(feats, token):
    if isinstance(feats, Mapping):
        if token in feats:
            return feats[token]
        return feats[token.text]
    return feats[token.feature_index]


def evaluate(tree: ExprTree, feats):
    """
    Evaluates the tree on one movement's features.

    `feats` is a LaneFeatures, any sequence ordered like VARIABLES, or a
    mapping keyed by Token or token text. Works on floats and on exact
    fractions. Results are saturated to +/- the largest finite float at every
    node, so the result is always finite.
    """
    def visit(node):
        token = tree.tokens[node]
        if token.is_variable:
            return _feature_value(feats, token)
        args = [visit(child) for child in tree.children[node]]
        if token is Token.ADD:
            result = args[0] + args[1]
        elif token is Token.NEG:
            result = -args[0]
        elif token is Token.MUL:
            result = args[0] * args[1]
        elif token is Token.PROTDIV:
            result = _protected_div(args[0], args[1])
        elif token is Token.MIN:
            result = min(args[0], args[1])
        else:
            result = max(args[0], args[1])
        return _saturate(result)

    return visit(tree.root)


def evaluate_batch(tree: ExprTree, matrix) -> np.ndarray:
    """
    Vectorised evaluate over an (n, 8) feature matrix, one row per movement.
    Same semantics as evaluate, element for element.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != len(VARIABLES):
        raise ValueError(f"feature matrix must have shape (n, {len(VARIABLES)}), got {matrix.shape}")

    def visit(node):
        token = tree.tokens[node]
        if token.is_variable:
            return matrix[:, token.feature_index]
        args = [visit(child) for child in tree.children[node]]
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            if token is Token.ADD:
                result = args[0] + args[1]
            elif token is Token.NEG:
                result = -args[0]
            elif token is Token.MUL:
                result = args[0] * args[1]
            elif token is Token.PROTDIV:
                zero = args[1] == 0
                result = np.where(zero, 1.0, args[0] / np.where(zero, 1.0, args[1]))
            elif token is Token.MIN:
                result = np.minimum(args[0], args[1])
            else:
                result = np.maximum(args[0], args[1])
        return np.clip(result, -FLOAT_MAX, FLOAT_MAX)

    return np.array(visit(tree.root), dtype=np.float64, copy=True)


def cost(pf) -> PolicyCost:
    tokens = _require_terminal(pf)
    return PolicyCost(flops=operator_count(tokens), bytes=len(tokens))


def render(pf) -> str:
    """Canonical text: whitespace-separated breadth-first token names."""
    return " ".join(t.text for t in _token_tuple(pf))


def parse(text: str) -> PriorityFunction:
    tokens = []
    for word in text.split():
        token = TOKENS_BY_TEXT.get(word)
        if token is None:
            raise InvalidPolicyError(f"unknown token {word!r}")
        tokens.append(token)
    _require_terminal(tokens)
    return PriorityFunction(tokens)


_INFIX = {Token.ADD: "+", Token.MUL: "*", Token.PROTDIV: "/"}


def render_infix(tree: ExprTree) -> str:
    """Human-readable infix form, e.g. '(-WO) + (WI * WI)'."""
    def visit(node, nested):
        token = tree.tokens[node]
        if token.is_variable:
            return token.text
        kids = tree.children[node]
        if token is Token.NEG:
            text = "-" + visit(kids[0], True)
        elif token in _INFIX:
            text = f"{visit(kids[0], True)} {_INFIX[token]} {visit(kids[1], True)}"
        else:
            return f"{token.text}({visit(kids[0], False)}, {visit(kids[1], False)})"
        return f"({text})" if nested else text

    return visit(tree.root, False)


def legal_actions(pf, max_operators, variables=VARIABLES):
    """All operators plus `variables`; variables only once the cap is reached."""
    if operator_count(pf) >= max_operators:
        return tuple(variables)
    return OPERATORS + tuple(variables)


def random_policy(rng, max_operators, variables=VARIABLES) -> PriorityFunction:
    """Uniform legal expansion from the empty list until the remainder hits 0."""
    tokens = []
    while remainder(tokens) > 0:
        actions = legal_actions(tokens, max_operators, variables)
        tokens.append(actions[int(rng.integers(len(actions)))])
    return PriorityFunction(tokens)
