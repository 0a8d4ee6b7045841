"""Symbolic update-rule DSL.

A rule is a binary expression tree over the operators ``+ - *`` and the
terminals below, stored as a preorder node list. Evaluating a rule for an
individual yields that individual's candidate position.

Text form (prefix notation)::

    (+ xbest (* (c 0.5 0) (- xr xr)))

Terminal names: ``x`` (manipulated individual), ``xbest`` (best so far),
``xworst`` (worst so far), ``pbest`` (personal best), ``dx`` (velocity),
``xr`` (random distinct peer). ``(c w e)`` is the constant ``w * 10**e``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError

ADD, SUB, MUL = 0, 1, 2
X, BEST, WORST, PBEST, VEL, RAND, CONST = 3, 4, 5, 6, 7, 8, 9

OPERATORS = (ADD, SUB, MUL)
TERMINALS = (X, BEST, WORST, PBEST, VEL, RAND, CONST)
VOCAB_SIZE = 10

TOKEN_NAMES = ("+", "-", "*", "x", "xbest", "xworst", "pbest", "dx", "xr", "c")
_NAME_TO_TOKEN = {name: i for i, name in enumerate(TOKEN_NAMES)}

OMEGA_VALUES = tuple(round(-1.0 + 0.1 * k, 1) for k in range(21))
EPS_VALUES = (0, -1)
N_OMEGA = len(OMEGA_VALUES)
N_EPS = len(EPS_VALUES)

MIN_HEIGHT = 2
MAX_HEIGHT = 5
MAX_NODES = 2**MAX_HEIGHT - 1
EMB_DIM = MAX_NODES * VOCAB_SIZE


class Node(NamedTuple):
    token: int
    omega: int = -1
    eps: int = -1

    @property
    def is_operator(self) -> bool:
        return self.token in OPERATORS


def decode_constant(omega_index: int, eps_index: int) -> float:
    """Return ``omega * 10**eps`` for the given categorical indices."""
    if not (0 <= omega_index < N_OMEGA and 0 <= eps_index < N_EPS):
        raise ContractError(f"constant indices out of range: ({omega_index}, {eps_index})")
    return OMEGA_VALUES[omega_index] * 10.0 ** EPS_VALUES[eps_index]


def omega_index(value: float) -> int:
    k = int(round((value + 1.0) / 0.1))
    if not 0 <= k < N_OMEGA or abs(OMEGA_VALUES[k] - value) > 1e-9:
        raise ContractError(f"{value} is not a legal constant base")
    return k


def eps_index(value: int) -> int:
    try:
        return EPS_VALUES.index(int(value))
    except ValueError:
        raise ContractError(f"{value} is not a legal constant exponent") from None


def _subtree_end(nodes: Sequence[Node], start: int) -> int:
    """Index one past the subtree rooted at ``start``; -1 if truncated."""
    need = 1
    i = start
    while need > 0:
        if i >= len(nodes):
            return -1
        need += 1 if nodes[i].token in OPERATORS else -1
        i += 1
    return i


@dataclass(frozen=True)
class ExprTree:
    nodes: tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(Node(*n) for n in self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def __str__(self) -> str:
        return to_text(self)

    @property
    def children(self) -> tuple[tuple[int, int] | None, ...]:
        """Child indices per node (``None`` for terminals). Requires a well-formed tree."""
        out = []
        for i, node in enumerate(self.nodes):
            if node.token in OPERATORS:
                left = i + 1
                right = _subtree_end(self.nodes, left)
                out.append((left, right))
            else:
                out.append(None)
        return tuple(out)

    @property
    def height(self) -> int:
        """Number of node levels (root is level 1); -1 for malformed node lists."""
        if not self.nodes or _subtree_end(self.nodes, 0) != len(self.nodes):
            return -1
        best = 0
        stack = [1]
        for node in self.nodes:
            depth = stack.pop()
            best = max(best, depth)
            if node.token in OPERATORS:
                stack.extend((depth + 1, depth + 1))
        return best

    def tokens(self) -> np.ndarray:
        """(len, 3) int array of (token, omega_index, eps_index) rows."""
        return np.array([tuple(n) for n in self.nodes], dtype=np.int64).reshape(-1, 3)

    @classmethod
    def from_tokens(cls, tokens) -> "ExprTree":
        return cls(tuple(Node(int(t), int(w), int(e)) for t, w, e in np.asarray(tokens).reshape(-1, 3)))


def validate(tree: ExprTree) -> bool:
    nodes = tree.nodes
    if not 0 < len(nodes) <= MAX_NODES:
        return False
    for n in nodes:
        if not 0 <= n.token < VOCAB_SIZE:
            return False
        if n.token == CONST and not (0 <= n.omega < N_OMEGA and 0 <= n.eps < N_EPS):
            return False
    return MIN_HEIGHT <= tree.height <= MAX_HEIGHT


# ------------------------------------------------------------------ text form


def to_text(tree: ExprTree) -> str:
    out = []

    def emit(i: int) -> int:
        node = tree.nodes[i]
        if node.token in OPERATORS:
            out.append("(" + TOKEN_NAMES[node.token] + " ")
            j = emit(i + 1)
            out.append(" ")
            j = emit(j)
            out.append(")")
            return j
        if node.token == CONST:
            out.append(f"(c {OMEGA_VALUES[node.omega]:.1f} {EPS_VALUES[node.eps]})")
        else:
            out.append(TOKEN_NAMES[node.token])
        return i + 1

    emit(0)
    return "".join(out)


_LEX = re.compile(r"\(|\)|[^\s()]+")


def parse(text: str) -> ExprTree:
    """Parse the prefix text form produced by :func:`to_text`."""
    toks = _LEX.findall(text)
    nodes: list[Node] = []
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(toks) or toks[pos] != tok:
            raise ContractError(f"expected {tok!r} at token {pos} in {text!r}")
        pos += 1

    def walk():
        nonlocal pos
        if pos >= len(toks):
            raise ContractError(f"unexpected end of rule text: {text!r}")
        tok = toks[pos]
        if tok != "(":
            if tok not in _NAME_TO_TOKEN or _NAME_TO_TOKEN[tok] in OPERATORS or tok == "c":
                raise ContractError(f"unknown terminal {tok!r}")
            nodes.append(Node(_NAME_TO_TOKEN[tok]))
            pos += 1
            return
        pos += 1
        head = toks[pos] if pos < len(toks) else None
        pos += 1
        if head == "c":
            w, e = toks[pos], toks[pos + 1]
            pos += 2
            nodes.append(Node(CONST, omega_index(float(w)), eps_index(int(e))))
        elif head in ("+", "-", "*"):
            nodes.append(Node(_NAME_TO_TOKEN[head]))
            walk()
            walk()
        else:
            raise ContractError(f"unknown operator {head!r}")
        expect(")")

    walk()
    if pos != len(toks):
        raise ContractError(f"trailing tokens in rule text: {text!r}")
    return ExprTree(tuple(nodes))


# ------------------------------------------------------------------ evaluation


def _draw_peer(rng, n: int, i: int) -> int:
    r = int(rng.integers(0, n - 1))
    return r + (r >= i)


def evaluate(tree: ExprTree, pop, individual_index: int, rng) -> np.ndarray:
    """Candidate position for one individual.

    ``pop`` needs ``positions``, ``best_so_far_pos``, ``worst_so_far_pos``,
    ``personal_bests`` and ``velocities``. Each ``xr`` node draws its own
    peer index (distinct from ``individual_index``) from ``rng`` in preorder.
    """
    if not validate(tree):
        raise ContractError(f"invalid rule tree: {tree.nodes}")
    n = pop.positions.shape[0]
    if n < 2 and any(node.token == RAND for node in tree.nodes):
        raise ContractError("random peer requires at least two individuals")
    i = individual_index

    def leaf(node):
        t = node.token
        if t == X:
            return pop.positions[i]
        if t == BEST:
            return pop.best_so_far_pos
        if t == WORST:
            return pop.worst_so_far_pos
        if t == PBEST:
            return pop.personal_bests[i]
        if t == VEL:
            return pop.velocities[i]
        if t == RAND:
            return pop.positions[_draw_peer(rng, n, i)]
        return decode_constant(node.omega, node.eps)

    value = _fold(tree.nodes, leaf)
    dim = pop.positions.shape[1]
    return np.array(np.broadcast_to(value, (dim,)), dtype=np.float64)


def evaluate_population(tree: ExprTree, pop, rng) -> np.ndarray:
    """Apply the rule to every individual at once; returns an (n, dim) array.

    Each ``xr`` node draws a vector of n peer indices (one per individual),
    with peer != individual, via a single ``rng.integers(0, n - 1, n)`` call.
    """
    if not validate(tree):
        raise ContractError(f"invalid rule tree: {tree.nodes}")
    P = pop.positions
    n = P.shape[0]
    if n < 2 and any(node.token == RAND for node in tree.nodes):
        raise ContractError("random peer requires at least two individuals")
    idx = np.arange(n)

    def leaf(node):
        t = node.token
        if t == X:
            return P
        if t == BEST:
            return pop.best_so_far_pos
        if t == WORST:
            return pop.worst_so_far_pos
        if t == PBEST:
            return pop.personal_bests
        if t == VEL:
            return pop.velocities
        if t == RAND:
            r = rng.integers(0, n - 1, n)
            r += r >= idx
            return P[r]
        return decode_constant(node.omega, node.eps)

    value = _fold(tree.nodes, leaf)
    return np.array(np.broadcast_to(value, P.shape), dtype=np.float64)


def _fold(nodes, leaf):
    pos = 0

    def walk():
        nonlocal pos
        node = nodes[pos]
        pos += 1
        if node.token == ADD:
            a = walk()
            return a + walk()
        if node.token == SUB:
            a = walk()
            return a - walk()
        if node.token == MUL:
            a = walk()
            return a * walk()
        return leaf(node)

    return walk()


# ------------------------------------------------------------------ embedding


def embed(tree_partial: ExprTree | Iterable | None) -> np.ndarray:
    """Preorder one-hot slot embedding of a (possibly partial) tree.

    Slot k holds the one-hot token of the k-th preorder node; empty slots
    are zero rows. Constant values are not encoded.
    """
    out = np.zeros((MAX_NODES, VOCAB_SIZE))
    if tree_partial is None:
        return out.ravel()
    nodes = tree_partial.nodes if isinstance(tree_partial, ExprTree) else list(tree_partial)
    for k, node in enumerate(nodes):
        tok = node[0] if not isinstance(node, (int, np.integer)) else int(node)
        out[k, tok] = 1.0
    return out.ravel()


# ------------------------------------------------------------------ grammar


def legal_tokens(depth: int) -> tuple[int, ...]:
    """Tokens allowed in a slot at the given depth (root is depth 1)."""
    if depth < MIN_HEIGHT:
        return OPERATORS
    if depth >= MAX_HEIGHT:
        return TERMINALS
    return OPERATORS + TERMINALS


def legal_masks(tokens) -> np.ndarray:
    """Per-position legal-token masks for a preorder token sequence.

    Raises ContractError when the sequence is not a complete legal rule.
    """
    toks = np.asarray(tokens).reshape(len(tokens), -1)[:, 0] if len(tokens) else np.zeros(0, int)
    masks = np.zeros((len(toks), VOCAB_SIZE), dtype=bool)
    stack = [1]
    for t, tok in enumerate(toks):
        if not stack:
            raise ContractError("token sequence continues past a complete tree")
        depth = stack.pop()
        allowed = legal_tokens(depth)
        masks[t, list(allowed)] = True
        if int(tok) not in allowed:
            raise ContractError(f"token {int(tok)} illegal at position {t} (depth {depth})")
        if int(tok) in OPERATORS:
            stack.extend((depth + 1, depth + 1))
    if stack:
        raise ContractError("token sequence ends before the tree is complete")
    return masks


def leaf_choices() -> list[Node]:
    """Every terminal node with constant parameters expanded."""
    out = [Node(t) for t in TERMINALS if t != CONST]
    out += [Node(CONST, w, e) for w in range(N_OMEGA) for e in range(N_EPS)]
    return out
