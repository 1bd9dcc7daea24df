"""Expression grammar: preorder traversals, structural constraints, evaluation.

An expression is a token list in preorder.  Generation works on an
arity counter that starts at 1 and, for each emitted symbol s, moves to
``count + Arity(s) - 1``; the traversal is complete exactly when the
counter reaches 0.

Two structural rules are enforced at generation time and re-checked via
the same predicate everywhere tokens are sampled:

- sin/cos may not appear while any unfinished ancestor is sin/cos
  (no nested trig through the open chain);
- inside an unfinished log/sqrt argument, sin/cos are forbidden
  anywhere and a bare "-" is forbidden at the argument root.

Numeric domain faults that the grammar cannot see (log of a negative
produced by arithmetic, division by zero, exp overflow) surface at
evaluation as DomainViolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArityMismatch,
    ConfigError,
    ConstantCountMismatch,
    DimsError,
    DomainViolation,
    InvalidTokenKind,
    Malformed,
    TrailingTokens,
)
from .vocab import (
    BINARY_OPS,
    CONST,
    MAX_VAR_INDEX,
    UNARY_OPS,
    VAR_TOKENS,
    arity,
    is_expression_token,
    is_var,
    var_index,
)

_TRIG = ("sin", "cos")
_LOGSQRT = ("log", "sqrt")


@dataclass(frozen=True)
class ExprTree:
    """Immutable expression node; leaves have no children."""

    op: str
    children: tuple = ()


# --- traversal bookkeeping ---------------------------------------------------

def remaining_slots(prefix) -> int:
    """Open argument slots after processing prefix (empty prefix -> 1)."""
    count = 1
    for i, tok in enumerate(prefix):
        if count == 0:
            raise TrailingTokens(f"traversal complete before token {i} ({tok!r})")
        count += arity(tok) - 1
    return count


class GrammarState:
    """Incremental traversal state: counter, open-ancestor stack, masks.

    max_len / max_depth are optional budgets; when max_len is set,
    allows() masks any token whose minimal completion would overflow, so
    sampling can never produce an over-long traversal.
    """

    def __init__(self, max_vars: int = MAX_VAR_INDEX, max_len=None, max_depth=None):
        self.max_vars = max_vars
        self.max_len = max_len
        self.max_depth = max_depth
        self.count = 1
        self.n_tokens = 0
        self.stack = []  # [token, remaining children] for unfinished ancestors
        self._open_trig = 0
        self._open_logsqrt = 0

    @property
    def complete(self) -> bool:
        return self.count == 0

    def open_ancestors(self) -> list:
        return [tok for tok, _ in self.stack]

    def allows(self, tok: str) -> bool:
        """True when tok may be placed at the next slot."""
        if self.count == 0 or not is_expression_token(tok):
            return False
        a = arity(tok)
        if is_var(tok) and var_index(tok) > self.max_vars:
            return False
        if tok in _TRIG and (self._open_trig or self._open_logsqrt):
            return False
        if tok == "-" and self.stack and self.stack[-1][0] in _LOGSQRT:
            return False
        if self.max_len is not None and self.n_tokens + self.count + a > self.max_len:
            return False  # even the shortest completion would overflow
        if self.max_depth is not None and a > 0 and len(self.stack) + 2 > self.max_depth:
            return False  # children would sit below the depth budget
        return True

    def push(self, tok: str) -> None:
        a = arity(tok)
        self.n_tokens += 1
        self.count += a - 1
        if a > 0:
            self.stack.append([tok, a])
            if tok in _TRIG:
                self._open_trig += 1
            elif tok in _LOGSQRT:
                self._open_logsqrt += 1
            return
        # leaf: completed subtrees unwind through their ancestors
        while self.stack:
            top = self.stack[-1]
            top[1] -= 1
            if top[1] > 0:
                break
            self.stack.pop()
            if top[0] in _TRIG:
                self._open_trig -= 1
            elif top[0] in _LOGSQRT:
                self._open_logsqrt -= 1


def open_ancestors(prefix) -> list:
    """Unfinished-ancestor tokens, root first, for the next slot."""
    state = GrammarState()
    for i, tok in enumerate(prefix):
        if state.complete:
            raise TrailingTokens(f"traversal complete before token {i} ({tok!r})")
        state.push(tok)
    return state.open_ancestors()


def constraint_check(prefix, candidate: str) -> bool:
    """True when candidate may legally extend the (incomplete) prefix."""
    state = GrammarState()
    for i, tok in enumerate(prefix):
        if state.complete:
            raise TrailingTokens(f"traversal complete before token {i} ({tok!r})")
        state.push(tok)
    return state.allows(candidate)


# --- parse / serialize -------------------------------------------------------

def parse_preorder(tokens) -> ExprTree:
    """Build the tree for a complete preorder traversal.

    Iterative so that pathologically deep unary chains cannot hit the
    interpreter recursion limit.
    """
    if not tokens:
        raise Malformed("empty token sequence")
    frames = []  # (token, collected children, arity)
    root = None
    for i, tok in enumerate(tokens):
        if root is not None:
            raise TrailingTokens(f"trailing token {tok!r} at position {i}")
        try:
            a = arity(tok)
        except InvalidTokenKind:
            raise Malformed(f"not an expression token: {tok!r} at position {i}") from None
        frames.append((tok, [], a))
        while frames and len(frames[-1][1]) == frames[-1][2]:
            done_tok, done_children, _ = frames.pop()
            node = ExprTree(done_tok, tuple(done_children))
            if frames:
                frames[-1][1].append(node)
            else:
                root = node
    if root is None:
        raise Malformed(f"traversal incomplete: {remaining_slots(tokens)} open slots")
    return root


def to_preorder(tree: ExprTree) -> list:
    out = []
    stack = [tree]
    while stack:
        node = stack.pop()
        out.append(node.op)
        stack.extend(reversed(node.children))
    return out


def tree_depth(tree: ExprTree) -> int:
    best = 0
    stack = [(tree, 1)]
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        stack.extend((ch, d + 1) for ch in node.children)
    return best


def const_count(tree: ExprTree) -> int:
    return sum(1 for tok in to_preorder(tree) if tok == CONST)


def max_var_index(tree: ExprTree) -> int:
    """Largest variable index referenced, 0 when constant-only."""
    idx = 0
    for tok in to_preorder(tree):
        if is_var(tok):
            idx = max(idx, var_index(tok))
    return idx


# --- sampling ----------------------------------------------------------------

def _default_tokens(max_vars: int):
    return BINARY_OPS + UNARY_OPS + (CONST,) + VAR_TOKENS[:max_vars]


@dataclass
class SkeletonConfig:
    """Random-skeleton sampler settings.

    tokens limits the alphabet (default: all operators, C, x1..x_max_vars);
    weights biases the choice per token (missing entries default to 1).
    """

    max_len: int = 30
    max_vars: int = 2
    max_depth: int | None = None
    tokens: tuple | None = None
    weights: dict | None = field(default=None)

    def __post_init__(self):
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if not 1 <= self.max_vars <= MAX_VAR_INDEX:
            raise ConfigError(f"max_vars must be in 1..{MAX_VAR_INDEX}, got {self.max_vars}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.tokens is None:
            self.tokens = _default_tokens(self.max_vars)
        else:
            self.tokens = tuple(self.tokens)
        for tok in self.tokens:
            if not is_expression_token(tok):
                raise ConfigError(f"not an expression token: {tok!r}")
            if is_var(tok) and var_index(tok) > self.max_vars:
                raise ConfigError(f"{tok!r} exceeds max_vars={self.max_vars}")
        w = dict(self.weights or {})
        for tok, val in w.items():
            if val < 0:
                raise ConfigError(f"negative weight for {tok!r}")
        if not any(arity(t) == 0 and w.get(t, 1.0) > 0 for t in self.tokens):
            raise ConfigError("alphabet needs at least one terminal with positive weight")
        self.weights = w

    def weight_vector(self) -> np.ndarray:
        return np.array([self.weights.get(t, 1.0) for t in self.tokens], dtype=float)


def sample_skeleton(rng: np.random.Generator, cfg: SkeletonConfig) -> list:
    """Draw one constraint-satisfying skeleton of length <= cfg.max_len.

    Length masking keeps every minimal completion inside the budget, so
    an overflow can never be drawn in the first place.
    """
    state = GrammarState(max_vars=cfg.max_vars, max_len=cfg.max_len, max_depth=cfg.max_depth)
    weights = cfg.weight_vector()
    tokens = cfg.tokens
    out = []
    while not state.complete:
        probs = np.array([state.allows(t) for t in tokens], dtype=float) * weights
        total = probs.sum()
        if total <= 0:
            raise ConfigError("no legal token available; alphabet/weights too restrictive")
        tok = tokens[int(rng.choice(len(tokens), p=probs / total))]
        out.append(tok)
        state.push(tok)
    return out


# --- evaluation ----------------------------------------------------------------

def _check_tree(tree: ExprTree) -> None:
    stack = [tree]
    while stack:
        node = stack.pop()
        try:
            a = arity(node.op)
        except InvalidTokenKind:
            raise Malformed(f"not an expression token: {node.op!r}") from None
        if len(node.children) != a:
            raise ArityMismatch(
                f"{node.op!r} expects {a} children, has {len(node.children)}"
            )
        stack.extend(node.children)


def evaluate(tree: ExprTree, X, constants=()) -> np.ndarray:
    """Vectorized evaluation of tree at rows of X.

    constants fill the C placeholders in preorder (left-to-right) order.
    Any domain fault anywhere in the batch poisons the whole evaluation:
    callers treat the expression as invalid on this data, not point-wise.
    """
    _check_tree(tree)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimsError(f"X must be 2-d (points, vars), got shape {X.shape}")
    n = X.shape[0]
    tokens = to_preorder(tree)
    need = max_var_index(tree)
    if need > X.shape[1]:
        raise DimsError(f"expression uses x{need} but X has {X.shape[1]} columns")
    const_positions = [i for i, t in enumerate(tokens) if t == CONST]
    constants = np.asarray(list(constants), dtype=float)
    if len(constants) != len(const_positions):
        raise ConstantCountMismatch(
            f"tree has {len(const_positions)} placeholders, got {len(constants)} constants"
        )
    const_at = dict(zip(const_positions, constants))

    # scan preorder right-to-left with a value stack; operators pop their
    # children already in left-to-right order
    stack = []
    with np.errstate(all="ignore"):
        for i in range(len(tokens) - 1, -1, -1):
            tok = tokens[i]
            a = arity(tok)
            if a == 0:
                if tok == CONST:
                    val = np.full(n, const_at[i])
                else:
                    val = X[:, var_index(tok) - 1]
            elif a == 1:
                arg = stack.pop()
                if tok == "log":
                    if np.any(arg <= 0):
                        raise DomainViolation("log of non-positive value")
                    val = np.log(arg)
                elif tok == "sqrt":
                    if np.any(arg < 0):
                        raise DomainViolation("sqrt of negative value")
                    val = np.sqrt(arg)
                elif tok == "exp":
                    val = np.exp(arg)
                elif tok == "sin":
                    val = np.sin(arg)
                else:
                    val = np.cos(arg)
            else:
                left, right = stack.pop(), stack.pop()
                if tok == "+":
                    val = left + right
                elif tok == "-":
                    val = left - right
                elif tok == "*":
                    val = left * right
                else:
                    if np.any(right == 0):
                        raise DomainViolation("division by zero")
                    val = left / right
            if not np.all(np.isfinite(val)):
                raise DomainViolation(f"non-finite value under {tok!r}")
            stack.append(val)
    assert len(stack) == 1
    return stack[0] if stack[0].base is None else stack[0].copy()
