"""Token vocabulary.

The model's alphabet mixes three token families:

- expression tokens: operators, the constant placeholder ``C`` and
  variables ``x1``..``x9``;
- reward tokens: the 101 two-decimal strings ``"0.00"``..``"1.00"``;
- control tokens: ``<pad>`` and ``<bos>``.

Ids are frozen: ``<pad>``=0, ``<bos>``=1, then expression tokens in
canonical order, then reward tokens by level.  File formats and
checkpoints both key off this table, so its sha256 doubles as a
compatibility stamp.
"""

from __future__ import annotations

import hashlib
import json

from .errors import InvalidTokenKind

PAD = "<pad>"
BOS = "<bos>"

BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("sin", "cos", "exp", "log", "sqrt")
CONST = "C"
MAX_VAR_INDEX = 9
VAR_TOKENS = tuple(f"x{i}" for i in range(1, MAX_VAR_INDEX + 1))
REWARD_TOKENS = tuple(f"{level / 100:.2f}" for level in range(101))

EXPR_TOKENS = BINARY_OPS + UNARY_OPS + (CONST,) + VAR_TOKENS
VOCAB = (PAD, BOS) + EXPR_TOKENS + REWARD_TOKENS
TOKEN_TO_ID = {tok: i for i, tok in enumerate(VOCAB)}

_BINARY = frozenset(BINARY_OPS)
_UNARY = frozenset(UNARY_OPS)
_VARS = frozenset(VAR_TOKENS)
_REWARDS = frozenset(REWARD_TOKENS)


def is_binary(tok: str) -> bool:
    return tok in _BINARY


def is_unary(tok: str) -> bool:
    return tok in _UNARY


def is_operator(tok: str) -> bool:
    return tok in _BINARY or tok in _UNARY


def is_var(tok: str) -> bool:
    return tok in _VARS


def is_const(tok: str) -> bool:
    return tok == CONST


def is_reward(tok: str) -> bool:
    return tok in _REWARDS


def is_control(tok: str) -> bool:
    return tok == PAD or tok == BOS


def is_expression_token(tok: str) -> bool:
    return tok in _BINARY or tok in _UNARY or tok == CONST or tok in _VARS


def var_index(tok: str) -> int:
    """1-based index of a variable token ("x3" -> 3)."""
    if tok not in _VARS:
        raise InvalidTokenKind(f"not a variable token: {tok!r}")
    return int(tok[1:])


def arity(tok: str) -> int:
    """Child count of an expression token.

    Reward and control tokens have no arity; asking for one is a bug in
    the caller, not a parse error.
    """
    if tok in _BINARY:
        return 2
    if tok in _UNARY:
        return 1
    if tok == CONST or tok in _VARS:
        return 0
    raise InvalidTokenKind(f"token has no arity: {tok!r}")


def vocab_table() -> dict[str, int]:
    """Token -> id mapping, insertion-ordered by id."""
    return dict(TOKEN_TO_ID)


def vocab_json() -> str:
    """Canonical JSON rendering of the vocabulary table."""
    return json.dumps(vocab_table(), ensure_ascii=False, indent=0, sort_keys=False)


def write_vocab_json(path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(vocab_json())
        fh.write("\n")


def vocab_hash() -> str:
    """sha256 of the canonical vocabulary JSON; stored in checkpoints."""
    return hashlib.sha256(vocab_json().encode("utf-8")).hexdigest()
