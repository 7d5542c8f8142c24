"""Deterministic expression-construction MDP.

States are partially built prefix token sequences; actions append one symbol
(operator, feature, or snapped constant). Legality prunes any action that
could not be completed within the token budget, so every trajectory decodes
into a valid tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsl import Call, Const, DecisionRule, Expr, Feature, OP_ARITY, always_stock_gate

MAX_TOKENS_DEFAULT = 20
STATE_DIM = 20
_OP_FEATURE_SLOTS = 12  # per-operator usage counters inside the state vector

DEFAULT_RL_OPS = ("add", "sub", "mul", "div")
DEFAULT_MCTS_OPS = ("add", "sub", "mul", "div", "pow",
                    "sin", "cos", "exp", "sqrt", "log")
DEFAULT_CONST_GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)


@dataclass(frozen=True)
class Symbol:
    kind: str          # 'op' | 'feature' | 'const'
    name: str
    arity: int
    value: float = 0.0

    def label(self) -> str:
        if self.kind == "const":
            return f"c({self.value})"
        return self.name


@dataclass(frozen=True)
class BuildState:
    tokens: tuple[int, ...]
    open_slots: int

    @property
    def steps(self) -> int:
        return len(self.tokens)


class IllegalActionError(ValueError):
    pass


class ExpressionEnv:
    """Token vocabulary plus transition/legality/decoding logic."""

    def __init__(self, features, ops=DEFAULT_RL_OPS,
                 const_grid=DEFAULT_CONST_GRID, max_tokens=MAX_TOKENS_DEFAULT):
        if not features:
            raise ValueError("environment needs at least one feature")
        self.max_tokens = int(max_tokens)
        self.symbols: list[Symbol] = []
        for op in ops:
            self.symbols.append(Symbol("op", op, OP_ARITY[op]))
        for name in features:
            self.symbols.append(Symbol("feature", name, 0))
        for v in const_grid:
            self.symbols.append(Symbol("const", f"c{v}", 0, float(v)))
        self.n_actions = len(self.symbols)
        self._op_index = {s.name: i for i, s in enumerate(self.symbols) if s.kind == "op"}

    def initial(self) -> BuildState:
        return BuildState((), 1)

    def is_terminal(self, state: BuildState) -> bool:
        return state.open_slots == 0 and state.steps > 0

    def legal_actions(self, state: BuildState) -> list[int]:
        if self.is_terminal(state):
            return []
        remaining = self.max_tokens - state.steps - 1
        out = []
        for i, sym in enumerate(self.symbols):
            if state.open_slots - 1 + sym.arity <= remaining:
                out.append(i)
        return out

    def step(self, state: BuildState, action: int) -> BuildState:
        sym = self.symbols[action]
        slots = state.open_slots - 1 + sym.arity
        if self.is_terminal(state) or slots > self.max_tokens - state.steps - 1:
            raise IllegalActionError(f"action {sym.label()} illegal in state {state}")
        return BuildState(state.tokens + (action,), slots)

    def state_key(self, state: BuildState) -> str:
        return " ".join(self.symbols[a].label() for a in state.tokens)

    # decoding ---------------------------------------------------------------

    def to_expr(self, state: BuildState) -> Expr:
        if not self.is_terminal(state):
            raise ValueError("cannot decode a partial expression")
        pos = [0]

        def build() -> Expr:
            sym = self.symbols[state.tokens[pos[0]]]
            pos[0] += 1
            if sym.kind == "feature":
                return Feature(sym.name)
            if sym.kind == "const":
                return Const(sym.value)
            args = tuple(build() for _ in range(sym.arity))
            return Call(sym.name, args)

        return build()

    def to_rule(self, state: BuildState, tau: float = 0.0) -> DecisionRule:
        return DecisionRule(always_stock_gate(), self.to_expr(state), tau)

    # state featurisation -----------------------------------------------------

    def features20(self, state: BuildState) -> np.ndarray:
        """Fixed 20-dimensional description of the construction state."""
        v = np.zeros(STATE_DIM)
        n = state.steps
        mt = self.max_tokens
        feat_count = const_count = 0
        op_counts = np.zeros(_OP_FEATURE_SLOTS)
        weighted = 0
        for a in state.tokens:
            sym = self.symbols[a]
            if sym.kind == "feature":
                feat_count += 1
                weighted += 1
            elif sym.kind == "const":
                const_count += 1
                weighted += 1
            else:
                weighted += 2
                slot = self._op_index[sym.name] % _OP_FEATURE_SLOTS
                op_counts[slot] += 1
        v[0] = state.open_slots / mt
        v[1] = n / mt
        v[2] = (mt - n) / mt
        v[3] = feat_count / mt
        v[4] = const_count / mt
        v[5] = (feat_count + const_count) / n if n else 0.0
        v[6] = weighted / (2 * mt)
        v[7:7 + _OP_FEATURE_SLOTS] = op_counts / mt
        v[19] = 1.0
        return v
