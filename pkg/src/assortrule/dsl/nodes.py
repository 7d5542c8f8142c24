"""Expression trees for decision rules: node types, protected evaluation,
complexity metrics, parameter access, and random generation.

A decision rule is a pair of trees (gate, price) plus a threshold. Rules and
nodes are immutable; every structural edit builds a new tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

# Arity table. ``where`` is the indicator-region operator: it evaluates its
# single child when the row lies inside the region and 0 otherwise.
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
UNARY_OPS = ("log", "exp", "sqrt", "sin", "cos", "neg", "sigmoid")
ALL_OPS = BINARY_OPS + UNARY_OPS + ("where",)

OP_ARITY = {op: 2 for op in BINARY_OPS}
OP_ARITY.update({op: 1 for op in UNARY_OPS})
OP_ARITY["where"] = 1

CMP_OPS = (">", ">=", "<", "<=")

# Protected-arithmetic constants.
DIV_EPS = 1e-6
LOG_EPS = 1e-9
POW_CAP = 1e12
POW_EXP_LIMIT = 10.0
EXP_ARG_LIMIT = 50.0
VALUE_GUARD = 1e300  # absolute bound applied after every node; keeps eval finite
PRICE_FLOOR = 0.01


class DslError(ValueError):
    """Base class for rule-language errors."""


class ArityError(DslError):
    pass


class MissingFeatureError(DslError):
    def __init__(self, name: str):
        super().__init__(f"row does not provide feature '{name}'")
        self.feature = name


class ParameterCountError(DslError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned region: a conjunction of comparisons on named features."""

    conditions: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        if not self.conditions:
            raise DslError("region needs at least one condition")
        for name, cmp_op, _ in self.conditions:
            if cmp_op not in CMP_OPS:
                raise DslError(f"unknown comparison '{cmp_op}' in region on '{name}'")

    def contains(self, row: Mapping[str, float]) -> bool:
        for name, cmp_op, bound in self.conditions:
            try:
                v = row[name]
            except KeyError:
                raise MissingFeatureError(name) from None
            if not _compare(v, cmp_op, bound):
                return False
        return True

    def mask(self, cols: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        m = np.ones(n, dtype=bool)
        for name, cmp_op, bound in self.conditions:
            if name not in cols:
                raise MissingFeatureError(name)
            m &= _compare(cols[name], cmp_op, bound)
        return m

    def features(self) -> set[str]:
        return {name for name, _, _ in self.conditions}


def _compare(v, cmp_op, bound):
    if cmp_op == ">":
        return v > bound
    if cmp_op == ">=":
        return v >= bound
    if cmp_op == "<":
        return v < bound
    return v <= bound


@dataclass(frozen=True)
class Expr:
    """Base expression node."""

    def children(self) -> tuple["Expr", ...]:
        return ()

    def arity_ok(self) -> bool:
        return True


@dataclass(frozen=True)
class Feature(Expr):
    name: str


@dataclass(frozen=True)
class Const(Expr):
    value: float
    # annotation only: excluded from structural equality
    mutable: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DslError("constants must be finite")


@dataclass(frozen=True)
class Call(Expr):
    op: str
    args: tuple[Expr, ...]

    def __post_init__(self):
        if self.op not in OP_ARITY or self.op == "where":
            raise DslError(f"unknown operator '{self.op}'")
        if len(self.args) != OP_ARITY[self.op]:
            raise ArityError(
                f"operator '{self.op}' takes {OP_ARITY[self.op]} argument(s), got {len(self.args)}"
            )

    def children(self):
        return self.args


@dataclass(frozen=True)
class Where(Expr):
    """Indicator-region node: child value inside the region, 0 outside."""

    region: Region
    body: Expr

    def children(self):
        return (self.body,)


@dataclass(frozen=True)
class DecisionRule:
    """A stock/don't-stock gate plus a price formula.

    Evaluation yields (1, price) when gate(row) > tau and (0, None) otherwise.
    """

    gate: Expr
    price: Expr
    tau: float = 0.0


# ---------------------------------------------------------------------------
# protected evaluation
# ---------------------------------------------------------------------------


def _guard(v: float) -> float:
    if v != v:  # NaN
        return 0.0
    if v > VALUE_GUARD:
        return VALUE_GUARD
    if v < -VALUE_GUARD:
        return -VALUE_GUARD
    return v


def _protected_pow(a: float, b: float) -> float:
    e = min(max(b, -POW_EXP_LIMIT), POW_EXP_LIMIT)
    if e == 0.0:
        return 1.0
    base = abs(a)
    if base <= 1e-12:
        return 0.0
    try:
        raw = base ** e
    except OverflowError:
        raw = POW_CAP
    r = raw if raw < POW_CAP else POW_CAP
    return -r if a < 0 else r


def eval_expr(node: Expr, row: Mapping[str, float]) -> float:
    """Evaluate one tree on a feature row with protected arithmetic.

    Guaranteed finite for finite inputs: division, log, sqrt, pow and exp are
    protected, and every node's output is clamped to +/-VALUE_GUARD.
    """
    if isinstance(node, Feature):
        try:
            return _guard(float(row[node.name]))
        except KeyError:
            raise MissingFeatureError(node.name) from None
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Where):
        if node.region.contains(row):
            return _guard(eval_expr(node.body, row))
        return 0.0
    assert isinstance(node, Call)
    op = node.op
    a = eval_expr(node.args[0], row)
    if op == "neg":
        return _guard(-a)
    if op == "log":
        return _guard(math.log(abs(a) + LOG_EPS))
    if op == "exp":
        return _guard(math.exp(min(a, EXP_ARG_LIMIT)))
    if op == "sqrt":
        return _guard(math.sqrt(abs(a)))
    if op == "sin":
        return _guard(math.sin(a))
    if op == "cos":
        return _guard(math.cos(a))
    if op == "sigmoid":
        if a >= 0:
            return _guard(1.0 / (1.0 + math.exp(-a)))
        ea = math.exp(a)
        return _guard(ea / (1.0 + ea))
    b = eval_expr(node.args[1], row)
    if op == "add":
        return _guard(a + b)
    if op == "sub":
        return _guard(a - b)
    if op == "mul":
        return _guard(a * b)
    if op == "div":
        return _guard(a / b) if abs(b) > DIV_EPS else 1.0
    return _guard(_protected_pow(a, b))


def eval_expr_batch(node: Expr, cols: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    """Vectorized twin of :func:`eval_expr` over column arrays of length n."""
    out = _eval_batch(node, cols, n)
    if out.shape != (n,):
        out = np.broadcast_to(out, (n,)).astype(float)
    return out


def _guard_arr(v: np.ndarray) -> np.ndarray:
    v = np.where(np.isnan(v), 0.0, v)
    return np.clip(v, -VALUE_GUARD, VALUE_GUARD)


def _eval_batch(node, cols, n):
    if isinstance(node, Feature):
        if node.name not in cols:
            raise MissingFeatureError(node.name)
        return _guard_arr(np.asarray(cols[node.name], dtype=float))
    if isinstance(node, Const):
        return np.full(n, node.value)
    if isinstance(node, Where):
        body = _eval_batch(node.body, cols, n)
        return np.where(node.region.mask(cols, n), _guard_arr(body), 0.0)
    op = node.op
    a = _eval_batch(node.args[0], cols, n)
    with np.errstate(all="ignore"):
        if op == "neg":
            return _guard_arr(-a)
        if op == "log":
            return _guard_arr(np.log(np.abs(a) + LOG_EPS))
        if op == "exp":
            return _guard_arr(np.exp(np.minimum(a, EXP_ARG_LIMIT)))
        if op == "sqrt":
            return _guard_arr(np.sqrt(np.abs(a)))
        if op == "sin":
            return _guard_arr(np.sin(a))
        if op == "cos":
            return _guard_arr(np.cos(a))
        if op == "sigmoid":
            pos = 1.0 / (1.0 + np.exp(-np.maximum(a, 0.0)))
            ea = np.exp(np.minimum(a, 0.0))
            return _guard_arr(np.where(a >= 0, pos, ea / (1.0 + ea)))
        b = _eval_batch(node.args[1], cols, n)
        if op == "add":
            return _guard_arr(a + b)
        if op == "sub":
            return _guard_arr(a - b)
        if op == "mul":
            return _guard_arr(a * b)
        if op == "div":
            safe = np.abs(b) > DIV_EPS
            return np.where(safe, _guard_arr(a / np.where(safe, b, 1.0)), 1.0)
        # pow: mirror the scalar branch order exactly
        e = np.clip(b, -POW_EXP_LIMIT, POW_EXP_LIMIT)
        base = np.abs(a)
        raw = np.power(base, e)
        raw = np.where(np.isfinite(raw), raw, POW_CAP)
        r = np.minimum(raw, POW_CAP)
        r = np.where(a < 0, -r, r)
        r = np.where(base <= 1e-12, 0.0, r)
        return np.where(e == 0.0, 1.0, r)


def evaluate(rule: DecisionRule, row: Mapping[str, float],
             price_mode: str = "absolute", base_feature: str = "wprice",
             price_floor: float = PRICE_FLOOR) -> tuple[int, float | None]:
    """Apply a rule to one row: (1, positive price) or (0, None).

    ``price_mode='multiplier'`` treats the price tree as a multiplier on the
    row's ``base_feature`` column instead of an absolute price.
    """
    h = eval_expr(rule.gate, row)
    if not (h > rule.tau):
        return 0, None
    g = eval_expr(rule.price, row)
    if price_mode == "multiplier":
        try:
            g = _guard(g * float(row[base_feature]))
        except KeyError:
            raise MissingFeatureError(base_feature) from None
    return 1, max(g, price_floor)


def evaluate_batch(rule: DecisionRule, cols: Mapping[str, np.ndarray], n: int,
                   price_mode: str = "absolute", base_feature: str = "wprice",
                   price_floor: float = PRICE_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rule application. Returns (d, p) arrays; p is floored and
    only meaningful where d == 1."""
    h = eval_expr_batch(rule.gate, cols, n)
    d = (h > rule.tau).astype(int)
    g = eval_expr_batch(rule.price, cols, n)
    if price_mode == "multiplier":
        if base_feature not in cols:
            raise MissingFeatureError(base_feature)
        g = _guard_arr(g * np.asarray(cols[base_feature], dtype=float))
    p = np.maximum(g, price_floor)
    return d, p


# ---------------------------------------------------------------------------
# structure metrics and parameter plumbing
# ---------------------------------------------------------------------------


def iter_nodes(node: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [node]
    while stack:
        cur = stack.pop()
        yield cur
        stack.extend(reversed(cur.children()))


def node_count(node: Expr) -> int:
    return sum(1 for _ in iter_nodes(node))


def tree_depth(node: Expr) -> int:
    kids = node.children()
    if not kids:
        return 1
    return 1 + max(tree_depth(c) for c in kids)


def weighted_size(node: Expr) -> int:
    """Node-weighted size: internal nodes count 2, leaves count 1."""
    total = 0
    for cur in iter_nodes(node):
        total += 2 if cur.children() else 1
    return total


def complexity(rule: DecisionRule) -> float:
    """Weighted size summed over the gate and price trees."""
    return float(weighted_size(rule.gate) + weighted_size(rule.price))


def rule_node_count(rule: DecisionRule) -> int:
    return node_count(rule.gate) + node_count(rule.price)


def rule_depth(rule: DecisionRule) -> int:
    return max(tree_depth(rule.gate), tree_depth(rule.price))


def rule_features(rule: DecisionRule) -> set[str]:
    names = set()
    for tree in (rule.gate, rule.price):
        for n in iter_nodes(tree):
            if isinstance(n, Feature):
                names.add(n.name)
            elif isinstance(n, Where):
                names |= n.region.features()
    return names


def _collect_params(node: Expr, out: list[float]) -> None:
    if isinstance(node, Const) and node.mutable:
        out.append(node.value)
    for c in node.children():
        _collect_params(c, out)


def extract_parameters(rule: DecisionRule) -> list[float]:
    """Mutable constants in deterministic order: gate tree first, then price,
    each in pre-order."""
    out: list[float] = []
    _collect_params(rule.gate, out)
    _collect_params(rule.price, out)
    return out


def _write_params(node: Expr, values: Sequence[float], pos: list[int]) -> Expr:
    if isinstance(node, Const) and node.mutable:
        v = values[pos[0]]
        pos[0] += 1
        return Const(float(v), mutable=True)
    if isinstance(node, Call):
        return Call(node.op, tuple(_write_params(a, values, pos) for a in node.args))
    if isinstance(node, Where):
        return Where(node.region, _write_params(node.body, values, pos))
    return node


def apply_parameters(rule: DecisionRule, theta: Sequence[float]) -> DecisionRule:
    """Write a parameter vector back into a rule's mutable constants."""
    expected = len(extract_parameters(rule))
    if len(theta) != expected:
        raise ParameterCountError(f"expected {expected} parameters, got {len(theta)}")
    pos = [0]
    gate = _write_params(rule.gate, theta, pos)
    price = _write_params(rule.price, theta, pos)
    return DecisionRule(gate, price, rule.tau)


# ---------------------------------------------------------------------------
# random generation
# ---------------------------------------------------------------------------

DEFAULT_GEN_OPS = BINARY_OPS + UNARY_OPS


def random_tree(rng: np.random.Generator, features: Sequence[str],
                depth_range: tuple[int, int] = (2, 5),
                feature_leaf_prob: float = 0.7,
                ops: Sequence[str] = DEFAULT_GEN_OPS,
                const_range: tuple[float, float] = (-2.0, 2.0),
                region_prob: float = 0.0) -> Expr:
    """Grow a random tree whose depth falls inside ``depth_range``.

    Leaves are features with probability ``feature_leaf_prob`` and constants
    otherwise. ``region_prob`` mixes in indicator-region nodes.
    """
    if not features:
        raise DslError("feature lexicon is empty")
    lo, hi = depth_range
    if lo < 1 or hi < lo:
        raise DslError(f"bad depth range {depth_range}")
    target = int(rng.integers(lo, hi + 1))
    return _grow(rng, list(features), target, feature_leaf_prob, list(ops),
                 const_range, region_prob)


def _random_leaf(rng, features, feature_leaf_prob, const_range):
    if rng.random() < feature_leaf_prob:
        return Feature(features[int(rng.integers(len(features)))])
    lo, hi = const_range
    return Const(float(rng.uniform(lo, hi)))


def _random_region(rng, features, const_range):
    name = features[int(rng.integers(len(features)))]
    cmp_op = CMP_OPS[int(rng.integers(len(CMP_OPS)))]
    lo, hi = const_range
    return Region(((name, cmp_op, float(rng.uniform(lo, hi))),))


def _grow(rng, features, budget, p_feat, ops, const_range, region_prob):
    if budget <= 1:
        return _random_leaf(rng, features, p_feat, const_range)
    if region_prob > 0 and rng.random() < region_prob:
        body = _grow(rng, features, budget - 1, p_feat, ops, const_range, region_prob)
        return Where(_random_region(rng, features, const_range), body)
    op = ops[int(rng.integers(len(ops)))]
    if OP_ARITY[op] == 1:
        return Call(op, (_grow(rng, features, budget - 1, p_feat, ops, const_range, region_prob),))
    # one child carries the full depth so the target is reached exactly
    deep = _grow(rng, features, budget - 1, p_feat, ops, const_range, region_prob)
    other_budget = int(rng.integers(1, budget))
    other = _grow(rng, features, other_budget, p_feat, ops, const_range, region_prob)
    if rng.random() < 0.5:
        return Call(op, (deep, other))
    return Call(op, (other, deep))


def random_rule(rng: np.random.Generator, features: Sequence[str],
                depth_range: tuple[int, int] = (2, 5),
                feature_leaf_prob: float = 0.7,
                ops: Sequence[str] = DEFAULT_GEN_OPS,
                const_range: tuple[float, float] = (-2.0, 2.0),
                region_prob: float = 0.0) -> DecisionRule:
    gate = random_tree(rng, features, depth_range, feature_leaf_prob, ops,
                       const_range, region_prob)
    price = random_tree(rng, features, depth_range, feature_leaf_prob, ops,
                        const_range, region_prob)
    return DecisionRule(gate, price, 0.0)


def always_stock_gate() -> Expr:
    return Const(1.0, mutable=False)
