"""Canonical text rendering for rules.

The canonical surface form is the expression pair ``gate: <expr>; price:
<expr>`` (plus ``; tau: <t>`` when the threshold is nonzero). Rendering is
deterministic and emits the minimal parentheses needed so that parsing the
output reproduces the tree exactly.
"""

from __future__ import annotations

from .nodes import Call, Const, DecisionRule, Expr, Feature, Region, Where

# Precedence levels used to decide parenthesisation.
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_UNARY = 3
_PREC_POW = 4
_PREC_ATOM = 5

_INFIX = {"add": ("+", _PREC_ADD), "sub": ("-", _PREC_ADD),
          "mul": ("*", _PREC_MUL), "div": ("/", _PREC_MUL)}


def format_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def render_region(region: Region) -> str:
    parts = []
    for name, cmp_op, bound in region.conditions:
        parts.append(f"{name} {cmp_op} {format_number(bound)}")
    return " and ".join(parts)


def render_expr(node: Expr) -> str:
    return _render(node, 0)


def _render(node: Expr, ctx: int) -> str:
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Const):
        text = format_number(node.value)
        # a negative literal binds like a unary-minus expression
        if node.value < 0 and ctx > _PREC_UNARY:
            return f"({text})"
        return text
    if isinstance(node, Where):
        return f"where({render_region(node.region)}, {_render(node.body, 0)})"
    assert isinstance(node, Call)
    op = node.op
    if op in _INFIX:
        sym, prec = _INFIX[op]
        # left-associative: the right operand needs strictly higher binding
        text = f"{_render(node.args[0], prec)} {sym} {_render(node.args[1], prec + 1)}"
        return f"({text})" if prec < ctx else text
    if op == "pow":
        text = f"{_render(node.args[0], _PREC_ATOM)} ** {_render(node.args[1], _PREC_UNARY)}"
        return f"({text})" if _PREC_POW < ctx else text
    if op == "neg":
        child = node.args[0]
        if isinstance(child, Const):
            # parenthesise so the parser cannot fold this into a literal
            text = f"-({format_number(child.value)})"
        else:
            text = f"-{_render(child, _PREC_UNARY)}"
        return f"({text})" if _PREC_UNARY < ctx else text
    # unary function call
    return f"{op}({_render(node.args[0], 0)})"


def render(rule: DecisionRule) -> str:
    """Canonical one-line source for a rule."""
    text = f"gate: {render_expr(rule.gate)}; price: {render_expr(rule.price)}"
    if rule.tau != 0.0:
        text += f"; tau: {format_number(rule.tau)}"
    return text
