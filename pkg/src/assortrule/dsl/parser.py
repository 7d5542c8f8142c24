"""Rule-source parser with misspelling correction.

Two surface forms are accepted and normalised to the same tree:

* expression pair   ``gate: <expr>; price: <expr>[; tau: <t>]``
* decision function  nested ``if``/``else`` blocks with ``return``
  expressions (optionally wrapped in a ``def ...(row):`` header); lowers to
  an arithmetic tree built from indicator-region nodes.

Unknown identifiers within the lexicon's edit-distance threshold are
corrected and logged; anything further away is an error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..util import levenshtein, nearest_token
from .nodes import (ArityError, Call, Const, DecisionRule, DslError, Expr,
                    Feature, Region, UNARY_OPS, Where)

KEYWORDS = ("gate", "price", "tau", "if", "else", "return", "def", "and",
            "where", "row") + UNARY_OPS


class ParseError(DslError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} @ {line}:{col}")
        self.line = line
        self.col = col


class UnknownIdentifierError(ParseError):
    pass


@dataclass
class Lexicon:
    """Known feature names plus language keywords, with a correction radius.

    Keywords are contextual, so a feature may share a keyword's spelling
    (``price`` is a common column name).
    """

    features: tuple[str, ...]
    max_distance: int = 2

    def __post_init__(self):
        self.features = tuple(self.features)
        if len(set(self.features)) != len(self.features):
            raise DslError("duplicate feature names in lexicon")

    @property
    def tokens(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.features + KEYWORDS)
        return tuple(seen)


@dataclass
class ParseResult:
    rule: DecisionRule
    corrections: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<NUMBER>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<STRING>'[^']*'|"[^"]*")
  | (?P<OP>\*\*|>=|<=|[-+*/()\[\]:;,><])
  | (?P<WS>[ \t]+)
  | (?P<COMMENT>\#[^\n]*)
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # NUMBER IDENT STRING OP NEWLINE INDENT DEDENT EOF
    value: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    indents = [0]
    lines = text.split("\n")
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indent = 0
        for ch in raw:
            if ch == " ":
                indent += 1
            elif ch == "\t":
                indent += 4
            else:
                break
        if indent > indents[-1]:
            indents.append(indent)
            tokens.append(Token("INDENT", "", lineno, 1))
        else:
            while indent < indents[-1]:
                indents.pop()
                tokens.append(Token("DEDENT", "", lineno, 1))
            if indent != indents[-1]:
                raise ParseError("inconsistent indentation", lineno, 1)
        pos = len(raw) - len(raw.lstrip())
        while pos < len(raw):
            m = _TOKEN_RE.match(raw, pos)
            if m is None:
                raise ParseError(f"unexpected character {raw[pos]!r}", lineno, pos + 1)
            kind = m.lastgroup
            if kind not in ("WS", "COMMENT"):
                value = m.group()
                if kind == "STRING":
                    value = value[1:-1]
                tokens.append(Token(kind, value, lineno, pos + 1))
            pos = m.end()
        tokens.append(Token("NEWLINE", "", lineno, len(raw) + 1))
    while len(indents) > 1:
        indents.pop()
        tokens.append(Token("DEDENT", "", len(lines), 1))
    tokens.append(Token("EOF", "", len(lines) + 1, 1))
    return tokens


def _def_header_span(tokens: list[Token]) -> set[int]:
    """Indices of tokens inside a leading ``def ...:`` header (never corrected)."""
    i = 0
    while i < len(tokens) and tokens[i].kind in ("NEWLINE", "INDENT", "DEDENT"):
        i += 1
    if i >= len(tokens) or tokens[i].kind != "IDENT" or tokens[i].value != "def":
        return set()
    span = set()
    while i < len(tokens) and not (tokens[i].kind == "OP" and tokens[i].value == ":"):
        span.add(i)
        i += 1
    return span


def _correct_tokens(tokens: list[Token], lexicon: Lexicon) -> list[str]:
    """Rewrite unknown identifiers in place; returns the correction log."""
    log: list[str] = []
    known = set(lexicon.tokens)
    header = _def_header_span(tokens)
    for idx, tok in enumerate(tokens):
        if idx in header:
            continue
        if tok.kind == "IDENT" and tok.value not in known:
            fixed, dist = nearest_token(tok.value, lexicon.tokens, lexicon.max_distance)
            if fixed is None:
                raise UnknownIdentifierError(
                    f"unknown identifier '{tok.value}' (no token within distance "
                    f"{lexicon.max_distance})", tok.line, tok.col)
            log.append(f"corrected {tok.value} -> {fixed} @ {tok.line}:{tok.col}")
            tok.value = fixed
        elif tok.kind == "STRING":
            # strings only name features (row['...'] subscripts)
            if tok.value in lexicon.features:
                continue
            fixed, dist = nearest_token(tok.value, lexicon.features, lexicon.max_distance)
            if fixed is None:
                raise UnknownIdentifierError(
                    f"unknown feature '{tok.value}' (no feature within distance "
                    f"{lexicon.max_distance})", tok.line, tok.col)
            log.append(f"corrected {tok.value} -> {fixed} @ {tok.line}:{tok.col}")
            tok.value = fixed
    return log


# ---------------------------------------------------------------------------
# recursive-descent parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token], lexicon: Lexicon):
        self.tokens = tokens
        self.pos = 0
        self.lexicon = lexicon

    # token helpers ---------------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def skip_newlines(self):
        while self.peek().kind in ("NEWLINE", "INDENT", "DEDENT"):
            self.next()

    def expect_op(self, value: str) -> Token:
        tok = self.next()
        if tok.kind != "OP" or tok.value != value:
            raise ParseError(f"expected '{value}', found {tok.value or tok.kind!r}",
                             tok.line, tok.col)
        return tok

    def expect_keyword(self, word: str) -> Token:
        tok = self.next()
        if tok.kind != "IDENT" or tok.value != word:
            raise ParseError(f"expected '{word}', found {tok.value or tok.kind!r}",
                             tok.line, tok.col)
        return tok

    def at_op(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind == "OP" and tok.value == value

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.value == word

    # entry points ----------------------------------------------------------

    def parse_rule(self) -> DecisionRule:
        self.skip_newlines()
        nxt = self.peek(1)
        if self.at_keyword("gate") and nxt.kind == "OP" and nxt.value == ":":
            return self.parse_pair_form()
        return self.parse_function_form()

    def parse_pair_form(self) -> DecisionRule:
        self.expect_keyword("gate")
        self.expect_op(":")
        gate = self.parse_expr()
        self.expect_op(";")
        self.skip_newlines()
        self.expect_keyword("price")
        self.expect_op(":")
        price = self.parse_expr()
        tau = 0.0
        self.skip_newlines()
        if self.at_op(";"):
            self.next()
            self.skip_newlines()
            if self.at_keyword("tau"):
                self.next()
                self.expect_op(":")
                tau = self.parse_signed_number()
                self.skip_newlines()
                if self.at_op(";"):
                    self.next()
        self.skip_newlines()
        self.expect_eof()
        return DecisionRule(gate, price, tau)

    def parse_function_form(self) -> DecisionRule:
        if self.at_keyword("def"):
            # tolerate any header shape; everything up to ':' is ignored
            self.next()
            while not self.at_op(":"):
                tok = self.next()
                if tok.kind == "EOF":
                    raise ParseError("unterminated 'def' header", tok.line, tok.col)
            self.next()
            self.skip_newlines()
        stmts = self.parse_statements(top=True)
        price = self.lower_statements(stmts)
        self.skip_newlines()
        self.expect_eof()
        return DecisionRule(Const(1.0, mutable=False), price, 0.0)

    def expect_eof(self):
        tok = self.peek()
        if tok.kind != "EOF":
            raise ParseError(f"unexpected trailing input {tok.value or tok.kind!r}",
                             tok.line, tok.col)

    # statements (function form) --------------------------------------------

    def parse_statements(self, top: bool = False) -> list:
        stmts = []
        while True:
            while self.peek().kind == "NEWLINE":
                self.next()
            tok = self.peek()
            if tok.kind in ("DEDENT", "EOF"):
                break
            if tok.kind == "IDENT" and tok.value == "if":
                stmts.append(self.parse_if())
            elif tok.kind == "IDENT" and tok.value == "return":
                self.next()
                expr = self.parse_expr()
                stmts.append(("return", expr))
            else:
                raise ParseError(f"expected 'if' or 'return', found "
                                 f"{tok.value or tok.kind!r}", tok.line, tok.col)
        return stmts

    def parse_if(self):
        self.expect_keyword("if")
        region = self.parse_condition()
        self.expect_op(":")
        true_suite = self.parse_suite()
        else_suite = None
        while self.peek().kind == "NEWLINE":
            self.next()
        if self.at_keyword("else"):
            self.next()
            self.expect_op(":")
            else_suite = self.parse_suite()
        return ("if", region, true_suite, else_suite)

    def parse_suite(self) -> list:
        if self.peek().kind != "NEWLINE":
            # inline suite: a single return statement on the same line
            self.expect_keyword("return")
            return [("return", self.parse_expr())]
        while self.peek().kind == "NEWLINE":
            self.next()
        tok = self.next()
        if tok.kind != "INDENT":
            raise ParseError("expected an indented block", tok.line, tok.col)
        stmts = self.parse_statements()
        tok = self.next()
        if tok.kind != "DEDENT":
            raise ParseError("expected end of block", tok.line, tok.col)
        return stmts

    def lower_statements(self, stmts: list) -> Expr:
        """Lower a statement list to one expression.

        ``if C: T else: F`` becomes ``where(C, T - F) + F`` which equals
        ``T`` inside the region and ``F`` outside. A missing ``else`` falls
        through to the remaining statements. Statements after a ``return``
        are unreachable and ignored (LLM-emitted functions often carry a
        trailing fallback return).
        """
        if not stmts:
            raise DslError("a branch never returns; add a 'return' statement")
        head = stmts[0]
        if head[0] == "return":
            return head[1]
        _, region, true_suite, else_suite = head
        t_expr = self.lower_statements(true_suite)
        if else_suite is not None:
            f_expr = self.lower_statements(else_suite)
        else:
            f_expr = self.lower_statements(stmts[1:])
        return Call("add", (Where(region, Call("sub", (t_expr, f_expr))), f_expr))

    # conditions -------------------------------------------------------------

    def parse_condition(self) -> Region:
        conds = [self.parse_comparison()]
        while self.at_keyword("and"):
            self.next()
            conds.append(self.parse_comparison())
        return Region(tuple(conds))

    def parse_comparison(self) -> tuple[str, str, float]:
        left_tok = self.peek()
        left = self.parse_operand()
        op_tok = self.next()
        if op_tok.kind != "OP" or op_tok.value not in (">", ">=", "<", "<="):
            raise ParseError(f"expected a comparison operator, found "
                             f"{op_tok.value or op_tok.kind!r}", op_tok.line, op_tok.col)
        right = self.parse_operand()
        if isinstance(left, str) and isinstance(right, float):
            return (left, op_tok.value, right)
        if isinstance(left, float) and isinstance(right, str):
            flipped = {">": "<", ">=": "<=", "<": ">", "<=": ">="}
            return (right, flipped[op_tok.value], left)
        raise ParseError("conditions must compare a feature with a number",
                         left_tok.line, left_tok.col)

    def parse_operand(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            return float(tok.value)
        if tok.kind == "OP" and tok.value == "-":
            self.next()
            num = self.next()
            if num.kind != "NUMBER":
                raise ParseError("expected a number after '-'", num.line, num.col)
            return -float(num.value)
        return self.parse_feature_name()

    def parse_feature_name(self) -> str:
        tok = self.next()
        if tok.kind == "IDENT" and tok.value == "row":
            self.expect_op("[")
            s = self.next()
            if s.kind != "STRING":
                raise ParseError("expected a quoted feature name in row[...]",
                                 s.line, s.col)
            self.expect_op("]")
            return s.value
        if tok.kind == "IDENT" and tok.value in self.lexicon.features:
            return tok.value
        raise ParseError(f"expected a feature name, found {tok.value or tok.kind!r}",
                         tok.line, tok.col)

    # expressions ------------------------------------------------------------

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.at_op("+") or self.at_op("-"):
            op = self.next().value
            rhs = self.parse_term()
            node = Call("add" if op == "+" else "sub", (node, rhs))
        return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while self.at_op("*") or self.at_op("/"):
            op = self.next().value
            rhs = self.parse_unary()
            node = Call("mul" if op == "*" else "div", (node, rhs))
        return node

    def parse_unary(self) -> Expr:
        if self.at_op("-"):
            self.next()
            after = self.peek(1)
            if self.peek().kind == "NUMBER" and not (after.kind == "OP" and after.value == "**"):
                # a negated literal is a negative constant, not a neg node;
                # '**' binds tighter, so -2 ** x stays neg(pow(2, x))
                tok = self.next()
                return Const(-float(tok.value))
            return Call("neg", (self.parse_unary(),))
        return self.parse_power()

    def parse_power(self) -> Expr:
        node = self.parse_atom()
        return self.parse_power_tail(node)

    def parse_power_tail(self, node: Expr) -> Expr:
        if self.at_op("**"):
            self.next()
            exponent = self.parse_unary()  # right-associative
            return Call("pow", (node, exponent))
        return node

    def parse_atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "NUMBER":
            return Const(float(tok.value))
        if tok.kind == "OP" and tok.value == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if tok.kind == "IDENT":
            word = tok.value
            if word == "where" and self.at_op("("):
                self.next()
                region = self.parse_condition()
                self.expect_op(",")
                body = self.parse_expr()
                self.expect_op(")")
                return Where(region, body)
            if word in UNARY_OPS and self.at_op("("):
                self.next()
                args = [self.parse_expr()]
                while self.at_op(","):
                    self.next()
                    args.append(self.parse_expr())
                self.expect_op(")")
                if len(args) != 1:
                    raise ArityError(
                        f"operator '{word}' takes 1 argument(s), got {len(args)}"
                        f" @ {tok.line}:{tok.col}")
                return Call(word, tuple(args))
            if word == "row" and self.at_op("["):
                self.pos -= 1
                return Feature(self.parse_feature_name())
            if word in self.lexicon.features:
                return Feature(word)
            raise ParseError(f"'{word}' cannot start an expression", tok.line, tok.col)
        raise ParseError(f"unexpected {tok.value or tok.kind!r}", tok.line, tok.col)

    def parse_signed_number(self) -> float:
        neg = False
        if self.at_op("-"):
            self.next()
            neg = True
        tok = self.next()
        if tok.kind != "NUMBER":
            raise ParseError("expected a number", tok.line, tok.col)
        v = float(tok.value)
        return -v if neg else v


def parse(text: str, lexicon: Lexicon) -> ParseResult:
    """Parse rule source into a DecisionRule plus the correction log."""
    if not text or not text.strip():
        raise DslError("empty rule source")
    tokens = tokenize(text)
    corrections = _correct_tokens(tokens, lexicon)
    rule = _Parser(tokens, lexicon).parse_rule()
    return ParseResult(rule, corrections)
