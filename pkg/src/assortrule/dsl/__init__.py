"""The symbolic decision-rule language: trees, parsing, rendering, evaluation."""

from .nodes import (ALL_OPS, ArityError, BINARY_OPS, Call, Const,
                    DEFAULT_GEN_OPS, DecisionRule, DslError, Expr, Feature,
                    MissingFeatureError, OP_ARITY, ParameterCountError, Region,
                    UNARY_OPS, Where,
                    always_stock_gate, apply_parameters, complexity,
                    eval_expr, eval_expr_batch, evaluate, evaluate_batch,
                    extract_parameters, iter_nodes, node_count, random_rule,
                    random_tree, rule_depth, rule_features, rule_node_count,
                    tree_depth, weighted_size)
from .parser import (KEYWORDS, Lexicon, ParseError, ParseResult,
                     UnknownIdentifierError, parse)
from .render import format_number, render, render_expr

__all__ = [
    "ALL_OPS", "ArityError", "BINARY_OPS", "Call", "Const", "DEFAULT_GEN_OPS",
    "DecisionRule",
    "DslError", "Expr", "Feature", "KEYWORDS", "Lexicon",
    "MissingFeatureError", "OP_ARITY", "ParameterCountError", "ParseError", "ParseResult",
    "Region", "UNARY_OPS", "UnknownIdentifierError", "Where",
    "always_stock_gate", "apply_parameters", "complexity", "eval_expr",
    "eval_expr_batch", "evaluate", "evaluate_batch", "extract_parameters",
    "format_number", "iter_nodes", "node_count", "parse", "random_rule",
    "random_tree", "render", "render_expr", "rule_depth", "rule_features",
    "rule_node_count", "tree_depth", "weighted_size",
]
