"""Evolutionary search over decision rules.

mu+lambda style: each generation mutates/crosses the population into a
candidate set, merges parents and candidates, and keeps the top-ranked
elite plus tournament-selected survivors. The best-so-far rule is archived,
so reported best fitness never regresses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..demand import FitnessConfig, build_feature_table, fitness, rule_actions, mae_vs_golden
from ..dsl import (Call, Const, DecisionRule, Expr, Feature, Where,
                   DEFAULT_GEN_OPS, iter_nodes, random_rule, random_tree,
                   tree_depth)
from ..dsl.nodes import _random_leaf  # shared leaf sampler


@dataclass
class EvoConfig:
    population: int = 50
    generations: int = 500
    p_expand: float = 0.1      # structural expansion
    p_prune: float = 0.1       # structural pruning
    p_perturb: float = 0.1     # constant perturbation
    p_leaf_swap: float = 0.0   # experimental fifth kind (feature <-> feature)
    poisson_lam: float = 1.0   # inserted-subtree depth draw
    sigma: float = 0.1         # constant perturbation noise
    elitism: float = 0.10
    tournament_size: int = 3
    max_depth: int = 12
    patience: int = 50
    depth_range: tuple[int, int] = (2, 5)
    feature_leaf_prob: float = 0.7
    const_range: tuple[float, float] = (-2.0, 2.0)
    ops: tuple[str, ...] = DEFAULT_GEN_OPS
    region_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        total = self.p_expand + self.p_prune + self.p_perturb + self.p_leaf_swap
        if total > 1.0 + 1e-12:
            raise ValueError("mutation probabilities exceed 1 (no room for crossover)")
        if not 0.0 < self.elitism <= 1.0:
            raise ValueError("elitism fraction must lie in (0, 1]")

    @property
    def elite_count(self) -> int:
        return max(1, int(self.elitism * self.population))


@dataclass
class SearchTrace:
    generation: list[int] = field(default_factory=list)
    best: list[float] = field(default_factory=list)
    mean: list[float] = field(default_factory=list)
    mae: list[float | None] = field(default_factory=list)
    snapshots: list[DecisionRule] = field(default_factory=list)

    def append(self, gen, best, mean, mae, snapshot):
        self.generation.append(gen)
        self.best.append(best)
        self.mean.append(mean)
        self.mae.append(mae)
        self.snapshots.append(snapshot)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "best", "mean"])
            for g, b, m in zip(self.generation, self.best, self.mean):
                w.writerow([g, repr(b), repr(m)])

    def write_mae_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "mae"])
            for g, m in zip(self.generation, self.mae):
                w.writerow([g, "" if m is None else repr(m)])


@dataclass
class EvoResult:
    rule: DecisionRule
    fitness: float
    trace: SearchTrace


# ---------------------------------------------------------------------------
# tree surgery
# ---------------------------------------------------------------------------


def _node_list(tree: Expr) -> list[Expr]:
    return list(iter_nodes(tree))


def _replace_at(tree: Expr, index: int, replacement: Expr) -> Expr:
    """Replace the node at the given pre-order index."""
    counter = [0]

    def walk(node: Expr) -> Expr:
        i = counter[0]
        counter[0] += 1
        if i == index:
            _skip(node)
            return replacement
        if isinstance(node, Call):
            return Call(node.op, tuple(walk(a) for a in node.args))
        if isinstance(node, Where):
            return Where(node.region, walk(node.body))
        return node

    def _skip(node: Expr) -> None:
        for c in node.children():
            counter[0] += 1
            _skip(c)

    return walk(tree)


def _subtree_at(tree: Expr, index: int) -> Expr:
    for i, node in enumerate(iter_nodes(tree)):
        if i == index:
            return node
    raise IndexError(index)


def _leftmost_leaf(node: Expr) -> Expr:
    while node.children():
        node = node.children()[0]
    return node


def truncate_depth(node: Expr, budget: int) -> Expr:
    """Repair-by-truncation: subtrees beyond the budget collapse to their
    leftmost leaf."""
    if budget <= 1:
        return node if not node.children() else _leftmost_leaf(node)
    if isinstance(node, Call):
        return Call(node.op, tuple(truncate_depth(a, budget - 1) for a in node.args))
    if isinstance(node, Where):
        return Where(node.region, truncate_depth(node.body, budget - 1))
    return node


def _perturb_constants(tree: Expr, rng: np.random.Generator, sigma: float) -> Expr:
    if isinstance(tree, Const) and tree.mutable:
        return Const(tree.value + float(rng.normal(0.0, sigma)) if sigma > 0 else tree.value)
    if isinstance(tree, Call):
        return Call(tree.op, tuple(_perturb_constants(a, rng, sigma) for a in tree.args))
    if isinstance(tree, Where):
        return Where(tree.region, _perturb_constants(tree.body, rng, sigma))
    return tree


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def init_population(cfg: EvoConfig, features, rng: np.random.Generator | None = None
                    ) -> list[DecisionRule]:
    if cfg.population < 2:
        raise ValueError("population must be at least 2")
    rng = rng or np.random.default_rng(cfg.seed)
    return [random_rule(rng, features, cfg.depth_range, cfg.feature_leaf_prob,
                        cfg.ops, cfg.const_range, cfg.region_prob)
            for _ in range(cfg.population)]


def subtree_depth_draw(rng: np.random.Generator, lam: float) -> int:
    """Depth increment for structural expansion, Poisson distributed."""
    return int(rng.poisson(lam))


def mutate(rule: DecisionRule, cfg: EvoConfig, rng: np.random.Generator,
           features) -> tuple[DecisionRule, str]:
    """Apply exactly one mutation kind, chosen by the configured weights."""
    weights = np.array([cfg.p_expand, cfg.p_prune, cfg.p_perturb, cfg.p_leaf_swap])
    if weights.sum() <= 0:
        raise ValueError("all mutation probabilities are zero")
    kind = ("expand", "prune", "perturb", "leaf_swap")[
        int(rng.choice(4, p=weights / weights.sum()))]
    slot = "gate" if rng.random() < 0.5 else "price"
    tree = getattr(rule, slot)

    if kind == "expand":
        nodes = _node_list(tree)
        idx = int(rng.integers(len(nodes)))
        depth = subtree_depth_draw(rng, cfg.poisson_lam) + 1
        sub = random_tree(rng, features, (depth, depth), cfg.feature_leaf_prob,
                          cfg.ops, cfg.const_range, cfg.region_prob)
        new = truncate_depth(_replace_at(tree, idx, sub), cfg.max_depth)
    elif kind == "prune":
        internal = [i for i, n in enumerate(iter_nodes(tree)) if n.children()]
        if not internal:
            return rule, "prune-noop"
        idx = internal[int(rng.integers(len(internal)))]
        leaf = _random_leaf(rng, list(features), cfg.feature_leaf_prob, cfg.const_range)
        new = _replace_at(tree, idx, leaf)
    elif kind == "perturb":
        new = _perturb_constants(tree, rng, cfg.sigma)
        if new == tree:
            return rule, "perturb-noop"
    else:  # leaf_swap
        feats = [i for i, n in enumerate(iter_nodes(tree)) if isinstance(n, Feature)]
        if not feats:
            return rule, "leaf_swap-noop"
        idx = feats[int(rng.integers(len(feats)))]
        name = features[int(rng.integers(len(features)))]
        new = _replace_at(tree, idx, Feature(name))

    if slot == "gate":
        return DecisionRule(new, rule.price, rule.tau), kind
    return DecisionRule(rule.gate, new, rule.tau), kind


def crossover(a: DecisionRule, b: DecisionRule, rng: np.random.Generator,
              max_depth: int = 12) -> tuple[DecisionRule, DecisionRule]:
    """Swap uniformly chosen subtrees between the same slot of two rules."""
    slot = "gate" if rng.random() < 0.5 else "price"
    ta, tb = getattr(a, slot), getattr(b, slot)
    ia = int(rng.integers(len(_node_list(ta))))
    ib = int(rng.integers(len(_node_list(tb))))
    sa = _subtree_at(ta, ia)
    sb = _subtree_at(tb, ib)
    na = truncate_depth(_replace_at(ta, ia, sb), max_depth)
    nb = truncate_depth(_replace_at(tb, ib, sa), max_depth)
    if slot == "gate":
        return (DecisionRule(na, a.price, a.tau), DecisionRule(nb, b.price, b.tau))
    return (DecisionRule(a.gate, na, a.tau), DecisionRule(b.gate, nb, b.tau))


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------


def run(cfg: EvoConfig, data, model, fit_cfg: FitnessConfig, features=None,
        golden: np.ndarray | None = None) -> EvoResult:
    """Evolve for cfg.generations (or until the best stalls for cfg.patience)."""
    table = data if hasattr(data, "cols") else build_feature_table(data)
    if features is None:
        features = table.feature_names()
    rng = np.random.default_rng(cfg.seed)
    scores: dict[DecisionRule, float] = {}

    def score(rule: DecisionRule) -> float:
        got = scores.get(rule)
        if got is None:
            got = fitness(rule, table, model, fit_cfg, golden=golden).total
            scores[rule] = got
        return got

    population = init_population(cfg, features, rng)
    for r in population:
        score(r)
    best_rule = max(population, key=score)
    best_fit = score(best_rule)
    trace = SearchTrace()
    mae0 = _archive_mae(best_rule, table, fit_cfg, golden)
    trace.append(0, best_fit, float(np.mean([score(r) for r in population])),
                 mae0, best_rule)

    stale = 0
    m = cfg.population
    for gen in range(1, cfg.generations + 1):
        candidates: list[DecisionRule] = []
        while len(candidates) < m:
            u = rng.random()
            if u < cfg.p_expand + cfg.p_prune + cfg.p_perturb + cfg.p_leaf_swap:
                parent = population[int(rng.integers(m))]
                child, _ = mutate(parent, cfg, rng, features)
                candidates.append(child)
            else:
                pa = _tournament(population, score, cfg.tournament_size, rng)
                pb = _tournament(population, score, cfg.tournament_size, rng)
                ca, cb = crossover(pa, pb, rng, cfg.max_depth)
                candidates.append(ca)
                if len(candidates) < m:
                    candidates.append(cb)
        merged = population + candidates
        for r in merged:
            score(r)
        ranked = sorted(merged, key=score, reverse=True)
        elite = ranked[: cfg.elite_count]
        rest = [_tournament(merged, score, cfg.tournament_size, rng)
                for _ in range(m - len(elite))]
        population = elite + rest

        gen_best = ranked[0]
        if score(gen_best) > best_fit:
            best_rule, best_fit = gen_best, score(gen_best)
            stale = 0
        else:
            stale += 1
        trace.append(gen, best_fit,
                     float(np.mean([score(r) for r in population])),
                     _archive_mae(best_rule, table, fit_cfg, golden), best_rule)
        if stale >= cfg.patience:
            break
    return EvoResult(best_rule, best_fit, trace)


def _tournament(pool, score, k, rng):
    picks = [pool[int(rng.integers(len(pool)))] for _ in range(k)]
    return max(picks, key=score)


def _archive_mae(rule, table, fit_cfg, golden):
    if golden is None:
        return None
    _, _, action = rule_actions(rule, table, fit_cfg)
    return mae_vs_golden(action, golden)
