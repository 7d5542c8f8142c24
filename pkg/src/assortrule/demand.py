"""Demand models, the search fitness function, and constraint checking.

Fitness (profit mode) follows the unified objective: mean per-row stocked
profit minus a squared market-price-deviation penalty, minus a weighted
complexity penalty. Regression mode scores rules by negative MAE against a
golden response with small size/depth penalties. Both modes are pure
functions of (rule, data, model, config) and reduce in fixed row order.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .data import MarketDataset
from .dsl import (DecisionRule, complexity, evaluate_batch, rule_depth,
                  rule_node_count)

# feature columns every dataset exposes to rules, before the customer vector
BASE_FEATURES = ("cost", "wprice", "hist_volume", "hist_price",
                 "scale", "forecast", "aov")


class DemandError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """One row per (customer, material) pair with purchase history.

    Column arrays are aligned; rows are sorted by (customer id, material) so
    every consumer sees the same deterministic order.
    """

    customer_ids: tuple[str, ...]
    materials: tuple[str, ...]
    k1: tuple[str, ...]
    cols: dict[str, np.ndarray]
    n: int

    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.cols.keys())


def build_feature_table(ds: MarketDataset) -> FeatureTable:
    """Aggregate history into the rule-facing feature rows.

    hist_volume is the mean transacted volume per transaction and hist_price
    the volume-weighted mean paid price for the pair.
    """
    acc: dict[tuple[str, str], list] = {}
    for t in ds.transactions:
        a = acc.setdefault((t.customer_id, t.material), [0.0, 0.0, 0])
        a[0] += t.volume
        a[1] += t.volume * t.price
        a[2] += 1
    keys = sorted(acc.keys())
    cidx = {c.id: c for c in ds.customers}
    sidx = {s.material: s for s in ds.skus}
    fdim = ds.meta.feature_dim
    names = list(BASE_FEATURES) + [f"x{i}" for i in range(fdim)]
    cols = {name: np.zeros(len(keys)) for name in names}
    k1 = []
    for i, (cid, m) in enumerate(keys):
        cust = cidx[cid]
        sku = sidx[m]
        vol, vxp, cnt = acc[(cid, m)]
        cols["cost"][i] = ds.unit_cost(cid, m)
        cols["wprice"][i] = sku.wprice
        cols["hist_volume"][i] = vol / cnt
        cols["hist_price"][i] = vxp / vol if vol > 0 else sku.wprice
        cols["scale"][i] = cust.scale
        cols["forecast"][i] = cust.forecast
        cols["aov"][i] = cust.aov
        for j in range(fdim):
            cols[f"x{j}"][i] = cust.feature_vector[j]
        k1.append(sku.k1)
    return FeatureTable(
        customer_ids=tuple(k for k, _ in keys),
        materials=tuple(m for _, m in keys),
        k1=tuple(k1),
        cols=cols,
        n=len(keys),
    )


def feature_names(ds: MarketDataset) -> tuple[str, ...]:
    return tuple(BASE_FEATURES) + tuple(f"x{i}" for i in range(ds.meta.feature_dim))


# ---------------------------------------------------------------------------
# demand models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialElasticityModel:
    """q(p) = q0 * exp(-beta * (p - p0)) per (customer, material)."""

    params: dict[tuple[str, str], tuple[float, float, float]]  # (q0, p0, beta)

    def __post_init__(self):
        for key, (q0, p0, beta) in self.params.items():
            if q0 < 0:
                raise DemandError(f"{key}: baseline demand must be nonnegative")
            if beta < 0:
                raise DemandError(f"{key}: elasticity must be nonnegative")

    @classmethod
    def from_dataset(cls, ds: MarketDataset, beta: float = 0.2,
                     betas: dict[tuple[str, str], float] | None = None):
        table = build_feature_table(ds)
        params = {}
        for i in range(table.n):
            key = (table.customer_ids[i], table.materials[i])
            b = betas.get(key, beta) if betas else beta
            params[key] = (float(table.cols["hist_volume"][i]),
                           float(table.cols["hist_price"][i]), b)
        return cls(params)

    def demand(self, customer_id: str, material: str, p: float) -> float:
        if p <= 0:
            raise DemandError("price must be positive")
        q0, p0, beta = self.params[(customer_id, material)]
        return q0 * math.exp(-beta * (p - p0))

    def _row_arrays(self, table: FeatureTable):
        cache = getattr(self, "_cache", None)
        if cache is None:
            cache = weakref.WeakKeyDictionary()
            object.__setattr__(self, "_cache", cache)
        got = cache.get(table)
        if got is None:
            q0 = np.empty(table.n)
            p0 = np.empty(table.n)
            beta = np.empty(table.n)
            for i in range(table.n):
                q0[i], p0[i], beta[i] = self.params[
                    (table.customer_ids[i], table.materials[i])]
            got = (q0, p0, beta)
            cache[table] = got
        return got

    def demand_rows(self, table: FeatureTable, p: np.ndarray) -> np.ndarray:
        q0, p0, beta = self._row_arrays(table)
        return q0 * np.exp(-beta * (p - p0))


@dataclass(frozen=True)
class RegionalLinearDemand:
    """q = max(0, s * a^gamma * (alpha*G - beta*p [- eta*(p - p_anchor)])).

    alpha/beta are per material, G is the customer's regional indicator,
    gamma the display elasticity, a the display effort (1.0 by default).
    The conflict term is active when eta > 0.
    """

    alpha: dict[str, float]
    beta: dict[str, float]
    region_g: dict[str, float]
    gamma: float = 0.5
    eta: float = 0.0
    p_anchor: dict[str, float] = field(default_factory=dict)
    display: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise DemandError("display elasticity must lie in (0, 1)")
        for m, b in self.beta.items():
            if b <= 0:
                raise DemandError(f"{m}: price slope must be positive")

    def demand(self, customer_id: str, material: str, p: float) -> float:
        if p <= 0:
            raise DemandError("price must be positive")
        a = self.display.get((customer_id, material), 1.0)
        d = self.alpha[material] * self.region_g[customer_id] - self.beta[material] * p
        if self.eta > 0.0:
            d -= self.eta * (p - self.p_anchor.get(material, p))
        return max(0.0, (a ** self.gamma) * d)

    def _row_arrays(self, table: FeatureTable):
        cache = getattr(self, "_cache", None)
        if cache is None:
            cache = weakref.WeakKeyDictionary()
            object.__setattr__(self, "_cache", cache)
        got = cache.get(table)
        if got is None:
            alpha = np.empty(table.n)
            beta = np.empty(table.n)
            g = np.empty(table.n)
            scale = np.empty(table.n)
            anchor = np.zeros(table.n)
            has_anchor = np.zeros(table.n, dtype=bool)
            for i in range(table.n):
                cid, m = table.customer_ids[i], table.materials[i]
                alpha[i] = self.alpha[m]
                beta[i] = self.beta[m]
                g[i] = self.region_g[cid]
                scale[i] = self.display.get((cid, m), 1.0) ** self.gamma
                if m in self.p_anchor:
                    anchor[i] = self.p_anchor[m]
                    has_anchor[i] = True
            got = (alpha, beta, g, scale, anchor, has_anchor)
            cache[table] = got
        return got

    def demand_rows(self, table: FeatureTable, p: np.ndarray) -> np.ndarray:
        alpha, beta, g, scale, anchor, has_anchor = self._row_arrays(table)
        d = alpha * g - beta * p
        if self.eta > 0.0:
            d = d - self.eta * np.where(has_anchor, p - anchor, 0.0)
        return np.maximum(0.0, scale * d)


def demand(model, customer_id: str, material: str, p: float) -> float:
    """Demand units for one pair at one price, under either model."""
    return model.demand(customer_id, material, p)


# ---------------------------------------------------------------------------
# fitness
# ---------------------------------------------------------------------------


@dataclass
class FitnessConfig:
    eta: float = 0.1            # market-price deviation weight
    lam: float = 0.01           # complexity weight
    tau: float = 0.0            # default gate threshold for bare price trees
    mode: str = "profit"        # 'profit' or 'regression'
    check_constraints: bool = False
    spend_band: float = 0.25
    max_per_k1: int = 5
    min_categories: int = 2
    price_mode: str = "absolute"   # or 'multiplier' on base_feature
    base_feature: str = "wprice"

    def __post_init__(self):
        if self.eta < 0 or self.lam < 0:
            raise DemandError("penalty weights must be nonnegative")


@dataclass
class FitnessReport:
    total: float
    profit_term: float
    deviation_penalty: float
    complexity_penalty: float
    stocked_count: int
    sales_value: float
    volume_units: float
    profit_total: float
    mae: float | None = None
    violating_customers: int = 0
    violations: "ConstraintReport | None" = None

    def as_row(self) -> dict:
        return {
            "total": self.total,
            "profit_term": self.profit_term,
            "deviation_penalty": self.deviation_penalty,
            "complexity_penalty": self.complexity_penalty,
            "stocked_count": self.stocked_count,
            "sales_value": self.sales_value,
            "volume_units": self.volume_units,
            "profit_total": self.profit_total,
            "mae": "" if self.mae is None else self.mae,
            "violating_customers": self.violating_customers,
        }


def rule_actions(rule: DecisionRule, table: FeatureTable, cfg: FitnessConfig
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(d, p, action) arrays; action is the price where stocked, else 0."""
    d, p = evaluate_batch(rule, table.cols, table.n,
                          price_mode=cfg.price_mode, base_feature=cfg.base_feature)
    action = np.where(d == 1, p, 0.0)
    return d, p, action


def fitness(rule: DecisionRule, data, model, cfg: FitnessConfig,
            golden: np.ndarray | None = None) -> FitnessReport:
    """Score one rule. ``data`` is a MarketDataset or a prebuilt FeatureTable.

    Profit mode:  mean_i[ 1{d}( (p-c)q(p) - eta (p - wprice)^2 ) ] - lam*size.
    Regression mode: -MAE(actions, golden) - 0.01*nodes - 0.005*depth.
    """
    table = data if isinstance(data, FeatureTable) else build_feature_table(data)
    if table.n == 0:
        raise DemandError("fitness needs at least one feature row")
    d, p, action = rule_actions(rule, table, cfg)
    stocked = d == 1
    q = model.demand_rows(table, np.where(stocked, p, table.cols["wprice"]))
    q = np.where(stocked, q, 0.0)
    unit_margin = p - table.cols["cost"]
    profit_rows = np.where(stocked, unit_margin * q, 0.0)
    dev_rows = np.where(stocked, cfg.eta * (p - table.cols["wprice"]) ** 2, 0.0)

    n = table.n
    profit_term = float(np.sum(profit_rows)) / n
    deviation_penalty = float(np.sum(dev_rows)) / n
    complexity_penalty = cfg.lam * complexity(rule)

    mae = None
    if golden is not None:
        mae = mae_vs_golden(action, golden)

    if cfg.mode == "regression":
        if mae is None:
            raise DemandError("regression fitness requires a golden response")
        total = -mae - 0.01 * rule_node_count(rule) - 0.005 * rule_depth(rule)
        profit_term = deviation_penalty = complexity_penalty = 0.0
    elif cfg.mode == "profit":
        total = profit_term - deviation_penalty - complexity_penalty
    else:
        raise DemandError(f"unknown fitness mode '{cfg.mode}'")

    report = FitnessReport(
        total=total,
        profit_term=profit_term,
        deviation_penalty=deviation_penalty,
        complexity_penalty=complexity_penalty,
        stocked_count=int(np.sum(stocked)),
        sales_value=float(np.sum(np.where(stocked, p * q, 0.0))),
        volume_units=float(np.sum(q)),
        profit_total=float(np.sum(profit_rows)),
        mae=mae,
    )
    if cfg.check_constraints:
        items = rule_items(table, stocked, p, q)
        con = check_constraints(items, _dataset_for(data), band=cfg.spend_band,
                                max_per_k1=cfg.max_per_k1,
                                min_categories=cfg.min_categories)
        report.violating_customers = con.violating_customers
        report.violations = con
    return report


def _dataset_for(data):
    if isinstance(data, MarketDataset):
        return data
    raise DemandError("constraint checking needs the full MarketDataset, "
                      "not a bare FeatureTable")


def rule_items(table: FeatureTable, stocked: np.ndarray, p: np.ndarray,
               q: np.ndarray) -> dict[str, list[tuple[str, float]]]:
    """Rule-induced plan items: expected spend p*q per stocked pair."""
    items: dict[str, list[tuple[str, float]]] = {}
    for i in range(table.n):
        if stocked[i]:
            items.setdefault(table.customer_ids[i], []).append(
                (table.materials[i], float(p[i] * q[i])))
    return items


def mae_vs_golden(actions, golden) -> float:
    """Mean absolute action distance; unstocked rows carry action 0."""
    a = np.asarray(actions, dtype=float)
    g = np.asarray(golden, dtype=float)
    if a.shape != g.shape:
        raise DemandError(f"action/golden length mismatch: {a.shape} vs {g.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean(np.abs(a - g)))


# ---------------------------------------------------------------------------
# hard-constraint checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CustomerViolation:
    customer_id: str
    over_cap_categories: tuple[str, ...]  # k1 groups holding more than the cap
    too_few_categories: bool
    spend_out_of_band: bool

    @property
    def any(self) -> bool:
        return bool(self.over_cap_categories) or self.too_few_categories or self.spend_out_of_band


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[CustomerViolation, ...]
    violating_customers: int
    over_cap_count: int
    category_count_violations: int
    spend_band_violations: int


def check_constraints(items: dict[str, list[tuple[str, float]]],
                      ds: MarketDataset, band: float = 0.25,
                      max_per_k1: int = 5, min_categories: int = 2
                      ) -> ConstraintReport:
    """Flag per-customer violations of the three hard constraints.

    items maps customer id -> [(material, spend value)]. Spend is compared
    to [1-band, 1+band] * A_c inclusive. Customers with no expected spend
    history (A_c == 0) and no items are skipped.
    """
    sidx = {s.material: s for s in ds.skus}
    violations = []
    over_cap = cat_count = band_count = 0
    for cust in ds.customers:
        entries = items.get(cust.id, [])
        if not entries and cust.aov == 0.0:
            continue
        per_k1: dict[str, set] = {}
        spend = 0.0
        for material, value in entries:
            sku = sidx.get(material)
            if sku is None:
                raise DemandError(f"plan references unknown material '{material}'")
            per_k1.setdefault(sku.k1, set()).add(material)
            spend += value
        over = tuple(sorted(k for k, mats in per_k1.items() if len(mats) > max_per_k1))
        too_few = len(per_k1) < min_categories
        lo = (1.0 - band) * cust.aov
        hi = (1.0 + band) * cust.aov
        out_of_band = not (lo <= spend <= hi)
        v = CustomerViolation(cust.id, over, too_few, out_of_band)
        if v.any:
            violations.append(v)
            over_cap += len(over)
            cat_count += int(too_few)
            band_count += int(out_of_band)
    return ConstraintReport(tuple(violations), len(violations), over_cap,
                            cat_count, band_count)
