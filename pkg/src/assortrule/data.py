"""Market data loading, validation, and preprocessing.

The canonical container is :class:`MarketDataset`: customers, SKUs,
transactions, store profiles and an expense ledger, all immutable after
loading and safe for concurrent reads. Two storage formats are supported, a
CSV bundle (one file per table) and a single JSON document; loading either
one, saving and loading again reproduces the dataset exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .util import levenshtein

CSV_FILES = ("customers.csv", "skus.csv", "transactions.csv", "stores.csv",
             "expenses.csv", "costs.csv")


class DataError(ValueError):
    """Base class for ingestion failures."""


class SchemaError(DataError):
    pass


class DanglingReferenceError(DataError):
    pass


class MalformedCellError(DataError):
    pass


class UndefinedPriceError(DataError):
    pass


@dataclass(frozen=True)
class CustomerRecord:
    id: str
    name: str
    latitude: float
    longitude: float
    scale: float            # business scale s_k
    aov: float              # monthly average order value A_c
    forecast: float         # forecast total volume
    feature_vector: tuple[float, ...] = ()
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise SchemaError(f"customer {self.id}: latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise SchemaError(f"customer {self.id}: longitude {self.longitude} out of range")
        if self.aov < 0:
            raise SchemaError(f"customer {self.id}: negative average order value")
        if self.scale < 0 or self.forecast < 0:
            raise SchemaError(f"customer {self.id}: negative scale or forecast")


@dataclass(frozen=True)
class SkuRecord:
    material: str
    k1: str                 # primary category
    k2: str                 # secondary category
    cost: float             # unit cost
    wprice: float           # sales-weighted market unit price
    embedding: tuple[float, ...] = ()
    locked: float | None = None  # policy-locked allocation value, if any

    def __post_init__(self):
        if self.cost < 0:
            raise SchemaError(f"sku {self.material}: negative unit cost")
        if self.locked is not None and self.locked < 0:
            raise SchemaError(f"sku {self.material}: negative locked amount")


@dataclass(frozen=True)
class Transaction:
    customer_id: str
    material: str
    volume: float
    price: float
    period: int

    def __post_init__(self):
        if self.volume < 0:
            raise SchemaError(f"transaction {self.customer_id}/{self.material}: negative volume")
        if not self.price > 0:
            raise SchemaError(f"transaction {self.customer_id}/{self.material}: non-positive price")


@dataclass(frozen=True)
class StoreProfile:
    id: str
    latitude: float
    longitude: float
    demographics: tuple[float, ...] = ()

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise SchemaError(f"store {self.id}: latitude out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise SchemaError(f"store {self.id}: longitude out of range")


@dataclass(frozen=True)
class ExpenseLedger:
    entries: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for name, total in self.entries:
            if total < 0:
                raise SchemaError(f"expense {name}: negative total")

    def total(self) -> float:
        return sum(v for _, v in self.entries)


@dataclass(frozen=True)
class CostRow:
    client_name: str
    material: str
    unit_cost: float


@dataclass(frozen=True)
class DatasetMeta:
    feature_dim: int = 0
    demo_dim: int = 0
    currency: str = "CU"
    period_min: int = 0
    period_max: int = 0


@dataclass(frozen=True)
class CostMatchReport:
    matched: tuple[tuple[str, str, str, float], ...] = ()  # (customer, material, client_name, cost)
    unmatched: tuple[tuple[str, str, int], ...] = ()       # (client_name, material, best distance)


@dataclass(frozen=True)
class MarketDataset:
    customers: tuple[CustomerRecord, ...]
    skus: tuple[SkuRecord, ...]
    transactions: tuple[Transaction, ...]
    stores: tuple[StoreProfile, ...] = ()
    expenses: ExpenseLedger = ExpenseLedger()
    pair_costs: tuple[tuple[str, str, float], ...] = ()  # (customer, material) -> cost overrides
    meta: DatasetMeta = DatasetMeta()
    cost_report: CostMatchReport = CostMatchReport()
    cost_rows: tuple[CostRow, ...] = ()  # raw input rows, kept for round-tripping

    def customer_by_id(self, cid: str) -> CustomerRecord:
        return self._customer_index()[cid]

    def sku_by_code(self, material: str) -> SkuRecord:
        return self._sku_index()[material]

    def _customer_index(self):
        idx = getattr(self, "_cust_idx", None)
        if idx is None:
            idx = {c.id: c for c in self.customers}
            object.__setattr__(self, "_cust_idx", idx)
        return idx

    def _sku_index(self):
        idx = getattr(self, "_sku_idx", None)
        if idx is None:
            idx = {s.material: s for s in self.skus}
            object.__setattr__(self, "_sku_idx", idx)
        return idx

    def unit_cost(self, cid: str, material: str) -> float:
        """Customer-specific matched cost when present, else the SKU cost."""
        idx = getattr(self, "_cost_idx", None)
        if idx is None:
            idx = {(c, m): v for c, m, v in self.pair_costs}
            object.__setattr__(self, "_cost_idx", idx)
        got = idx.get((cid, material))
        return got if got is not None else self.sku_by_code(material).cost


def validate_dataset(ds: MarketDataset) -> None:
    """Referential integrity plus the container invariants."""
    cust_ids = {c.id for c in ds.customers}
    if len(cust_ids) != len(ds.customers):
        raise SchemaError("duplicate customer ids")
    sku_codes = {s.material for s in ds.skus}
    if len(sku_codes) != len(ds.skus):
        raise SchemaError("duplicate material codes")
    k2_owner: dict[str, str] = {}
    for s in ds.skus:
        seen = k2_owner.setdefault(s.k2, s.k1)
        if seen != s.k1:
            raise SchemaError(
                f"secondary category {s.k2} appears under both {seen} and {s.k1}")
    fdims = {len(c.feature_vector) for c in ds.customers}
    if len(fdims) > 1:
        raise SchemaError(f"inconsistent customer feature dimensions: {sorted(fdims)}")
    ddims = {len(s.demographics) for s in ds.stores}
    if len(ddims) > 1:
        raise SchemaError(f"inconsistent store demographic dimensions: {sorted(ddims)}")
    for t in ds.transactions:
        if t.customer_id not in cust_ids:
            raise DanglingReferenceError(
                f"transaction references unknown customer '{t.customer_id}'")
        if t.material not in sku_codes:
            raise DanglingReferenceError(
                f"transaction references unknown material '{t.material}'")
    periods = sorted({t.period for t in ds.transactions})
    if periods and periods != list(range(periods[0], periods[-1] + 1)):
        raise SchemaError(f"period range has gaps: {periods}")


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------


def _parse_float(value: str, file: str, column: str, line: int) -> float:
    try:
        v = float(value)
    except ValueError:
        raise MalformedCellError(
            f"{file}:{line}: column '{column}' has malformed numeric cell {value!r}") from None
    if not math.isfinite(v):
        raise MalformedCellError(f"{file}:{line}: column '{column}' is not finite")
    return v


def _read_rows(path: Path, required: tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path.name}: missing required column '{col}'")
        return header, list(reader)


def _vector_columns(header, prefix):
    cols = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
    return sorted(cols, key=lambda h: int(h[len(prefix):]))


def load_dataset(path: str | os.PathLike, format: str = "auto",
                 cost_max_distance: int = 2) -> MarketDataset:
    """Load a CSV bundle directory or a single JSON document.

    Raises :class:`SchemaError` / :class:`DanglingReferenceError` /
    :class:`MalformedCellError` with the offending column or id named.
    """
    p = Path(path)
    if format == "auto":
        format = "json" if p.is_file() else "csv-bundle"
    if format == "json":
        with open(p, encoding="utf-8") as fh:
            doc = json.load(fh)
        return dataset_from_document(doc, cost_max_distance=cost_max_distance)
    if format != "csv-bundle":
        raise DataError(f"unknown dataset format '{format}'")
    if not p.is_dir():
        raise DataError(f"dataset bundle directory not found: {p}")

    header, rows = _read_rows(p / "customers.csv",
                              ("id", "name", "lat", "lon", "scale", "aov", "forecast"))
    xcols = _vector_columns(header, "x")
    customers = []
    for i, r in enumerate(rows, start=2):
        customers.append(CustomerRecord(
            id=r["id"], name=r["name"],
            latitude=_parse_float(r["lat"], "customers.csv", "lat", i),
            longitude=_parse_float(r["lon"], "customers.csv", "lon", i),
            scale=_parse_float(r["scale"], "customers.csv", "scale", i),
            aov=_parse_float(r["aov"], "customers.csv", "aov", i),
            forecast=_parse_float(r["forecast"], "customers.csv", "forecast", i),
            feature_vector=tuple(_parse_float(r[c], "customers.csv", c, i) for c in xcols),
            tags=tuple(t for t in (r.get("tags") or "").split("|") if t),
        ))

    header, rows = _read_rows(p / "skus.csv", ("material", "k1", "k2", "cost"))
    ecols = _vector_columns(header, "e")
    skus = []
    wprice_missing = []
    for i, r in enumerate(rows, start=2):
        wp_raw = r.get("wprice") or ""
        locked_raw = r.get("locked") or ""
        sku = SkuRecord(
            material=r["material"], k1=r["k1"], k2=r["k2"],
            cost=_parse_float(r["cost"], "skus.csv", "cost", i),
            wprice=_parse_float(wp_raw, "skus.csv", "wprice", i) if wp_raw else 0.0,
            embedding=tuple(_parse_float(r[c], "skus.csv", c, i) for c in ecols),
            locked=_parse_float(locked_raw, "skus.csv", "locked", i) if locked_raw else None,
        )
        if not wp_raw:
            wprice_missing.append(sku.material)
        skus.append(sku)

    _, rows = _read_rows(p / "transactions.csv",
                         ("customer_id", "material", "period", "volume"))
    transactions = []
    for i, r in enumerate(rows, start=2):
        volume = _parse_float(r["volume"], "transactions.csv", "volume", i)
        price_raw = r.get("price") or ""
        if price_raw:
            price = _parse_float(price_raw, "transactions.csv", "price", i)
        else:
            amount_raw = r.get("amount") or ""
            if not amount_raw:
                raise MalformedCellError(
                    f"transactions.csv:{i}: neither 'price' nor 'amount' present")
            amount = _parse_float(amount_raw, "transactions.csv", "amount", i)
            if volume <= 0:
                raise MalformedCellError(
                    f"transactions.csv:{i}: positive amount with zero volume")
            price = amount / volume
        try:
            period = int(r["period"])
        except ValueError:
            raise MalformedCellError(
                f"transactions.csv:{i}: column 'period' has malformed cell "
                f"{r['period']!r}") from None
        transactions.append(Transaction(r["customer_id"], r["material"],
                                        volume, price, period))

    stores = []
    store_path = p / "stores.csv"
    if store_path.exists():
        header, rows = _read_rows(store_path, ("id", "lat", "lon"))
        qcols = _vector_columns(header, "q")
        for i, r in enumerate(rows, start=2):
            stores.append(StoreProfile(
                id=r["id"],
                latitude=_parse_float(r["lat"], "stores.csv", "lat", i),
                longitude=_parse_float(r["lon"], "stores.csv", "lon", i),
                demographics=tuple(_parse_float(r[c], "stores.csv", c, i) for c in qcols),
            ))

    expenses = []
    exp_path = p / "expenses.csv"
    if exp_path.exists():
        _, rows = _read_rows(exp_path, ("expense_type", "total"))
        for i, r in enumerate(rows, start=2):
            expenses.append((r["expense_type"],
                             _parse_float(r["total"], "expenses.csv", "total", i)))

    cost_rows = []
    cost_path = p / "costs.csv"
    if cost_path.exists():
        _, rows = _read_rows(cost_path, ("client_name", "material", "unit_cost"))
        for i, r in enumerate(rows, start=2):
            cost_rows.append(CostRow(r["client_name"], r["material"],
                                     _parse_float(r["unit_cost"], "costs.csv", "unit_cost", i)))

    ds = _assemble(customers, skus, transactions, stores, expenses, cost_rows,
                   wprice_missing, cost_max_distance)
    return ds


def _assemble(customers, skus, transactions, stores, expenses, cost_rows,
              wprice_missing, cost_max_distance):
    periods = [t.period for t in transactions]
    meta = DatasetMeta(
        feature_dim=len(customers[0].feature_vector) if customers else 0,
        demo_dim=len(stores[0].demographics) if stores else 0,
        period_min=min(periods) if periods else 0,
        period_max=max(periods) if periods else 0,
    )
    ds = MarketDataset(tuple(customers), tuple(skus), tuple(transactions),
                       tuple(stores), ExpenseLedger(tuple(expenses)), (), meta)
    validate_dataset(ds)
    if wprice_missing:
        filled = []
        for s in ds.skus:
            if s.material in wprice_missing:
                try:
                    wp = weighted_unit_price(ds, s.material)
                except UndefinedPriceError:
                    wp = 0.0
                s = SkuRecord(s.material, s.k1, s.k2, s.cost, wp, s.embedding, s.locked)
            filled.append(s)
        ds = MarketDataset(ds.customers, tuple(filled), ds.transactions, ds.stores,
                           ds.expenses, (), meta)
    if cost_rows:
        mapping, report = match_costs(ds, cost_rows, cost_max_distance)
        pair_costs = tuple(sorted((c, m, v) for (c, m), v in mapping.items()))
        ds = MarketDataset(ds.customers, ds.skus, ds.transactions, ds.stores,
                           ds.expenses, pair_costs, meta, report, tuple(cost_rows))
    return ds


def dataset_from_document(doc: dict, cost_max_distance: int = 2) -> MarketDataset:
    """Build a dataset from the JSON document shape produced by ``dataset_to_document``."""
    customers = [CustomerRecord(
        id=c["id"], name=c["name"], latitude=c["lat"], longitude=c["lon"],
        scale=c["scale"], aov=c["aov"], forecast=c["forecast"],
        feature_vector=tuple(c.get("features", ())), tags=tuple(c.get("tags", ())),
    ) for c in doc.get("customers", [])]
    skus = [SkuRecord(
        material=s["material"], k1=s["k1"], k2=s["k2"], cost=s["cost"],
        wprice=s.get("wprice", 0.0), embedding=tuple(s.get("embedding", ())),
        locked=s.get("locked"),
    ) for s in doc.get("skus", [])]
    transactions = [Transaction(t["customer_id"], t["material"], t["volume"],
                                t["price"], t["period"])
                    for t in doc.get("transactions", [])]
    stores = [StoreProfile(s["id"], s["lat"], s["lon"], tuple(s.get("demographics", ())))
              for s in doc.get("stores", [])]
    expenses = [(k, v) for k, v in doc.get("expenses", {}).items()]
    cost_rows = [CostRow(r["client_name"], r["material"], r["unit_cost"])
                 for r in doc.get("costs", [])]
    return _assemble(customers, skus, transactions, stores, expenses, cost_rows,
                     [], cost_max_distance)


def dataset_to_document(ds: MarketDataset) -> dict:
    return {
        "customers": [{"id": c.id, "name": c.name, "lat": c.latitude, "lon": c.longitude,
                       "scale": c.scale, "aov": c.aov, "forecast": c.forecast,
                       "features": list(c.feature_vector), "tags": list(c.tags)}
                      for c in ds.customers],
        "skus": [{"material": s.material, "k1": s.k1, "k2": s.k2, "cost": s.cost,
                  "wprice": s.wprice, "embedding": list(s.embedding), "locked": s.locked}
                 for s in ds.skus],
        "transactions": [{"customer_id": t.customer_id, "material": t.material,
                          "volume": t.volume, "price": t.price, "period": t.period}
                         for t in ds.transactions],
        "stores": [{"id": s.id, "lat": s.latitude, "lon": s.longitude,
                    "demographics": list(s.demographics)} for s in ds.stores],
        "expenses": {k: v for k, v in ds.expenses.entries},
        "costs": [{"client_name": r.client_name, "material": r.material,
                   "unit_cost": r.unit_cost} for r in ds.cost_rows],
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        if v == int(v) and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    return str(v)


def save_dataset(ds: MarketDataset, out_dir: str | os.PathLike) -> None:
    """Write the CSV bundle. Loading the result reproduces ``ds`` exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fdim = ds.meta.feature_dim
    with open(out / "customers.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "name", "lat", "lon", "scale", "aov", "forecast", "tags"]
                   + [f"x{i}" for i in range(fdim)])
        for c in ds.customers:
            w.writerow([c.id, c.name, _fmt(c.latitude), _fmt(c.longitude),
                        _fmt(c.scale), _fmt(c.aov), _fmt(c.forecast),
                        "|".join(c.tags)] + [_fmt(v) for v in c.feature_vector])
    edim = len(ds.skus[0].embedding) if ds.skus else 0
    with open(out / "skus.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["material", "k1", "k2", "cost", "wprice", "locked"]
                   + [f"e{i}" for i in range(edim)])
        for s in ds.skus:
            w.writerow([s.material, s.k1, s.k2, _fmt(s.cost), _fmt(s.wprice),
                        "" if s.locked is None else _fmt(s.locked)]
                       + [_fmt(v) for v in s.embedding])
    with open(out / "transactions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["customer_id", "material", "period", "volume", "price", "amount"])
        for t in ds.transactions:
            w.writerow([t.customer_id, t.material, t.period, _fmt(t.volume),
                        _fmt(t.price), ""])
    with open(out / "stores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lat", "lon"] + [f"q{i}" for i in range(ds.meta.demo_dim)])
        for s in ds.stores:
            w.writerow([s.id, _fmt(s.latitude), _fmt(s.longitude)]
                       + [_fmt(v) for v in s.demographics])
    with open(out / "expenses.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["expense_type", "total"])
        for name, total in ds.expenses.entries:
            w.writerow([name, _fmt(total)])
    with open(out / "costs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["client_name", "material", "unit_cost"])
        for r in ds.cost_rows:
            w.writerow([r.client_name, r.material, _fmt(r.unit_cost)])


# ---------------------------------------------------------------------------
# preprocessing operations
# ---------------------------------------------------------------------------


def filter_candidates(ds: MarketDataset, theta: float) -> set[str]:
    """Customers whose forecast total strictly exceeds the threshold."""
    if not math.isfinite(theta):
        raise DataError("candidate threshold must be finite")
    return {c.id for c in ds.customers if c.forecast > theta}


def weighted_unit_price(ds: MarketDataset, material: str) -> float:
    """Sales-volume-weighted mean unit price over the material's history."""
    num = 0.0
    den = 0.0
    for t in ds.transactions:
        if t.material == material:
            num += t.volume * t.price
            den += t.volume
    if den <= 0.0:
        raise UndefinedPriceError(
            f"material '{material}' has no positive-volume transactions")
    return num / den


def match_costs(ds: MarketDataset, cost_rows: list[CostRow], max_distance: int = 2
                ) -> tuple[dict[tuple[str, str], float], CostMatchReport]:
    """Bind each cost row to the customer with the closest name.

    Plain Levenshtein distance; a row matches when the minimum distance is
    within ``max_distance``, ties broken by smallest customer id. Rows that
    match nothing are reported, never dropped silently.
    """
    if max_distance < 0:
        raise DataError("max_distance must be >= 0")
    mapping: dict[tuple[str, str], float] = {}
    matched = []
    unmatched = []
    by_id = sorted(ds.customers, key=lambda c: c.id)
    for row in cost_rows:
        best_id = None
        best_d = None
        for c in by_id:
            d = levenshtein(row.client_name, c.name)
            if best_d is None or d < best_d:
                best_id, best_d = c.id, d
        if best_id is not None and best_d <= max_distance:
            mapping[(best_id, row.material)] = row.unit_cost
            matched.append((best_id, row.material, row.client_name, row.unit_cost))
        else:
            unmatched.append((row.client_name, row.material,
                              -1 if best_d is None else best_d))
    return mapping, CostMatchReport(tuple(matched), tuple(unmatched))


def join_base(ds: MarketDataset) -> list[dict]:
    """Inner join of transactions with SKU and customer attributes.

    One row per transaction; rows referencing a missing customer or SKU are
    excluded (datasets validated at load never hit that branch).
    """
    cidx = {c.id: c for c in ds.customers}
    sidx = {s.material: s for s in ds.skus}
    rows = []
    for t in ds.transactions:
        cust = cidx.get(t.customer_id)
        sku = sidx.get(t.material)
        if cust is None or sku is None:
            continue
        rows.append({
            "customer_id": cust.id,
            "material": sku.material,
            "k1": sku.k1,
            "k2": sku.k2,
            "period": t.period,
            "volume": t.volume,
            "price": t.price,
            "cost": ds.unit_cost(cust.id, sku.material),
            "wprice": sku.wprice,
            "scale": cust.scale,
            "aov": cust.aov,
            "forecast": cust.forecast,
        })
    return rows
