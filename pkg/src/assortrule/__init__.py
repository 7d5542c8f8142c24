"""assortrule: symbolic rule search and constrained allocation for
assortment-pricing decisions."""

__version__ = "0.1.0"
