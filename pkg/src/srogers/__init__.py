"""Rogers-type moment formulas for Siegel transforms on S-arithmetic lattices."""

__version__ = "0.1.0"
