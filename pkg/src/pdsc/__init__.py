"""Property-directed self-composition: k-safety verification by inferring a
semantic scheduling of program copies together with an inductive invariant
over a fixed predicate language."""

__version__ = "0.1.0"
