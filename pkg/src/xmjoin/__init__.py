"""External-memory join engine and benchmark lab.

Sorted block tables, error-bounded learned indexes and a pivot B-tree over
them, four join strategies with instrumented I/O, CDF-based partitioning for
unsorted inputs, and an affine I/O cost model, tied together by the `xmjoin`
command line.
"""

__version__ = "0.1.0"
