"""Report generation for xmjoin benchmark CSVs."""

from .schema import COLUMNS, Row, SchemaError, read_rows

__all__ = ["COLUMNS", "Row", "SchemaError", "read_rows"]
