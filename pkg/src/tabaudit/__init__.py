"""Mechanistic audit toolkit for tabular in-context learners at desk scale."""
from .data import Split, Table, encode_and_impute, generate_synthetic, load_csv, stratified_split
from .report import ReportCell, emit_report

__version__ = "0.1.0"

__all__ = [
    "ReportCell", "Split", "Table", "emit_report", "encode_and_impute", "generate_synthetic",
    "load_csv", "stratified_split", "__version__",
]
