"""Hours-ahead grid risk pipeline: scenarios, SCUC labels, GNN surrogate, risk metrics."""

from gridrisk.grid import (
    Branch,
    Bus,
    CaseFormatError,
    Generator,
    PowerGrid,
    PtdfMatrix,
    compute_ptdf,
    load_case,
    parse_case,
    serialize_case,
    validate_grid,
)

__all__ = [
    "Branch",
    "Bus",
    "CaseFormatError",
    "Generator",
    "PowerGrid",
    "PtdfMatrix",
    "compute_ptdf",
    "load_case",
    "parse_case",
    "serialize_case",
    "validate_grid",
]

__version__ = "0.1.0"
