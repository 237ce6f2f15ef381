from .events import (LIST_OP, READ_OPS, WRITE_OPS, TraceEvent, TraceFormatError, TraceReader,
                     parse_audit_line, parse_trace, parse_tsv_line, write_trace)
from .generate import (GeneratedTrace, InfeasibleSpec, TraceSpec, generate_trace, generate_trace_pair,
                       spec_with)
from .stats import TraceStats, compute_stats
from .tree import ReconstructReport, reconstruct_tree

__all__ = [
    "GeneratedTrace", "InfeasibleSpec", "LIST_OP", "READ_OPS", "ReconstructReport", "TraceEvent",
    "TraceFormatError", "TraceReader", "TraceSpec", "TraceStats", "WRITE_OPS", "compute_stats",
    "generate_trace", "generate_trace_pair", "parse_audit_line", "parse_trace", "parse_tsv_line",
    "reconstruct_tree", "spec_with", "write_trace",
]
