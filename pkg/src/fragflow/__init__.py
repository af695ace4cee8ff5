"""Evolve small digital brains and measure how their information is fragmented."""
from .brains import (BrainIO, ConfigurationError, Gate, MarkovBrain, RnnBrain,
                     brain_from_dict, decode, decode_markov, decode_rnn,
                     transition_table)
from .estimators import FlowGraphEstimator, FragmentationSelector
from .evolve import EaConfig, History, mutate, reconstruct_lod, run_evolution
from .flowgraph import (FlowGraph, build_flow_graph, emit_dot, flow_complexity,
                        unique_minimal_partitions)
from .fragmentation import (EnumerationSpec, FragmentationMatrix, FragResult,
                            Threshold, fragmentation, fragmentation_matrix,
                            parse_matrix, serialize_matrix)
from .infotheory import (StateTable, UsageError, entropy, mutual_information,
                         variable_set)
from .robustness import (ReplicateResult, complexity_vs_robustness, fit_line,
                         mutation_offset)
from .tasks import (BlockCatchConfig, NBackConfig, Trace, evaluate,
                    evaluate_blockcatch, evaluate_nback, filter_trace)

__version__ = "0.1.0"

__all__ = [
    "BlockCatchConfig", "BrainIO", "ConfigurationError", "EaConfig",
    "EnumerationSpec", "FlowGraph", "FlowGraphEstimator", "FragResult",
    "FragmentationMatrix", "FragmentationSelector", "Gate", "History",
    "MarkovBrain", "NBackConfig", "ReplicateResult", "RnnBrain", "StateTable",
    "Threshold", "Trace", "UsageError", "brain_from_dict",
    "build_flow_graph", "complexity_vs_robustness", "decode", "decode_markov",
    "decode_rnn", "emit_dot", "entropy", "evaluate", "evaluate_blockcatch",
    "evaluate_nback", "filter_trace", "fit_line", "flow_complexity",
    "fragmentation", "fragmentation_matrix", "mutate", "mutation_offset",
    "mutual_information", "parse_matrix", "reconstruct_lod", "run_evolution",
    "serialize_matrix", "transition_table", "unique_minimal_partitions",
    "variable_set",
]
