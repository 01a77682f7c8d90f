"""finsynth: synthesize financial numerical-reasoning QA datasets.

Seed accounting formulas are compiled into a dependency graph, grown by
composition and a temporal dimension, and each formula node is turned into
question/answer examples grounded in generated financial reports.
"""

from .backend import BackendConfig, BackendError, LiveBackend, MockBackend
from .datasetio import (
    SchemaError,
    convert_tatqa,
    dataset_stats,
    merge_datasets,
    read_dataset,
    split_dataset,
    to_record,
    validate_record,
    write_dataset,
)
from .dsl import (
    Bindings,
    Constant,
    DslError,
    Program,
    Step,
    StepRef,
    VariableRef,
    canonicalize,
    compile_infix,
    execute,
    parse_program,
    program_from_infix,
    serialize_program,
)
from .genpipe import (
    Example,
    GenConfig,
    PipelineError,
    generate_dataset,
    generate_example,
    verify_example,
)
from .graph import (
    FormulaGraph,
    FormulaNode,
    GraphError,
    Provenance,
    add_temporal,
    build_graph,
    compose,
    extend,
    extend_to_fixed_point,
    load_seed_formulas,
)
from .metrics import (
    EvalResult,
    Prediction,
    evaluate,
    execution_accuracy,
    program_accuracy,
    read_predictions,
)

__version__ = "0.1.0"

__all__ = [
    "Bindings",
    "Constant",
    "DslError",
    "Program",
    "Step",
    "StepRef",
    "VariableRef",
    "canonicalize",
    "compile_infix",
    "execute",
    "parse_program",
    "program_from_infix",
    "serialize_program",
    "FormulaGraph",
    "FormulaNode",
    "GraphError",
    "Provenance",
    "add_temporal",
    "build_graph",
    "compose",
    "extend",
    "extend_to_fixed_point",
    "load_seed_formulas",
    "BackendConfig",
    "BackendError",
    "LiveBackend",
    "MockBackend",
    "Example",
    "GenConfig",
    "PipelineError",
    "generate_dataset",
    "generate_example",
    "verify_example",
    "SchemaError",
    "convert_tatqa",
    "dataset_stats",
    "merge_datasets",
    "read_dataset",
    "split_dataset",
    "to_record",
    "validate_record",
    "write_dataset",
    "EvalResult",
    "Prediction",
    "evaluate",
    "execution_accuracy",
    "program_accuracy",
    "read_predictions",
    "__version__",
]
