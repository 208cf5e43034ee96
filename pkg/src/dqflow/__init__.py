"""dqflow: multi-layer data-quality validation at desk scale.

Layers: declarative tests compiled to failing-rows SQL, semantic test
synthesis with a usefulness audit, anomaly-injection experiments across
three rule configurations, cross-store consistency checksums, and an
instrumented eight-stage workflow.
"""

from .anomalies import (
    AnomalySpec,
    ComparatorReport,
    DetectionMatrix,
    inject,
    load_catalog,
    run_comparator,
    run_condition,
)
from .backends import (
    Backend,
    LocalBackend,
    MigrationReport,
    Snapshot,
    WarehouseBackend,
    migrate_tables,
    restore,
    snapshot,
)
from .canonical import TableChecksum, checksum_rows, encode_row, encode_value, fnv1a64
from .crossstore import (
    CrossStoreReport,
    TableValidationReport,
    table_checksum,
    validate_all,
    validate_table,
)
from .dsl import (
    SchemaFile,
    TestKind,
    TestSpec,
    load_schema_file,
    parse_schema_file,
    serialize_schema_file,
)
from .engine import (
    CompiledTest,
    MergeResult,
    TestResult,
    TestRunReport,
    compile_test,
    execute_tests,
    merge_schemas,
)
from .models import (
    CURATED_MODELS,
    MODEL_SCHEMAS,
    ModelRunReport,
    run_models,
)
from .schema import Column, ColumnType, TableSchema
from .season import RawMatchRecord, generate_season
from .synth import (
    AuditRecord,
    AuditReport,
    GenerationResult,
    HttpProvider,
    MockProfile,
    MockProvider,
    ModelContext,
    audit_tests,
    build_prompt,
    extract_context,
    generate_tests,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalySpec",
    "AuditRecord",
    "AuditReport",
    "Backend",
    "Column",
    "ColumnType",
    "CompiledTest",
    "ComparatorReport",
    "CrossStoreReport",
    "CURATED_MODELS",
    "DetectionMatrix",
    "GenerationResult",
    "HttpProvider",
    "LocalBackend",
    "MergeResult",
    "MigrationReport",
    "MockProfile",
    "MockProvider",
    "ModelContext",
    "ModelRunReport",
    "MODEL_SCHEMAS",
    "RawMatchRecord",
    "SchemaFile",
    "Snapshot",
    "TableChecksum",
    "TableSchema",
    "TableValidationReport",
    "TestKind",
    "TestResult",
    "TestRunReport",
    "TestSpec",
    "WarehouseBackend",
    "audit_tests",
    "build_prompt",
    "checksum_rows",
    "compile_test",
    "encode_row",
    "encode_value",
    "execute_tests",
    "extract_context",
    "fnv1a64",
    "generate_season",
    "generate_tests",
    "inject",
    "load_catalog",
    "load_schema_file",
    "merge_schemas",
    "migrate_tables",
    "parse_schema_file",
    "restore",
    "run_comparator",
    "run_condition",
    "run_models",
    "serialize_schema_file",
    "snapshot",
    "table_checksum",
    "validate_all",
    "validate_table",
]
