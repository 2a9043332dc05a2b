"""verilabel: verification-oriented annotation runs over tutoring dialogue.

Label tutor utterances against a closed rubric with pluggable model
backends, re-check each label under a verifier(annotator) scheme, build
gold labels through blinded adjudication of disagreements, and score
everything with per-category Cohen's kappa and its verified-minus-baseline
delta.
"""

from .backends import (
    Backend,
    CallContext,
    RemoteBackend,
    SyntheticAnnotatorParams,
    SyntheticBackend,
    SyntheticVerifierParams,
    build_backend,
    identity_confusion,
    load_backend_configs,
    synthetic_annotate,
    synthetic_verify,
    uniform_error_confusion,
)
from .domain import (
    UNPARSEABLE,
    Category,
    Codebook,
    Condition,
    Decision,
    OrchestrationSpec,
    Speaker,
    Transcript,
    Utterance,
    format_orchestration_spec,
    load_codebook,
    load_default_codebook,
    parse_orchestration_spec,
    validate_codebook,
)
from .errors import (
    AdjudicationError,
    AuthError,
    CodebookError,
    ConfigError,
    ContractError,
    DigestMismatchError,
    RunSuspendedError,
    SpecParseError,
    TranscriptError,
    TransportError,
    UserInputError,
    VerilabelError,
)
from .goldsmith import (
    AdjudicationItem,
    AdjudicationPacket,
    AlignmentStats,
    GoldSet,
    SealedAssignmentMap,
    blind_and_randomize,
    derive_gold,
    extract_disagreements,
    record_adjudication,
    scan_for_identifiers,
)
from .ingest import (
    AnnotationContext,
    Chunk,
    build_context,
    chunk_session,
    corpus_digest,
    load_transcripts,
)
from .metrics import (
    AgreementReport,
    ConfusionMatrix,
    LabelSeries,
    cohens_kappa,
    confusion_matrix,
    delta_kappa,
    disagreement_rate,
    format_percent,
    improvement_summary,
    load_label_series,
    per_category_kappa,
    percent_agreement,
    save_label_series,
    summarize,
)
from .orchestrator import (
    FinalLabelRecord,
    RunConfig,
    RunManifest,
    RunResult,
    audit_canonical_lines,
    audit_digest,
    diff_runs,
    load_run_result,
    read_audit_events,
    resume,
    run,
)
from .prompting import (
    ParsedAnnotation,
    ParsedVerification,
    TemplatePair,
    load_templates,
    parse_annotation_response,
    parse_verification_response,
    render_annotation_prompt,
    render_verification_prompt,
)
from .report import render_report_text, report_digest, write_report

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
