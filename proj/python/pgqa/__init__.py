"""Page-grounded long-document question answering engine."""

from ._pgqa import (
    Document,
    Encoder,
    PgqaError,
    Service,
    allocate_quota,
    cli,
    extract_page_refs,
    ingest_jsonl,
    load_documents,
    mnrl_loss,
    page_metrics,
    score_pages,
    select_context,
    text_metrics,
    train_encoder,
    window_pages,
)

__all__ = [
    "Document",
    "Encoder",
    "PgqaError",
    "Service",
    "allocate_quota",
    "cli",
    "extract_page_refs",
    "ingest_jsonl",
    "load_documents",
    "mnrl_loss",
    "page_metrics",
    "score_pages",
    "select_context",
    "text_metrics",
    "train_encoder",
    "window_pages",
]
