from specretro.decode.drafts import HSBS_DRAFTS, extract_query_drafts, hsbs_settings, medusa_draft
from specretro.decode.engine import (
    BeamSet,
    CacheHandle,
    DecodeSession,
    Hypothesis,
    beam_search,
    generate,
    sbs_cycle,
    sbs_generate,
    select_top,
    speculative_children,
)
from specretro.decode.predictor import Retrosynthesizer
from specretro.decode.types import DecodeConfig, DecodeMetrics, Draft, DraftSource, Strategy, VerificationResult
from specretro.decode.verify import cumulative_mass, verify_draft

__all__ = [
    "HSBS_DRAFTS",
    "BeamSet",
    "CacheHandle",
    "DecodeConfig",
    "DecodeMetrics",
    "DecodeSession",
    "Draft",
    "DraftSource",
    "Hypothesis",
    "Retrosynthesizer",
    "Strategy",
    "VerificationResult",
    "beam_search",
    "cumulative_mass",
    "extract_query_drafts",
    "generate",
    "hsbs_settings",
    "medusa_draft",
    "sbs_cycle",
    "sbs_generate",
    "select_top",
    "speculative_children",
    "verify_draft",
]
