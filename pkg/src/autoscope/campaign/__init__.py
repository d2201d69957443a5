"""Config-driven experiments over the simulated instrument."""

from .config import CampaignSpec, ConfigError, load_spec, spec_from_dict
from .records import ChecksumError, replay, stream, verify, write_outputs
from .report import make_report
from .runner import RunRecord, bench_cell, check_causality, halton, run_campaign

__all__ = [
    "CampaignSpec", "ConfigError", "load_spec", "spec_from_dict",
    "ChecksumError", "replay", "stream", "verify", "write_outputs",
    "make_report", "RunRecord", "bench_cell", "check_causality", "halton", "run_campaign",
]
