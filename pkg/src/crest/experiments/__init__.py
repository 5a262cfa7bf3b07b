"""Experiment configuration, orchestration, records and reports."""

from crest.experiments.config import ExperimentConfig, default_config, make_env
from crest.experiments.records import RunRecord, read_records, write_records
from crest.experiments.report import report, write_report
from crest.experiments.runners import (
    run_blocks_scaling, run_color_shift, run_crate_stiffness, run_discovery, run_pretrain, run_table1,
)

__all__ = [
    "ExperimentConfig", "RunRecord", "default_config", "make_env", "read_records", "report", "run_blocks_scaling",
    "run_color_shift", "run_crate_stiffness", "run_discovery", "run_pretrain", "run_table1", "write_records",
    "write_report",
]
