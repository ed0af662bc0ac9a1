from specretro.harness.bench import (
    MultiStepReport,
    MultiStepRow,
    NamedPlanConfig,
    SingleStepReport,
    SingleStepRow,
    bench_multi_step,
    bench_single_step,
    common_solved,
    decode_config_for,
)
from specretro.harness.reports import render_multi, render_single, write_report

__all__ = [
    "MultiStepReport",
    "MultiStepRow",
    "NamedPlanConfig",
    "SingleStepReport",
    "SingleStepRow",
    "bench_multi_step",
    "bench_single_step",
    "common_solved",
    "decode_config_for",
    "render_multi",
    "render_single",
    "write_report",
]
