"""Security and overhead corpus: annotated programs, manifests and the harness."""

from .harness import (DEFAULT_BENCH, DEFAULT_MANIFEST, BenchResult, BenchSpec, CaseReport,
                      CaseSpec, load_bench, load_manifest, overhead_report, run_bench,
                      run_benches, run_case, run_cases)

__all__ = ["DEFAULT_BENCH", "DEFAULT_MANIFEST", "BenchResult", "BenchSpec", "CaseReport",
           "CaseSpec", "load_bench", "load_manifest", "overhead_report", "run_bench",
           "run_benches", "run_case", "run_cases"]
