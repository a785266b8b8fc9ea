import logging
from contextlib import nullcontext

import pandas as pd

from src.modules.gaussian_core import symmetrization_disabled
from src.modules.verification import run_suites

logger = logging.getLogger(__name__)


def run(args):
    fault = symmetrization_disabled() if getattr(args, "inject_fault", False) else nullcontext()
    with fault:
        results = run_suites(getattr(args, "suites", None))
    table = pd.DataFrame([{"suite": r.name, "status": "pass" if r.passed else "FAIL", "seconds": round(r.seconds, 3), "detail": r.detail} for r in results])
    print(table.to_string(index=False))
    print(f"total {sum(r.seconds for r in results):.2f} s")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failing property: {failed[0].name}: {failed[0].detail}")
        return 2
    return 0
