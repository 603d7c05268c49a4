"""Smoke test for the causalgap_py extension.

Builds nothing itself: point CAUSALGAP_PY_LIB at the compiled library, or build it first with
`cargo build -p causalgap-py --release` (the script then looks in target/release).
"""

import importlib.util
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    lib = os.environ.get("CAUSALGAP_PY_LIB")
    candidates = [Path(lib)] if lib else [ROOT / "target" / p / "libcausalgap_py.so" for p in ("release", "debug")]
    found = next((c for c in candidates if c.exists()), None)
    if found is None:
        sys.exit("causalgap_py library not found; run `cargo build -p causalgap-py --release`")
    tmp = Path(tempfile.mkdtemp())
    target = tmp / "causalgap_py.so"
    shutil.copy(found, target)
    spec = importlib.util.spec_from_file_location("causalgap_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    cg = load_module()
    assert abs(cg.beta_to_gap_percent(-0.0321) - 7.12) < 0.01
    assert abs(cg.unadjusted_gap(134169.0, 118460.0) - 11.71) < 0.01

    d, truth = cg.simulate(n=2000, seed=3)
    assert len(d) == 2000 and 0 < d.n_treated < 2000
    print(d, truth)

    for est in (cg.ols(d), cg.ols_interact(d), cg.psm(d), cg.iptw(d), cg.ps_adjust(d)):
        print(est, f"gap {est.gap_percent:.2f}%")
        lo, hi = est.ci
        assert lo < est.beta < hi and est.se > 0

    bal = cg.balance(d)
    assert max(abs(a) for _, a in bal.values()) < max(abs(b) for b, _ in bal.values())

    s = cg.sensitivity(d)
    assert 0 < s["rv_alpha"] < s["rv"] < 1

    f = cg.CausalForest(d, num_trees=200, seed=3)
    tau = f.predict_oob()
    assert len(tau) == 2000 and f.num_trees == 200
    ate = f.overlap_ate()
    print(ate)
    assert ate.estimand == "OVERLAP_ATE"

    with tempfile.TemporaryDirectory() as out:
        path = os.path.join(out, "d.csv")
        d.save(path)
        again = cg.Dataset.load(path, salary_floor=0.0)
        assert again.outcome_log == d.outcome_log

        artifacts = cg.run_pipeline("[simulate]\nn = 800\n[forest]\ntrees = 50\n", out)
        assert "summary.csv" in artifacts

    try:
        cg.run_pipeline('[run]\nstages = ["report"]\n', tempfile.mkdtemp())
    except ValueError as e:
        assert str(e) == "report: no inputs"
    else:
        raise AssertionError("report without estimates should fail")
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
