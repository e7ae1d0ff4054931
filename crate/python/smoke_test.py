"""Smoke test for the Python extension.

Build first, either with `maturin develop -m crates/python/Cargo.toml` or
with `cargo build -p triage-py --features extension-module` and pass the
directory holding the built library in TRIAGE_PY_LIB (the script copies
libtriage.so to triage.so there).
"""

import math
import os
import shutil
import sys
import tempfile


def load():
    lib_dir = os.environ.get("TRIAGE_PY_LIB")
    if lib_dir:
        src = os.path.join(lib_dir, "libtriage.so")
        dst = os.path.join(lib_dir, "triage.so")
        if os.path.exists(src):
            shutil.copyfile(src, dst)
        sys.path.insert(0, lib_dir)
    import triage

    return triage


def main():
    triage = load()

    c = triage.generate_cohort(n_children=2000, seed=3)
    assert len(c) == 2000
    again = triage.generate_cohort(n_children=2000, seed=3)
    assert c.columns()["score"] == again.columns()["score"]

    auc = c.score_auc()
    assert 0.5 < auc < 1.0, auc
    alpha = c.cronbach_alpha()
    assert 0.5 < alpha < 1.0, alpha

    h = c.harm_index()
    control = [v for v, t in zip(h, c.columns()["treated"]) if t == 0.0]
    assert abs(sum(control) / len(control)) < 1e-9

    r = c.itt(n_perm=99)
    treated = next(t for t in r["terms"] if t["term"] == "treated")
    assert math.isfinite(treated["estimate"]) and 0.0 < r["permutation_p"] <= 1.0

    curve = c.bound_curve(rate=0.3)
    algo = curve["regimes"][0]["mean_harm"]
    assert algo[0] == curve["human_only_mean"]
    assert all(b <= a + 1e-12 for a, b in zip(algo, algo[1:]))

    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "c.csv")
        c.to_csv(p)
        back = triage.read_cohort(p)
        assert back.columns()["score"] == c.columns()["score"]
        assert triage.run_cli(["generate", "--seed", "5", "--n-children", "300", "--out", d]) == 0
        assert triage.run_cli(["analyze", "--input", os.path.join(d, "cohort.csv"), "--bogus"]) == 2

    m = triage.mvpf(20, 62500, 280000, 15000, 2)
    assert m["class"]["class"] == "infinite" and m["net_government_cost"] == -940000

    assert abs(triage.iv_wald(-0.061, 0.73) - (-0.0836)) < 1e-3
    assert abs(triage.power_calc(0, 0, 1, 1000, 2, 0.4, 0.56, 0.10) - 0.10) < 1e-9

    rep = triage.verify_propositions(n_per_arm=20000, seed=2)
    assert all(ch["status"] != "fail" for ch in rep["checks"]), rep

    try:
        triage.generate_cohort(n_childs=5)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown field accepted")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
