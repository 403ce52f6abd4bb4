"""Smoke test for the tapertrap_py extension.

Builds the module with cargo, loads it from the build directory and
exercises each binding once.  Run from anywhere: python3 smoke_test.py
"""

import importlib.machinery
import importlib.util
import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load_module():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "tapertrap-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    suffix = {"darwin": ".dylib", "win32": ".dll"}.get(sys.platform, ".so")
    lib = ROOT / "target" / "release" / f"libtapertrap_py{suffix}"
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / ("tapertrap_py" + importlib.machinery.EXTENSION_SUFFIXES[0])
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("tapertrap_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    tt = load_module()
    print("tapertrap_py", tt.__version__)

    cfg = tt.ExperimentConfig(
        "mode1.power_mW = 0.8\nmode2.power_mW = 4\nmodel.force_scale = 1035\nsweep.R = 0.12, 0.2\n"
    )
    assert tt.ExperimentConfig(cfg.serialize()) == cfg
    assert len(cfg.digest()) == 64
    try:
        tt.ExperimentConfig("particle.radius_nm = -1\n")
    except ValueError as err:
        assert "line 1" in str(err)
    else:
        raise AssertionError("negative radius accepted")

    n = tt.effective_index(400e-9, 640e-9)
    assert 1.33 < n < 1.45, n
    assert tt.top_intensity(400e-9, 640e-9, 1e-3) > 0
    assert tt.polarization_correction(500e-9, 640e-9, 785e-9, 0.0) == 1.0
    re, im = tt.gold_polarizability(10e-9, 640e-9)
    assert re > 0 and im > 0
    assert abs(tt.estimate_gamma(237e-6, 3.89e-12) - 1.64e-8) < 1e-10

    model = tt.TrapModel(cfg)
    sols = model.scan(cfg.sweep)
    assert all(s.stable for _, s in sols)
    assert sols[0][1].z0 < sols[1][1].z0
    print("trap positions (mm):", [round(s.z0 * 1e3, 4) for _, s in sols])

    sol = model.find_trap(0.12)
    gamma = 1.35e-8
    runs = model.simulate([(0.0, sol.z0 + 80e-6)], gamma, 10.0, temperature=0.0, seed=1, ratio=0.12)
    kymo = tt.render_kymograph(runs, sol.z0 - 300e-6, sol.z0 + 300e-6, 10.0, noise_sigma=0.1, seed=2)
    result = json.loads(tt.analyze_kymograph(kymo, cfg, gamma))
    lam = result["lambda_plus_per_s"]
    expected = sol.stiffness / gamma
    assert abs(result["trap_position_m"] - sol.z0) < 23e-6
    assert abs(lam / expected - 1) < 0.05, (lam, expected)
    print(f"relaxation rate {lam:.4f}/s vs model {expected:.4f}/s")

    samples = tt.simulate_harmonic(1e-7, 1.4e-9, 20000, seed=3)
    var = sum(z * z for _, z in samples[2000:]) / len(samples[2000:])
    assert math.isfinite(var) and var > 0
    print("smoke test passed")


if __name__ == "__main__":
    main()
