"""Smoke test for the Python extension.

Build first:  cargo build --release -p mrestore-py
Then run:     python3 python/smoke_test.py [path/to/libmrestore_py.so]
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def find_library(argv):
    if len(argv) > 1:
        return pathlib.Path(argv[1])
    for profile in ("release", "debug"):
        for name in ("libmrestore_py.so", "libmrestore_py.dylib", "mrestore_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                return path
    sys.exit("extension not found; run `cargo build --release -p mrestore-py` first")


def load(path):
    tmp = pathlib.Path(tempfile.mkdtemp())
    suffix = ".pyd" if path.suffix == ".dll" else ".so"
    target = tmp / ("mrestore_py" + suffix)
    shutil.copy(path, target)
    spec = importlib.util.spec_from_file_location("mrestore_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    m = load(find_library(sys.argv))

    costs = m.analyze("full", 256, 256)
    assert costs["params"] == 5_992_883, costs
    assert abs(costs["flops"] / 1e9 - 156.9) < 0.1, costs
    print(f"full preset: {costs['params']} params, {costs['flops'] / 1e9:.1f} GFLOPs at 256x256")

    shape = (3, 13, 17)
    clean = m.synthetic_scene(13, 17, 5)
    noisy = m.add_noise(clean, shape, 25.0, 1)
    assert len(noisy) == 3 * 13 * 17

    model = m.Model("tiny", 0)
    assert model.num_params > 0 and model.in_channels == 3
    restored = model.restore(noisy, shape)
    clipped = [min(max(v, 0.0), 1.0) for v in noisy]
    assert max(abs(a - b) for a, b in zip(restored, clipped)) < 1e-6, "untrained model is not the identity"

    p = m.psnr(noisy, clean, shape)
    assert math.isfinite(p) and 15.0 < p < 25.0, p
    assert m.psnr(clean, clean, shape) == math.inf
    assert abs(m.ssim(clean, clean, shape) - 1.0) < 1e-12

    try:
        m.analyze("huge")
    except ValueError as e:
        print(f"bad preset rejected: {e}")
    else:
        raise AssertionError("unknown preset accepted")

    print(f"noisy psnr {p:.2f} dB; identity restore ok")
    print("smoke test passed")


if __name__ == "__main__":
    main()
