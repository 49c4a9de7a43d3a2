"""Build the extension with cargo, import it and exercise the main operations.

    python3 python/smoke_test.py [--skip-build]
"""

import argparse
import importlib
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build(dest: Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "tcae-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libtcae_py.so"
    shutil.copy(lib, dest / "tcae.so")


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--skip-build", action="store_true", help="import tcae from sys.path as is")
    args = parser.parse_args()

    if not args.skip_build:
        tmp = Path(tempfile.mkdtemp(prefix="tcae-smoke-"))
        build(tmp)
        sys.path.insert(0, str(tmp))
    tcae = importlib.import_module("tcae")
    print("tcae", tcae.__version__, "from", tcae.__file__)

    images = tcae.generate_corpus("markov-texture", 8, 16, seed=1)
    corpus = [tcae.SymbolCuboid.from_image(w, h, px) for w, h, px in images]
    model = tcae.ContextModel(groups=2, residual_blocks=0, seed=2)
    print(model, "parameters:", model.parameter_count)

    before = tcae.bits_per_symbol(model, corpus)
    model, history, stop = tcae.train_model(model, corpus, batch_size=2, max_steps=300, eval_interval=100, crop=8, seed=3)
    for record in history:
        print("step={step} bits_per_symbol={bits_per_symbol:.4f} lr={lr:e}".format(**record))
    after = tcae.bits_per_symbol(model, corpus)
    assert after < before, (before, after)
    print(f"training: {before:.4f} -> {after:.4f} bits/symbol ({stop})")

    x = corpus[0]
    for schedule in ("raster", "slope"):
        m = model.with_schedule(schedule)
        data, enc = tcae.encode(x, m, tile=8)
        y, dec = tcae.decode(data, m)
        assert y == x and enc["pmf_digest"] == dec["pmf_digest"]
        print(f"{schedule}: {len(data)} bytes, {dec['passes']} passes")

    restored = tcae.ContextModel.from_bytes(model.to_bytes())
    assert restored.fingerprint == model.fingerprint

    w, h, px = images[0]
    filled = tcae.inpaint(model, w, h, px, seed=5)
    assert len(filled) == len(px) and filled[: w * (h - h // 3)] == px[: w * (h - h // 3)]

    counts = [tcae.quantize([0.9, 0.1])] * 4
    assert tcae.ac_decode(tcae.ac_encode([0, 1, 0, 0], counts), counts) == [0, 1, 0, 0]

    try:
        tcae.decode(b"junk", model)
    except tcae.TcaeError as e:
        print("rejected junk container:", e)
    else:
        raise AssertionError("junk container decoded")
    print("ok")


if __name__ == "__main__":
    main()
