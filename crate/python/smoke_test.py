#!/usr/bin/env python3
"""Smoke test for the tripse_py extension module.

Builds nothing itself: it locates the cdylib produced by
`cargo build -p tripse-py` (release preferred), exposes it as an
importable module, and exercises the main surface end to end.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_tripse_py():
    candidates = [
        ROOT / "target" / "release" / "libtripse_py.so",
        ROOT / "target" / "debug" / "libtripse_py.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p tripse-py [--release]")
    stage = Path(tempfile.mkdtemp(prefix="tripse_py_"))
    shutil.copy2(lib, stage / "tripse_py.so")
    sys.path.insert(0, str(stage))
    import tripse_py

    return tripse_py


def approx(a, b, tol=1e-6):
    return abs(a - b) <= tol


def main():
    tp = import_tripse_py()
    print(f"tripse_py {tp.__version__} loaded")

    # Reverse-mode gradients: d/dx sum(x*x) = 2x.
    x = tp.Tensor([3], [1.0, -2.0, 0.5]).trainable()
    y = x.mul(x).sum_all()
    assert y.shape == [1] and approx(y.tolist()[0], 1.0 + 4.0 + 0.25)
    y.backward()
    assert all(approx(g, 2 * v) for g, v in zip(x.grad(), [1.0, -2.0, 0.5]))
    print("autodiff: ok")

    # Attention blocks preserve shape and contract every element.
    inp = tp.Tensor.randn([2, 6, 5, 5], seed=11)
    for variant in ["se", "ta", "tripse1", "tripse2", "tripse3", "tripse4"]:
        blk = tp.Attention(variant, 6, 5, 5, reduction=2, kernel=3, seed=3)
        out = blk.forward(inp)
        assert out.shape == [2, 6, 5, 5], variant
        assert all(
            abs(o) <= abs(i) + 1e-7 for o, i in zip(out.tolist(), inp.tolist())
        ), variant
    print("attention forward: ok")

    # Parameter accounting matches the published overhead numbers.
    per_stage, total = tp.attention_params("tripse1")
    assert total == 100650, total
    assert sum(per_stage) == total
    assert tp.attention_params("se")[1] == 99450
    assert tp.attention_params("none")[1] == 0
    print("attention_params: ok (tripse1 -> 100650)")

    # Gradcheck in f64: analytic vs central finite differences.
    report = tp.gradcheck("tripse2")
    assert report and all(err < 1e-4 for _, err in report), report
    print(f"gradcheck: ok ({len(report)} parameters)")

    # A short synthetic training run returns coherent metrics.
    history = tp.train_synth("tripse1", epochs=2, seed=0)
    assert len(history) == 2
    for epoch, loss, train_acc, val_acc in history:
        assert epoch in (1, 2)
        assert math.isfinite(loss) and loss > 0
        assert 0.0 <= train_acc <= 1.0 and 0.0 <= val_acc <= 1.0
    print(f"train_synth: ok (final loss {history[-1][1]:.4f})")

    # Model save/load round trip preserves behavior exactly.
    model = tp.Model("tripse4", classes=3, image_size=16, widths=[4, 6, 6, 8], kernel=3, seed=5)
    total, attn = model.count_params()
    assert 0 < attn < total
    probe = tp.Tensor.randn([2, 1, 16, 16], seed=21)
    before = model.forward(probe).tolist()
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "weights.tsew")
        model.save(path)
        twin = tp.Model("tripse4", classes=3, image_size=16, widths=[4, 6, 6, 8], kernel=3, seed=99)
        assert twin.forward(probe).tolist() != before
        twin.load(path)
        assert twin.forward(probe).tolist() == before
        assert twin.fingerprint() == model.fingerprint()
    print("model save/load: ok")

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
