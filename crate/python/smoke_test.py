"""Smoke test for the `ddcnn` extension module.

Build and run from the repository root:

    cargo build --release -p ddcnn-py --features extension-module
    cp target/release/libddcnn.so python/ddcnn.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import ddcnn  # noqa: E402


def main():
    assert ddcnn.count_params("cnn5") == 4_305_859
    assert ddcnn.count_params("ddcnn") == 127_491
    assert ddcnn.count_macs("ddcnn") < ddcnn.count_macs("cnn5")
    rows = ddcnn.architecture("ddcnn")
    assert ("Disout-11", [-1, 256, 40, 4], 0) in rows

    m = ddcnn.synthetic_log_mel("transportation", index=0, seed=1)
    assert len(m) == 640 and all(len(r) == 64 for r in m)
    masked = ddcnn.spec_augment(m, seed=3, mask_value=-100.0)
    assert len(masked) == 640
    assert ddcnn.spec_augment(m, seed=3, freq_mask_param=0, time_mask_param=0) == m

    model = ddcnn.Model("ddcnn", seed=0)
    logits = model.predict([m, m])
    assert len(logits) == 2 and all(len(r) == 3 for r in logits)
    assert all(math.isfinite(v) for r in logits for v in r)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = ddcnn.Model.load(path)
        assert again.predict([m]) == model.predict([m])

    try:
        ddcnn.Model("bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model name accepted")

    trained, log = ddcnn.train_synthetic(2, model="cnn3", epochs=2, crop_frames=64, seed=5)
    assert len(log) == 2 and log[0]["epoch"] == 1
    report = trained.evaluate_synthetic(1, seed=9, crop_frames=64)
    assert 0.0 <= report["accuracy"] <= 1.0
    assert sum(map(sum, report["confusion"])) == 3
    print(report["table"])
    print("smoke test ok:", trained)


if __name__ == "__main__":
    main()
