"""Smoke test for the polarmil_py extension.

Build and install first:
    pip install --no-build-isolation -e crates/python
then run:
    python crates/python/python/smoke_test.py
"""

import math
import os
import tempfile

import polarmil_py as pm


def check_polar():
    img = [[float(r * 8 + c) for c in range(8)] for r in range(8)]
    grid = pm.polar_transform(img, (4, 4), n_r=4, n_theta=8, radius=4.0, interpolation="nearest")
    assert len(grid) == 4 and len(grid[0]) == 8
    assert all(v == img[4][4] for v in grid[0])
    # ray 0 points along +col, ray 2 along +row
    assert grid[1][0] == img[4][5]
    assert grid[1][2] == img[5][4]
    lengths = pm.loi_valid_lengths((2, 2, 6, 6), (4, 4), 8, 8, n_r=4, n_theta=8, radius=4.0)
    assert len(lengths) == 8 and all(1 <= n <= 4 for n in lengths)


def check_smooth_max():
    w = pm.radial_weights(10, 0.5)
    assert w[0] == 1.0 and abs(w[-1] - 0.5) < 1e-12
    bag = [0.1, 0.9, 0.4]
    q, g = pm.weighted_quasimax(bag, [1.0, 1.0, 1.0], 4.0)
    assert 0.9 - math.log(3) / 4.0 <= q <= 0.9
    assert abs(sum(g) - 1.0) < 1e-12
    s, _ = pm.weighted_softmax([0.3], [1.0], 8.0)
    assert s == 0.3


def check_eval():
    gt = [[1.0] * 4 for _ in range(4)]
    pred = [[1.0, 1.0, 0.0, 0.0] for _ in range(4)]
    assert abs(pm.dice(pred, gt) - 2.0 / 3.0) < 1e-12
    assert pm.binarize([[0.49] * 3] * 3) == [[0.0] * 3] * 3


def check_loss():
    maps = [[[0.1 + 0.8 * ((r * 7 + c * 3) % 11) / 10 for c in range(8)] for r in range(8)]]
    cfg = pm.RunConfig()
    cfg.set("polar.n_r", "4")
    cfg.set("polar.radius", "4")
    cfg.set("polar.n_theta", "12")
    terms, grads = pm.combined_loss(maps, [(1, 1, 6, 6)], cfg)
    assert terms["combined"] > 0.0
    assert len(grads) == 1 and len(grads[0]) == 8


def check_training():
    cfg = pm.RunConfig(
        seed=3,
        data__image_size=32,
        data__n_train=6,
        data__n_val=2,
        model__base_channels=4,
        train__epochs=1,
        adam__batch_size=3,
    )
    items = pm.generate(cfg)
    assert len(items) == 8
    assert sum(1 for i in items if i["split"] == "val") == 2
    t, l, b, r, _ = items[0]["loose_box"]
    assert 0 <= t <= b < 32 and 0 <= l <= r < 32

    model, metrics = pm.train_synthetic(cfg)
    assert [m["epoch"] for m in metrics] == [1]
    maps = model.predict([items[0]["image"]])
    assert all(0.0 <= v <= 1.0 for row in maps[0] for v in row)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "weights.bin")
        model.save(path)
        again = pm.Model.load(path, cfg)
        assert again.predict([items[0]["image"]]) == maps

    try:
        pm.RunConfig(no_such_key=1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")


if __name__ == "__main__":
    check_polar()
    check_smooth_max()
    check_eval()
    check_loss()
    check_training()
    print("smoke test passed")
