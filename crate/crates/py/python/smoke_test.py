"""Smoke test for the ovmap extension module.

Build and install with `maturin develop -m crates/py/Cargo.toml --features
extension-module`, or point PYTHONPATH at a directory holding the built
library renamed to ovmap.so, then run this script.
"""

import math
import sys
import tempfile

import ovmap


def main():
    assert ovmap.merge_criterion(0.6, 0.5, 0.25, 0.5)
    assert not ovmap.merge_criterion(1.0, 0.1, 0.25, 0.5)

    cube = [[x * 0.1, y * 0.1, z * 0.1] for x in range(4) for y in range(4) for z in range(4)]
    half = [p for p in cube if p[0] < 0.2]
    a, b = ovmap.voxel_iov(half, cube, 0.1)
    assert math.isclose(a, 1.0) and math.isclose(b, 0.5), (a, b)

    crops = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]
    e = ovmap.aggregate_embedding(crops)
    assert math.isclose(math.hypot(*e), 1.0, rel_tol=1e-6)
    try:
        ovmap.aggregate_embedding([[1.0, 0.0]] * 5, [0.25, 0.25, 0.25, 0.25, 1.0])
    except ovmap.OvmapError:
        pass
    else:
        raise AssertionError("cancelling weights must raise")

    pts = [[float(i), 0.0, 0.0] for i in range(4)]
    m = ovmap.compute_metrics(pts, [0, 1, 1, 1], pts, [0, 0, 1, 1])
    assert math.isclose(m["miou"], 7 / 12) and math.isclose(m["macc"], 0.75), m

    with tempfile.TemporaryDirectory() as tmp:
        manifest = ovmap.synth(tmp, seed=3, objects=4, frames=5)
        scene = ovmap.Scene.load(manifest)
        objects = ovmap.fuse(scene)
        report = ovmap.segment_eval(objects, scene)
        print(scene, "->", len(objects), "objects, mIoU", report["miou"])
        assert len(objects) == report["gt_instances"] == 4
        assert report["miou"] == 1.0
        objects.save(tmp + "/map.ovom")
        again = ovmap.ObjectMap.load(tmp + "/map.ovom")
        assert len(again) == len(objects)
        assert again.config_hash == objects.config_hash

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
