"""Build with `maturin develop` (or `pip install --no-build-isolation .`) in
crates/py, then run this script."""

import json
import math
import tempfile
from pathlib import Path

import mcop_py


def main():
    wall = mcop_py.synth_wall("smoke", [[0.0, 0.0], [1.5, 0.0]], 0.6, spacing=0.02, seed=3)
    assert len(wall.cloud) > 1000, wall.cloud

    truth = mcop_py.project(wall.cloud, wall.annotation, wall.sweep_toml)
    truth.validate()
    assert 0.5 < truth.completeness() <= 1.0, truth
    for col in (0, truth.width // 2, truth.width - 1):
        assert abs(truth.column_rotation_sum(col) - math.pi) < 1e-12

    eroded, held_out = mcop_py.erode(truth, target_fraction=0.4, seed=3)
    assert eroded.known_count() + sum(held_out) == truth.known_count()

    bank = mcop_py.patch_bank([truth], w=16)
    assert len(bank) > 0 and bank.w == 16

    completed, history = mcop_py.inpaint(eroded, bank, iterations=2, seed=3)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:])), history
    constant = mcop_py.constant_fill(eroded)

    ours = json.loads(mcop_py.evaluate(completed, truth, wall.annotation, wall.sweep_toml,
                                       held_out=held_out, n_windows=50, w=16))
    base = json.loads(mcop_py.evaluate(constant, truth, wall.annotation, wall.sweep_toml,
                                       held_out=held_out, n_windows=50, w=16))
    print(f"texture MAE {ours['mae_texture']:.4f} vs constant {base['mae_texture']:.4f}")
    print(f"chamfer {ours['chamfer_cd']:.3f} cm vs constant {base['chamfer_cd']:.3f} cm")

    same = json.loads(mcop_py.evaluate(truth, truth, wall.annotation, wall.sweep_toml, n_windows=20, w=16))
    assert same["mae_texture"] == 0.0 and same["chamfer_cd"] == 0.0

    cloud = mcop_py.reproject(completed, wall.annotation, wall.sweep_toml)
    p, c, cd = mcop_py.chamfer(cloud, cloud)
    assert cd == 0.0

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "completed.mcop"
        completed.write(path)
        again = mcop_py.McopImage.read(path)
        assert again.mask() == completed.mask()
        assert again.rotation_plane() == completed.rotation_plane()
        try:
            mcop_py.McopImage.read(Path(tmp) / "missing.mcop")
        except OSError as e:
            assert "missing.mcop" in str(e)
        else:
            raise AssertionError("reading a missing file should fail")

    try:
        mcop_py.run_pipeline("structures = []\nbogus = 1\n")
    except ValueError as e:
        print("config error:", e)
    else:
        raise AssertionError("unknown config key should fail")

    print("smoke test passed")


if __name__ == "__main__":
    main()
