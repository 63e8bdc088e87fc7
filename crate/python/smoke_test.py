"""Smoke test for the drift_forge_py extension.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/drift_forge_py-*.whl
then run `python python/smoke_test.py` (or `pytest python/smoke_test.py`).
"""

import json
import math
import tempfile
from pathlib import Path

import drift_forge_py as df


def tiny_config():
    base = json.loads(df.Config().to_json())
    entries = [s for s in df.default_scenarios() if s["name"].startswith("entry_")][:4]
    base["datagen"]["scenarios"] = entries
    base["train"]["epochs"] = 20
    base["train"]["batch_size"] = 100
    base["seed"] = 7
    return df.Config.from_json(json.dumps(base))


def test_fiala_is_odd_and_saturates():
    fz = 4000.0
    assert df.fiala_force(0.1, 0.0, fz) == -df.fiala_force(-0.1, 0.0, fz)
    assert abs(df.fiala_force(1.2, 0.0, fz, mu=1.0)) <= fz + 1e-9


def test_equilibrium_countersteers():
    eq = df.solve_equilibrium(df.Config(), 15.0, -40.0)
    assert eq["delta"] < 0.0
    assert eq["residual_norm"] < 1e-8
    ref = df.build_reference(df.Config())
    assert len(ref["equilibria"]) == 3
    assert math.isclose(ref["equilibria"][0]["v"], eq["v"], rel_tol=1e-9)


def test_pipeline_round_trip():
    cfg = tiny_config()
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        df.gen_data(cfg, out=out)
        df.train(cfg, out=out)
        net = df.Mlp.load(out / "weights.json")
        assert net.layer_sizes == [6, 8, 16, 1]
        assert math.isfinite(net.forward([0.7, 10.9, -0.7, -0.55, 0.0, 4000.0]))
        for v in ("physics", "neural"):
            manifest = df.run(cfg, v, out=out)
            assert manifest["seed"] == 7
        report = df.metrics(cfg, out=out)
        assert {m["variant"] for m in report["variants"]} == {"physics", "neural"}
        df.export(cfg, out=out)
        assert (out / "plot.csv").is_file()

        summary = df.run_variant(cfg, "neural", net)
        assert summary["variant"] == "neural"


def test_errors_are_python_exceptions():
    cfg = tiny_config()
    with tempfile.TemporaryDirectory() as tmp:
        try:
            df.train(cfg, out=tmp)
        except FileNotFoundError as e:
            assert "missing input" in str(e)
        else:
            raise AssertionError("train without a dataset should fail")
    try:
        df.run_variant(cfg, "hybrid")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown variant should fail")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
    print("smoke test passed")
