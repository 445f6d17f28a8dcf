"""Binary model file round-trips and corruption handling."""

import numpy as np
import pytest

from ornnkit.fxp import calibrate
from ornnkit.hadamard import SignVector
from ornnkit.modelfile import (
    ModelBundle,
    ModelFileError,
    bundle_from_state,
    load_model,
    save_model,
)
from ornnkit.quantizer import quantize_uniform
from ornnkit.train import Architecture, TrainConfig, init_state


def make_bundle(rng, uv_bits=None, col=False, arch_kwargs=None):
    arch = Architecture(d_in=3, d_out=2, k=3, unit="relu",
                        output_mode="many-to-one", train_col_signs=col,
                        **(arch_kwargs or {}))
    config = TrainConfig(uv_bits=uv_bits, seed=0)
    state = init_state(arch, 0)
    state.params["u"] = np.sign(rng.normal(size=arch.d_h)) * 0.7
    if col:
        state.params["c"] = np.sign(rng.normal(size=arch.d_h)) * 0.5
    state.params["b_i"] = rng.normal(size=arch.d_h)
    state.params["b_o"] = rng.normal(size=arch.d_out)
    return bundle_from_state(state, arch, config)


def assert_bundles_equal(a: ModelBundle, b: ModelBundle):
    assert a.arch == b.arch
    assert np.array_equal(a.row_signs.signs, b.row_signs.signs)
    if a.col_signs is None:
        assert b.col_signs is None
    else:
        assert np.array_equal(a.col_signs.signs, b.col_signs.signs)
    for x, y in ((a.U, b.U), (a.V, b.V)):
        if isinstance(x, np.ndarray):
            assert np.array_equal(x, y)
        else:
            assert np.array_equal(x.codes, y.codes)
            assert x.scale == y.scale and x.p == y.p
    assert np.array_equal(a.b_i, b.b_i)
    assert np.array_equal(a.b_o, b.b_o)


class TestRoundTrip:
    @pytest.mark.parametrize("uv_bits", [None, 4, 8, "ternary"])
    def test_bit_exact(self, tmp_path, uv_bits):
        rng = np.random.default_rng(0)
        bundle = make_bundle(rng, uv_bits=uv_bits)
        path = tmp_path / "m.hdrn"
        save_model(path, bundle)
        assert_bundles_equal(load_model(path), bundle)

    def test_column_signs(self, tmp_path):
        rng = np.random.default_rng(1)
        bundle = make_bundle(rng, uv_bits=4, col=True)
        path = tmp_path / "m.hdrn"
        save_model(path, bundle)
        loaded = load_model(path)
        assert loaded.col_signs is not None
        assert_bundles_equal(loaded, bundle)

    def test_block_ternary_arch(self, tmp_path):
        rng = np.random.default_rng(2)
        bundle = make_bundle(rng, uv_bits=4,
                             arch_kwargs={"kind": "block-ternary", "q": 2})
        path = tmp_path / "m.hdrn"
        save_model(path, bundle)
        loaded = load_model(path)
        assert loaded.arch.kind == "block-ternary" and loaded.arch.q == 2
        assert_bundles_equal(loaded, bundle)

    def test_with_plan(self, tmp_path):
        rng = np.random.default_rng(3)
        bundle = make_bundle(rng, uv_bits=4)
        model = bundle.to_model()
        plan = calibrate(model, rng.uniform(-1, 1, size=(2, 5, 3)),
                         p_a=12, p_i=8, alpha_i=2.0, p=4)
        path = tmp_path / "m.hdrn"
        save_model(path, bundle.with_plan(plan))
        loaded = load_model(path)
        got = loaded.plan
        assert got is not None
        for name in ("p", "p_a", "p_i", "n_h", "alpha_U", "alpha_V", "alpha_W",
                     "alpha_i", "alpha_h", "max_h"):
            assert getattr(got, name) == getattr(plan, name)
        assert np.array_equal(got.U_codes, plan.U_codes)
        assert np.array_equal(got.V_codes, plan.V_codes)
        assert np.array_equal(got.bias_codes, plan.bias_codes)
        assert np.array_equal(got.b_o, plan.b_o)

    def test_to_model_matches_decoded_views(self):
        rng = np.random.default_rng(4)
        bundle = make_bundle(rng, uv_bits=4)
        model = bundle.to_model()
        assert np.array_equal(model.U, bundle.U.decode())
        assert model.unit == "relu" and model.output_mode == "many-to-one"


class TestBundle:
    def test_uv_bits_property(self):
        rng = np.random.default_rng(5)
        assert make_bundle(rng, uv_bits=None).uv_bits is None
        assert make_bundle(rng, uv_bits=6).uv_bits == 6
        assert make_bundle(rng, uv_bits="ternary").uv_bits == "ternary"

    def test_quantized_views_frozen_from_latents(self):
        rng = np.random.default_rng(6)
        arch = Architecture(d_in=3, d_out=2, k=3)
        config = TrainConfig(uv_bits=4, seed=0)
        state = init_state(arch, 0)
        bundle = bundle_from_state(state, arch, config)
        expected = quantize_uniform(state.params["U"], 4)
        assert np.array_equal(bundle.U.codes, expected.codes)
        assert bundle.U.scale == expected.scale


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hdrn"
        path.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(ModelFileError):
            load_model(path)

    def test_truncated(self, tmp_path):
        rng = np.random.default_rng(7)
        path = tmp_path / "m.hdrn"
        save_model(path, make_bundle(rng, uv_bits=4))
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 5])
        with pytest.raises(ModelFileError):
            load_model(path)

    def test_trailing_bytes(self, tmp_path):
        rng = np.random.default_rng(8)
        path = tmp_path / "m.hdrn"
        save_model(path, make_bundle(rng))
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(ModelFileError):
            load_model(path)
