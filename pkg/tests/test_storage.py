import numpy as np
import pytest

from toyedit import model as M
from toyedit import storage, world
from toyedit.pairs import PairRecord


@pytest.fixture
def ckpt(tmp_path, tiny_params, tiny_config):
    path = tmp_path / "model.ckpt"
    storage.save_checkpoint(tiny_params, tiny_config,
                            {"stage": "test", "round": 2}, path)
    return path


def test_checkpoint_roundtrip_bit_exact(ckpt, tiny_params, tiny_config):
    params, config, meta = storage.load_checkpoint(ckpt)
    assert config == tiny_config
    assert meta["round"] == 2
    assert set(params) == set(tiny_params)
    for name in tiny_params:
        np.testing.assert_array_equal(params[name].data, tiny_params[name].data)
        assert params[name].data.dtype == np.float32


def test_checkpoint_bad_magic(ckpt):
    data = bytearray(ckpt.read_bytes())
    data[:4] = b"NOPE"
    ckpt.write_bytes(bytes(data))
    with pytest.raises(storage.BadMagicError):
        storage.load_checkpoint(ckpt)


def test_checkpoint_truncated(ckpt):
    data = ckpt.read_bytes()
    ckpt.write_bytes(data[: len(data) // 2])
    with pytest.raises(storage.TruncatedCheckpointError):
        storage.load_checkpoint(ckpt)


def test_checkpoint_version_bump(ckpt):
    data = bytearray(ckpt.read_bytes())
    data[4:8] = (storage.VERSION + 1).to_bytes(4, "little")
    ckpt.write_bytes(bytes(data))
    with pytest.raises(storage.UnsupportedVersionError, match=f"{storage.VERSION + 1}"):
        storage.load_checkpoint(ckpt)


def test_checkpoint_shape_mismatch(tmp_path, tiny_config):
    rng = np.random.default_rng(0)
    params = M.init_params(tiny_config, rng)
    params["head.w"].data = np.zeros((2, 2), dtype=np.float32)
    path = tmp_path / "bad.ckpt"
    storage.save_checkpoint(params, tiny_config, {}, path)
    with pytest.raises(storage.ShapeMismatchError, match="head.w"):
        storage.load_checkpoint(path)


# --- PNG codec ----------------------------------------------------------------

def test_png_roundtrip_quantization_bound():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    back = storage.decode_image(storage.encode_image(img))
    assert back.shape == (16, 16, 3)
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-7


def test_png_renders_roundtrip_to_same_factors():
    for f in world.all_factors()[::97]:
        img = world.render(f)
        back = storage.decode_image(storage.encode_image(img))
        assert world.classify(back) == f


def test_png_all_black():
    img = np.zeros((16, 16, 3), dtype=np.float32)
    back = storage.decode_image(storage.encode_image(img))
    np.testing.assert_array_equal(back, 0.0)


def test_png_malformed_bytes():
    with pytest.raises(storage.ImageDecodeError):
        storage.decode_image(b"definitely not a png")


def test_png_foreign_size_decodes():
    big = np.zeros((32, 24, 3), dtype=np.float32)
    back = storage.decode_image(storage.encode_image(big))
    assert back.shape == (32, 24, 3)


# --- manifests ------------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    f = world.FactorVector("square", "red", "black", "center", "large")
    i = world.EditInstruction("fg_color", "blue")
    rec = PairRecord(
        x_c=world.render(f), x=world.render(world.apply_instruction(f, i)),
        y_c=world.caption_of(f), y=i.tokens(),
        out_caption=world.caption_of(world.apply_instruction(f, i)),
        gamma=0.4, cfg=3.5, seed=123,
        scores={"dir": 1.0, "sim": 0.9, "reward": 3.9},
        provenance={"round": 0, "prompt": 7, "mode": "wma"})
    manifest = storage.write_manifest([rec], tmp_path, "candidates")
    assert manifest.name == "candidates.jsonl"
    loaded = storage.read_manifest(manifest)
    assert len(loaded) == 1
    out = loaded[0]
    assert out.y_c == rec.y_c and out.y == rec.y
    assert out.gamma == rec.gamma and out.seed == rec.seed
    assert out.scores == rec.scores
    assert out.provenance["prompt"] == 7
    # images round-trip within PNG quantization
    assert np.abs(out.x_c - rec.x_c).max() <= 1.0 / 255.0 + 1e-7
    assert world.classify(out.x) == world.apply_instruction(f, i)


def test_manifest_referenced_files_exist(tmp_path):
    f = world.FactorVector("circle", "green", "navy", "top", "small")
    i = world.EditInstruction("size", "large")
    rec = PairRecord(x_c=world.render(f), x=world.render(f),
                     y_c=world.caption_of(f), y=i.tokens(),
                     out_caption=world.caption_of(world.apply_instruction(f, i)),
                     gamma=None, cfg=2.0, seed=1)
    manifest = storage.write_manifest([rec], tmp_path, "sel")
    import json
    row = json.loads(manifest.read_text().splitlines()[0])
    assert (tmp_path / row["x_c"]).exists()
    assert (tmp_path / row["x"]).exists()
