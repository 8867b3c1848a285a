import struct
import zlib

import numpy as np
import pytest

from fopser.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from fopser.errors import FormatError
from fopser.features import NormStats
from fopser.model import FopConfig, add_compat_config, init_fop_params
from fopser.transfer import extract_feature, init_head

TINY = FopConfig(d_feat=6, d_model=8, n_heads=2, d_ff=11, n_layers=2, dropout_p=0.2, max_len=64)


def _ckpt(with_head=True, cfg=TINY, seed=0):
    rng = np.random.default_rng(seed)
    params = init_fop_params(cfg, rng)
    head = init_head(cfg, rng) if with_head else None
    stats = NormStats(
        rng.normal(0, 1, cfg.d_feat).astype(np.float32),
        rng.uniform(0.5, 2, cfg.d_feat).astype(np.float32),
    )
    prov = {"seed": str(seed), "epochs_run": "7", "final_train_loss": "0.125"}
    return Checkpoint(fop_cfg=cfg, params=params, norm_stats=stats, head=head, provenance=prov)


def _rewrite_with_valid_crc(path, mutate):
    """Apply `mutate(body bytearray) -> bytearray` and re-sign the CRC."""
    blob = path.read_bytes()
    body = bytearray(blob[4:-4])
    body = mutate(body)
    path.write_bytes(blob[:4] + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF))


def test_round_trip_bitwise(tmp_path):
    for with_head in (False, True):
        ckpt = _ckpt(with_head=with_head)
        p1, p2 = tmp_path / f"a{with_head}.fopc", tmp_path / f"b{with_head}.fopc"
        save_checkpoint(ckpt, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_values(tmp_path):
    ckpt = _ckpt()
    path = tmp_path / "x.fopc"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded.fop_cfg == ckpt.fop_cfg
    assert loaded.provenance == ckpt.provenance
    for (n1, t1), (n2, t2) in zip(ckpt.params.named_tensors(), loaded.params.named_tensors()):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)
    np.testing.assert_array_equal(ckpt.head.w_y.data, loaded.head.w_y.data)
    np.testing.assert_array_equal(ckpt.norm_stats.mean, loaded.norm_stats.mean)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.fopc"
    save_checkpoint(_ckpt(), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"WAT!"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_crc_mismatch(tmp_path):
    path = tmp_path / "x.fopc"
    save_checkpoint(_ckpt(), path)
    blob = bytearray(path.read_bytes())
    blob[60] ^= 0xFF  # flip one payload byte
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="CRC"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "x.fopc"
    save_checkpoint(_ckpt(), path)

    def bump_version(body):
        body[0:4] = struct.pack("<I", 9)
        return body

    _rewrite_with_valid_crc(path, bump_version)
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


def test_shape_inconsistent_with_config(tmp_path):
    path = tmp_path / "x.fopc"
    save_checkpoint(_ckpt(), path)

    def change_d_model(body):
        return bytearray(bytes(body).replace(b"d_model=8", b"d_model=4"))

    _rewrite_with_valid_crc(path, change_d_model)
    with pytest.raises(FormatError, match="config"):
        load_checkpoint(path)


def test_truncated_body(tmp_path):
    path = tmp_path / "x.fopc"
    save_checkpoint(_ckpt(), path)

    def cut(body):
        return body[:-64]

    _rewrite_with_valid_crc(path, cut)
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path)


def test_distinct_errors_are_distinguishable(tmp_path):
    """Magic, CRC and shape corruption raise messages naming different causes."""
    messages = {}
    for name, corrupt in (
        ("magic", lambda b: b"WAT!" + b[4:]),
        ("crc", lambda b: b[:60] + bytes([b[60] ^ 0xFF]) + b[61:]),
    ):
        path = tmp_path / f"{name}.fopc"
        save_checkpoint(_ckpt(), path)
        path.write_bytes(corrupt(path.read_bytes()))
        with pytest.raises(FormatError) as err:
            load_checkpoint(path)
        messages[name] = str(err.value)
    path = tmp_path / "shape.fopc"
    save_checkpoint(_ckpt(), path)
    _rewrite_with_valid_crc(path, lambda b: bytearray(bytes(b).replace(b"d_model=8", b"d_model=4")))
    with pytest.raises(FormatError) as err:
        load_checkpoint(path)
    messages["shape"] = str(err.value)
    assert "magic" in messages["magic"]
    assert "CRC" in messages["crc"]
    assert "config" in messages["shape"]
    assert len(set(messages.values())) == 3


def test_compat_checkpoint_supports_additive_hypercolumn(tmp_path):
    cfg = add_compat_config(n_layers=2)
    ckpt = _ckpt(cfg=cfg, with_head=False)
    path = tmp_path / "compat.fopc"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    F = np.random.default_rng(0).normal(0, 1, (5, 80)).astype(np.float32)
    out = extract_feature(F, loaded.params, loaded.fop_cfg, "add")
    assert out.frames.shape == (5, 80)


def test_provenance_round_trip_sorted(tmp_path):
    ckpt = _ckpt()
    ckpt.provenance = {"zeta": "1", "alpha": "2.5", "note": "plain text"}
    path = tmp_path / "p.fopc"
    save_checkpoint(ckpt, path)
    assert load_checkpoint(path).provenance == ckpt.provenance
