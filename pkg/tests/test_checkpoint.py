import json

import pytest
import torch

from golde.checkpoint import MAGIC, load_checkpoint, read_header, save_checkpoint
from golde.data import Vocab
from golde.errors import CheckpointError
from golde.model import ProductManifoldConfig, init_params

CFG = ProductManifoldConfig.from_partition(10, 4, 2, 2)


def _model(dtype=torch.float64):
    model = init_params(CFG, 5, 3, seed=1, dtype=dtype)
    g = torch.Generator().manual_seed(0)
    return model.replace({k: v + torch.randn(v.shape, generator=g, dtype=torch.float64).to(dtype) for k, v in model.params.items()})


@pytest.mark.parametrize("dtype", [torch.float64, torch.float32])
def test_round_trip_is_bit_exact(tmp_path, dtype):
    model = _model(dtype)
    vocab = Vocab([f"e{i}" for i in range(5)], ["r0", "r1", "r2"])
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, vocab, seed=4, step=17)
    loaded, header = load_checkpoint(path)
    assert loaded.config == CFG
    for k, v in model.params.items():
        assert loaded.params[k].dtype == dtype
        assert torch.equal(loaded.params[k], v)
    assert header["seed"] == 4 and header["step"] == 17
    assert header["vocab"]["relations"] == ["r0", "r1", "r2"]


def test_layout_entities_then_relations(tmp_path):
    model = _model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    header = read_header(path)
    order = [(a["name"], a["relation"]) for a in header["arrays"]]
    assert order[0] == ("entity", None)
    rel_ids = [r for _, r in order[1:]]
    assert rel_ids == sorted(rel_ids)
    assert [n for n, r in order if r == 0] == ["c0.U", "c0.p_raw", "c1.U", "c1.p_raw", "c2.U", "c2.b", "c2.beta_raw", "c3.U", "c3.b", "c3.beta_raw"]
    raw = path.read_bytes()
    payload = raw.split(b"\n", 2)[2]
    first = torch.frombuffer(bytearray(payload[: 8 * 5 * 10]), dtype=torch.float64).reshape(5, 10)
    assert torch.equal(first, model.params["entity"])


def test_corrupt_files(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _model())
    raw = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"XX" + raw)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.ckpt")
    lines = raw.split(b"\n", 2)
    (tmp_path / "json.ckpt").write_bytes(lines[0] + b"\n{not json\n" + lines[2])
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(tmp_path / "json.ckpt")
    header = json.loads(lines[1])
    header["config"]["components"][0][1] = 7
    (tmp_path / "cfg.ckpt").write_bytes(MAGIC + json.dumps(header).encode() + b"\n" + lines[2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cfg.ckpt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")
