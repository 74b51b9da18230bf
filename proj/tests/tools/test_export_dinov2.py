"""Export a small random ViT state dict, read the container back, then train one step on it."""

import json
import os
import struct
import subprocess
import sys
import tempfile

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
SCRIPT = os.path.join(HERE, "..", "..", "tools", "export_dinov2.py")


def fake_state(rng, d=16, depth=2, p=14, grid=4, hidden=32):
    s = {
        "cls_token": rng.normal(size=(1, 1, d)),
        "pos_embed": rng.normal(size=(1, 1 + grid * grid, d)) * 0.02,
        "mask_token": np.zeros((1, d)),
        "patch_embed.proj.weight": rng.normal(size=(d, 3, p, p)) * 0.02,
        "patch_embed.proj.bias": np.zeros(d),
        "norm.weight": np.ones(d),
        "norm.bias": np.zeros(d),
    }
    for b in range(depth):
        pre = f"blocks.{b}."
        s[pre + "norm1.weight"], s[pre + "norm1.bias"] = np.ones(d), np.zeros(d)
        s[pre + "norm2.weight"], s[pre + "norm2.bias"] = np.ones(d), np.zeros(d)
        s[pre + "attn.qkv.weight"], s[pre + "attn.qkv.bias"] = rng.normal(size=(3 * d, d)) * 0.2, np.zeros(3 * d)
        s[pre + "attn.proj.weight"], s[pre + "attn.proj.bias"] = rng.normal(size=(d, d)) * 0.2, np.zeros(d)
        s[pre + "mlp.fc1.weight"], s[pre + "mlp.fc1.bias"] = rng.normal(size=(hidden, d)) * 0.2, np.zeros(hidden)
        s[pre + "mlp.fc2.weight"], s[pre + "mlp.fc2.bias"] = rng.normal(size=(d, hidden)) * 0.2, np.zeros(d)
        s[pre + "ls1.gamma"], s[pre + "ls2.gamma"] = np.full(d, 0.1), np.full(d, 0.1)
    return s


def read_container(path):
    with open(path, "rb") as f:
        assert f.readline() == b"LOOKALIKE-VIT\n"
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n))
        out = {}
        for t in header["tensors"]:
            count = t["rows"] * t["cols"]
            out[t["name"]] = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(t["rows"], t["cols"])
        assert f.read() == b""
    return header, out


def main(cli):
    rng = np.random.default_rng(0)
    state = fake_state(rng)
    with tempfile.TemporaryDirectory() as tmp:
        npz = os.path.join(tmp, "state.npz")
        np.savez(npz, **state)
        weights = os.path.join(tmp, "vit.lkw")
        subprocess.run([sys.executable, SCRIPT, "--checkpoint", npz, "--out", weights, "--num-heads", "2"], check=True)

        header, tensors = read_container(weights)
        vit = header["vit"]
        assert (vit["depth"], vit["embed_dim"], vit["patch_size"], vit["pos_grid"], vit["mlp_hidden"]) == (2, 16, 14, 4, 32), vit
        assert "mask_token" not in tensors
        assert np.array_equal(tensors["patch_embed.proj.weight"], state["patch_embed.proj.weight"].reshape(16, -1))
        assert np.array_equal(tensors["pos_embed"], state["pos_embed"][0])
        assert np.array_equal(tensors["blocks.1.mlp.fc2.weight"], state["blocks.1.mlp.fc2.weight"])

        # Register variants are refused.
        bad = dict(state, register_tokens=np.zeros((1, 4, 16)))
        np.savez(npz, **bad)
        r = subprocess.run([sys.executable, SCRIPT, "--checkpoint", npz, "--out", weights + ".x"], capture_output=True)
        assert r.returncode == 1 and not os.path.exists(weights + ".x")

        # The backbone accepts the file: one training step on a one-scene toy set.
        data = os.path.join(tmp, "toy")
        subprocess.run([cli, "make-toy", "--out", data, "--scenes", "1", "--seed", "3"], check=True, capture_output=True)
        config = os.path.join(tmp, "run.json")
        with open(config, "w") as f:
            json.dump({"backbone": {"kind": "foundation", "weights": weights, "input_size": 56,
                                    "intermediate_layers": [1], "output_dim": 16},
                       "encoder": {"embed_dim": 16, "n_heads": 2}}, f)
        r = subprocess.run([cli, "train", "--config", config, "--data", data, "--out", os.path.join(tmp, "run"),
                            "--steps", "1", "--batch", "4", "--workers", "1"], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
    print("export_dinov2: ok")


if __name__ == "__main__":
    main(sys.argv[1])
