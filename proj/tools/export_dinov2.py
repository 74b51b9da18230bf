#!/usr/bin/env python3
"""Convert a DINOv2 ViT state dict into the weights container the foundation backbone reads.

    python3 tools/export_dinov2.py --checkpoint dinov2_vits14_pretrain.pth --out vits14.lkw
    python3 tools/export_dinov2.py --hub dinov2_vits14 --out vits14.lkw   # needs network

Layout: "LOOKALIKE-VIT\\n", u64 little-endian header length, JSON header, then every tensor
as row-major float64 in header order. Conv and token tensors are flattened to 2-D.
"""

import argparse
import json
import math
import re
import struct
import sys

import numpy as np

MAGIC = b"LOOKALIKE-VIT\n"
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]

BLOCK_KEYS = [
    "norm1.weight", "norm1.bias",
    "attn.qkv.weight", "attn.qkv.bias",
    "attn.proj.weight", "attn.proj.bias",
    "ls1.gamma",
    "norm2.weight", "norm2.bias",
    "mlp.fc1.weight", "mlp.fc1.bias",
    "mlp.fc2.weight", "mlp.fc2.bias",
    "ls2.gamma",
]


def load_state_dict(args):
    if args.checkpoint and args.checkpoint.endswith(".npz"):
        with np.load(args.checkpoint) as z:
            return {k: z[k] for k in z.files}
    import torch

    if args.hub:
        model = torch.hub.load("facebookresearch/dinov2", args.hub)
        state = model.state_dict()
    else:
        state = torch.load(args.checkpoint, map_location="cpu")
        if isinstance(state, dict) and "model" in state and "cls_token" not in state:
            state = state["model"]
    return {k: v.detach().cpu().numpy() for k, v in state.items()}


def as_matrix(name, a):
    a = np.asarray(a, dtype=np.float64)
    if name == "patch_embed.proj.weight":
        return a.reshape(a.shape[0], -1)  # [d, 3, p, p] -> [d, 3*p*p], channel-major
    if name in ("cls_token", "pos_embed"):
        return a.reshape(-1, a.shape[-1])
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"{name}: unexpected rank {a.ndim}")
    return a


def build(state, num_heads):
    if any(k.startswith("register_tokens") for k in state):
        raise ValueError("register-token variants are not supported")
    depth = 1 + max(int(m.group(1)) for k in state if (m := re.match(r"blocks\.(\d+)\.", k)))
    # Chunked checkpoints nest blocks as blocks.<chunk>.<i>; flatten them.
    if any(re.match(r"blocks\.\d+\.\d+\.", k) for k in state):
        state = {re.sub(r"blocks\.\d+\.(\d+)\.", r"blocks.\1.", k): v for k, v in state.items()}
        depth = 1 + max(int(m.group(1)) for k in state if (m := re.match(r"blocks\.(\d+)\.", k)))
    patch = state["patch_embed.proj.weight"]
    embed_dim, _, patch_size, _ = patch.shape
    pos_tokens = state["pos_embed"].reshape(-1, embed_dim).shape[0] - 1
    pos_grid = int(round(math.sqrt(pos_tokens)))
    if pos_grid * pos_grid != pos_tokens:
        raise ValueError("pos_embed is not a square grid")
    layerscale = "blocks.0.ls1.gamma" in state

    names = ["patch_embed.proj.weight", "patch_embed.proj.bias", "cls_token", "pos_embed"]
    for b in range(depth):
        names += [f"blocks.{b}.{k}" for k in BLOCK_KEYS if layerscale or not k.startswith("ls")]
    names += ["norm.weight", "norm.bias"]
    missing = [n for n in names if n not in state]
    if missing:
        raise ValueError("state dict lacks " + ", ".join(missing[:5]))

    tensors = [(n, as_matrix(n, state[n])) for n in names]
    header = {
        "vit": {
            "patch_size": int(patch_size),
            "embed_dim": int(embed_dim),
            "depth": depth,
            "num_heads": num_heads or int(embed_dim) // 64,
            "mlp_hidden": int(state["blocks.0.mlp.fc1.weight"].shape[0]),
            "pos_grid": pos_grid,
            "layerscale": layerscale,
            "mean": IMAGENET_MEAN,
            "std": IMAGENET_STD,
        },
        "tensors": [{"name": n, "rows": int(m.shape[0]), "cols": int(m.shape[1])} for n, m in tensors],
    }
    return header, tensors


def write(path, header, tensors):
    text = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for _, m in tensors:
            f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="state dict (.pth via torch, or .npz)")
    src.add_argument("--hub", help="torch.hub model name, e.g. dinov2_vits14")
    p.add_argument("--out", required=True)
    p.add_argument("--num-heads", type=int, default=0, help="default: embed_dim / 64")
    args = p.parse_args()
    try:
        header, tensors = build(load_state_dict(args), args.num_heads)
    except (ValueError, KeyError) as e:
        print(f"export_dinov2: {e}", file=sys.stderr)
        return 1
    write(args.out, header, tensors)
    v = header["vit"]
    print(f"wrote {args.out}: depth {v['depth']}, dim {v['embed_dim']}, patch {v['patch_size']}, "
          f"{len(tensors)} tensors")
    return 0


if __name__ == "__main__":
    sys.exit(main())
