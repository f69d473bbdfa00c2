#!/usr/bin/env python3
"""Converts CLIP vision weights to the dictas tensor archive.

  export        open_clip or Hugging Face CLIP -> archive, plus text embeddings
                for a prompt list (see `dictas prompts`)
  tiny-fixture  small random ViT with reference features computed in float64
                PyTorch, for the C++ parity test

Examples:
  dictas prompts --classes bottle,cable > prompts.txt
  python tools/export_clip.py export --source hf --model openai/clip-vit-large-patch14-336 \\
      --prompt-list prompts.txt --out weights/vit_l14_336.dictas
"""

import argparse
import json
import struct
import sys

import numpy as np
import torch
import torch.nn.functional as F

MAGIC = b"DICTAS01"
CLIP_MEAN = [0.48145466, 0.4578275, 0.40821073]
CLIP_STD = [0.26862954, 0.26130258, 0.27577711]


def write_archive(path, meta, tensors):
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        a = np.asarray(tensors[name], dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        if a.ndim != 2:
            raise ValueError(f"{name}: archives hold 2-D tensors, got shape {a.shape}")
        blob = np.ascontiguousarray(a, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": [int(a.shape[0]), int(a.shape[1])], "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    text = json.dumps({"meta": meta, "tensors": entries}, indent=2).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for b in blobs:
            f.write(b)


def t2n(x):
    return x.detach().to(torch.float64).cpu().numpy()


def from_open_clip(name, pretrained):
    import open_clip

    model, _, _ = open_clip.create_model_and_transforms(name, pretrained=pretrained)
    model.eval()
    v = model.visual
    sd = {k: t2n(p) for k, p in v.state_dict().items()}
    width = sd["conv1.weight"].shape[0]
    patch = sd["conv1.weight"].shape[-1]
    out = {k: a for k, a in sd.items() if k.startswith(("transformer.", "ln_pre.", "ln_post."))}
    out["conv1.weight"] = sd["conv1.weight"].reshape(width, -1)
    out["class_embedding"] = sd["class_embedding"]
    out["positional_embedding"] = sd["positional_embedding"]
    out["proj"] = sd["proj"]
    meta = {
        "width": width,
        "depth": len(v.transformer.resblocks),
        "heads": v.transformer.resblocks[0].attn.num_heads,
        "patch_size": patch,
        "image_size": v.image_size[0] if isinstance(v.image_size, (tuple, list)) else v.image_size,
        "embed_dim": sd["proj"].shape[1],
        "quick_gelu": bool(getattr(model, "quick_gelu", name.endswith("quickgelu") or pretrained == "openai")),
    }
    tokenizer = open_clip.get_tokenizer(name)

    def encode_text(prompts):
        with torch.no_grad():
            return t2n(model.encode_text(tokenizer(prompts)))

    return meta, out, encode_text


def from_hf(name):
    from transformers import CLIPModel, CLIPTokenizer

    model = CLIPModel.from_pretrained(name)
    model.eval()
    cfg = model.config.vision_config
    sd = {k: t2n(p) for k, p in model.state_dict().items()}
    pre = "vision_model."
    width, patch = cfg.hidden_size, cfg.patch_size
    out = {
        "conv1.weight": sd[pre + "embeddings.patch_embedding.weight"].reshape(width, -1),
        "class_embedding": sd[pre + "embeddings.class_embedding"],
        "positional_embedding": sd[pre + "embeddings.position_embedding.weight"],
        "ln_pre.weight": sd[pre + "pre_layrnorm.weight"],
        "ln_pre.bias": sd[pre + "pre_layrnorm.bias"],
        "ln_post.weight": sd[pre + "post_layernorm.weight"],
        "ln_post.bias": sd[pre + "post_layernorm.bias"],
        "proj": sd["visual_projection.weight"].T,
    }
    for i in range(cfg.num_hidden_layers):
        src = f"{pre}encoder.layers.{i}."
        dst = f"transformer.resblocks.{i}."
        for a, b in (("layer_norm1", "ln_1"), ("layer_norm2", "ln_2")):
            out[dst + b + ".weight"] = sd[src + a + ".weight"]
            out[dst + b + ".bias"] = sd[src + a + ".bias"]
        out[dst + "attn.in_proj_weight"] = np.concatenate(
            [sd[src + f"self_attn.{p}_proj.weight"] for p in "qkv"], axis=0)
        out[dst + "attn.in_proj_bias"] = np.concatenate([sd[src + f"self_attn.{p}_proj.bias"] for p in "qkv"])
        out[dst + "attn.out_proj.weight"] = sd[src + "self_attn.out_proj.weight"]
        out[dst + "attn.out_proj.bias"] = sd[src + "self_attn.out_proj.bias"]
        out[dst + "mlp.c_fc.weight"] = sd[src + "mlp.fc1.weight"]
        out[dst + "mlp.c_fc.bias"] = sd[src + "mlp.fc1.bias"]
        out[dst + "mlp.c_proj.weight"] = sd[src + "mlp.fc2.weight"]
        out[dst + "mlp.c_proj.bias"] = sd[src + "mlp.fc2.bias"]
    meta = {
        "width": width,
        "depth": cfg.num_hidden_layers,
        "heads": cfg.num_attention_heads,
        "patch_size": patch,
        "image_size": cfg.image_size,
        "embed_dim": model.config.projection_dim,
        "quick_gelu": cfg.hidden_act == "quick_gelu",
    }
    tokenizer = CLIPTokenizer.from_pretrained(name)

    def encode_text(prompts):
        with torch.no_grad():
            batch = tokenizer(prompts, padding=True, return_tensors="pt")
            return t2n(model.get_text_features(**batch))

    return meta, out, encode_text


def cmd_export(args):
    if args.source == "open_clip":
        meta, tensors, encode_text = from_open_clip(args.model, args.pretrained)
    else:
        meta, tensors, encode_text = from_hf(args.model)
    meta.update({"name": args.name, "mean": CLIP_MEAN, "std": CLIP_STD, "default_layers": args.layers})
    if args.prompt_list:
        with open(args.prompt_list, encoding="utf-8") as f:
            prompts = list(dict.fromkeys(line.rstrip("\n") for line in f if line.strip()))
        rows = []
        for i in range(0, len(prompts), 256):
            e = encode_text(prompts[i:i + 256])
            rows.append(e / np.linalg.norm(e, axis=1, keepdims=True))
        tensors["text_embeddings"] = np.concatenate(rows, axis=0)
        meta["prompts"] = prompts
    write_archive(args.out, meta, tensors)
    print(f"wrote {args.out}: {len(tensors)} tensors, depth {meta['depth']}, "
          f"{meta['image_size']} px, patch {meta['patch_size']}", file=sys.stderr)


class ResBlock(torch.nn.Module):
    def __init__(self, width, heads, quick_gelu):
        super().__init__()
        self.ln_1 = torch.nn.LayerNorm(width)
        self.attn = torch.nn.MultiheadAttention(width, heads)
        self.ln_2 = torch.nn.LayerNorm(width)
        self.c_fc = torch.nn.Linear(width, 4 * width)
        self.c_proj = torch.nn.Linear(4 * width, width)
        self.quick_gelu = quick_gelu

    def forward(self, x):
        h = self.ln_1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        h = self.c_fc(self.ln_2(x))
        h = h * torch.sigmoid(1.702 * h) if self.quick_gelu else F.gelu(h)
        return x + self.c_proj(h)


def cmd_tiny_fixture(args):
    torch.manual_seed(args.seed)
    torch.set_default_dtype(torch.float64)
    width, heads, depth, patch, image, embed = 16, 2, 3, 4, 12, 8
    grid = image // patch
    layers = [1, 3]
    conv1 = torch.nn.Conv2d(3, width, patch, patch, bias=False)
    cls = torch.randn(width) * 0.5
    pos = torch.randn(1 + grid * grid, width) * 0.5
    ln_pre, ln_post = torch.nn.LayerNorm(width), torch.nn.LayerNorm(width)
    blocks = [ResBlock(width, heads, quick_gelu=True) for _ in range(depth)]
    proj = torch.randn(width, embed) / width ** 0.5
    modules = [conv1, ln_pre, ln_post, *blocks]
    with torch.no_grad():
        for m in (sub for top in modules for sub in top.modules()):
            for name, p in m.named_parameters(recurse=False):
                gain = isinstance(m, torch.nn.LayerNorm) and name == "weight"
                p.copy_((1.0 if gain else 0.0) + (0.2 if gain else 0.3) * torch.randn_like(p))
        # The archive stores float32; compute the reference from the rounded values.
        for p in [cls, pos, proj, *(q for m in modules for q in m.parameters())]:
            p.copy_(p.float().double())

        img = torch.rand(image, image, 3).float().double()
        mean, std = torch.tensor(CLIP_MEAN), torch.tensor(CLIP_STD)
        x = ((img - mean) / std).permute(2, 0, 1)[None]
        x = conv1(x).reshape(width, -1).T
        x = torch.cat([cls[None], x]) + pos
        x = ln_pre(x)[:, None, :]  # (tokens, batch, width)
        expected = {}
        for i, blk in enumerate(blocks, start=1):
            x = blk(x)
            if i in layers:
                expected[f"expected.layer{i}"] = t2n(ln_post(x[1:, 0]) @ proj)

    tensors = {
        "conv1.weight": t2n(conv1.weight).reshape(width, -1),
        "class_embedding": t2n(cls),
        "positional_embedding": t2n(pos),
        "ln_pre.weight": t2n(ln_pre.weight), "ln_pre.bias": t2n(ln_pre.bias),
        "ln_post.weight": t2n(ln_post.weight), "ln_post.bias": t2n(ln_post.bias),
        "proj": t2n(proj),
        "input.image": t2n(img).reshape(image, image * 3),
        **expected,
    }
    for i, b in enumerate(blocks):
        pre = f"transformer.resblocks.{i}."
        tensors[pre + "ln_1.weight"], tensors[pre + "ln_1.bias"] = t2n(b.ln_1.weight), t2n(b.ln_1.bias)
        tensors[pre + "ln_2.weight"], tensors[pre + "ln_2.bias"] = t2n(b.ln_2.weight), t2n(b.ln_2.bias)
        tensors[pre + "attn.in_proj_weight"] = t2n(b.attn.in_proj_weight)
        tensors[pre + "attn.in_proj_bias"] = t2n(b.attn.in_proj_bias)
        tensors[pre + "attn.out_proj.weight"] = t2n(b.attn.out_proj.weight)
        tensors[pre + "attn.out_proj.bias"] = t2n(b.attn.out_proj.bias)
        tensors[pre + "mlp.c_fc.weight"], tensors[pre + "mlp.c_fc.bias"] = t2n(b.c_fc.weight), t2n(b.c_fc.bias)
        tensors[pre + "mlp.c_proj.weight"], tensors[pre + "mlp.c_proj.bias"] = t2n(b.c_proj.weight), t2n(b.c_proj.bias)
    prompts = ["a photo of a thing.", "a photo of a broken thing."]
    text = torch.randn(2, embed)
    tensors["text_embeddings"] = t2n(text / text.norm(dim=1, keepdim=True))
    meta = {"name": "tiny-vit", "width": width, "depth": depth, "heads": heads, "patch_size": patch,
            "image_size": image, "embed_dim": embed, "quick_gelu": True, "mean": CLIP_MEAN, "std": CLIP_STD,
            "default_layers": layers, "prompts": prompts}
    write_archive(args.out, meta, tensors)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)
    ex = sub.add_parser("export")
    ex.add_argument("--source", choices=["open_clip", "hf"], default="hf")
    ex.add_argument("--model", default="openai/clip-vit-large-patch14-336",
                    help="HF model id, or open_clip architecture such as ViT-L-14-336")
    ex.add_argument("--pretrained", default="openai", help="open_clip pretrained tag")
    ex.add_argument("--layers", type=int, nargs="+", default=[6, 12, 18, 24])
    ex.add_argument("--name", default="clip-vit-l14-336")
    ex.add_argument("--prompt-list", help="text file with one prompt per line")
    ex.add_argument("--out", required=True)
    tf = sub.add_parser("tiny-fixture")
    tf.add_argument("--seed", type=int, default=0)
    tf.add_argument("--out", required=True)
    args = ap.parse_args()
    {"export": cmd_export, "tiny-fixture": cmd_tiny_fixture}[args.cmd](args)


if __name__ == "__main__":
    main()
