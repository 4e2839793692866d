#!/usr/bin/env python3
"""Convert a Hugging Face GPT-2 or Llama checkpoint to the nlens layout.

Writes <out>/config.json, <out>/model.safetensors and, for GPT-2 style
tokenizers, <out>/tokenizer/{vocab.json,merges.txt}.

    python tools/convert_hf.py path/to/hf_model out_dir
"""

import argparse
import json
import shutil
from pathlib import Path

import torch
from safetensors.torch import save_file


def gpt2_tensors(cfg, sd):
    d = cfg.n_embd
    out = {
        "embed": sd["transformer.wte.weight"],
        "pos_embed": sd["transformer.wpe.weight"],
        "final_norm": sd["transformer.ln_f.weight"],
        "final_norm_bias": sd["transformer.ln_f.bias"],
        "unembed": sd.get("lm_head.weight", sd["transformer.wte.weight"]),
    }
    for l in range(cfg.n_layer):
        p = f"transformer.h.{l}."
        o = f"layers.{l}."
        # Conv1D stores (in, out); nlens stores (out, in)
        qkv = sd[p + "attn.c_attn.weight"].T
        qkv_b = sd[p + "attn.c_attn.bias"]
        out[o + "attn_norm"] = sd[p + "ln_1.weight"]
        out[o + "attn_norm_bias"] = sd[p + "ln_1.bias"]
        for i, name in enumerate("qkv"):
            out[o + f"attn.{name}"] = qkv[i * d:(i + 1) * d]
            out[o + f"attn.{name}_bias"] = qkv_b[i * d:(i + 1) * d]
        out[o + "attn.o"] = sd[p + "attn.c_proj.weight"].T
        out[o + "attn.o_bias"] = sd[p + "attn.c_proj.bias"]
        out[o + "ffn_norm"] = sd[p + "ln_2.weight"]
        out[o + "ffn_norm_bias"] = sd[p + "ln_2.bias"]
        out[o + "ffn.fc1"] = sd[p + "mlp.c_fc.weight"].T
        out[o + "ffn.fc1_bias"] = sd[p + "mlp.c_fc.bias"]
        out[o + "ffn.fc2"] = sd[p + "mlp.c_proj.weight"].T
        out[o + "ffn.fc2_bias"] = sd[p + "mlp.c_proj.bias"]
    config = {
        "n_layers": cfg.n_layer,
        "d_model": d,
        "n_heads": cfg.n_head,
        "d_head": d // cfg.n_head,
        "d_ffn": cfg.n_inner or 4 * d,
        "vocab_size": cfg.vocab_size,
        "max_seq_len": cfg.n_positions,
        "ffn_family": "single-gate",
        "norm_family": "layernorm",
        "position_family": "learned",
        "activation": "gelu",
        "use_bias": True,
        "norm_eps": cfg.layer_norm_epsilon,
        "bos_token_id": cfg.bos_token_id if cfg.bos_token_id is not None else -1,
    }
    return config, out


def llama_tensors(cfg, sd):
    kv_heads = getattr(cfg, "num_key_value_heads", None) or cfg.num_attention_heads
    if kv_heads != cfg.num_attention_heads:
        raise SystemExit("grouped-query attention is not supported")
    d = cfg.hidden_size
    d_head = getattr(cfg, "head_dim", None) or d // cfg.num_attention_heads
    if d_head * cfg.num_attention_heads != d:
        raise SystemExit("head_dim * n_heads must equal hidden_size")
    out = {
        "embed": sd["model.embed_tokens.weight"],
        "final_norm": sd["model.norm.weight"],
        "unembed": sd.get("lm_head.weight", sd["model.embed_tokens.weight"]),
    }
    for l in range(cfg.num_hidden_layers):
        p = f"model.layers.{l}."
        o = f"layers.{l}."
        out[o + "attn_norm"] = sd[p + "input_layernorm.weight"]
        for name in "qkvo":
            out[o + f"attn.{name}"] = sd[p + f"self_attn.{name}_proj.weight"]
        out[o + "ffn_norm"] = sd[p + "post_attention_layernorm.weight"]
        out[o + "ffn.fc1"] = sd[p + "mlp.up_proj.weight"]
        out[o + "ffn.gate"] = sd[p + "mlp.gate_proj.weight"]
        out[o + "ffn.fc2"] = sd[p + "mlp.down_proj.weight"]
    theta = getattr(cfg, "rope_theta", None)
    if theta is None:
        theta = (getattr(cfg, "rope_parameters", None) or {}).get("rope_theta", 10000.0)
    config = {
        "n_layers": cfg.num_hidden_layers,
        "d_model": d,
        "n_heads": cfg.num_attention_heads,
        "d_head": d_head,
        "d_ffn": cfg.intermediate_size,
        "vocab_size": cfg.vocab_size,
        "max_seq_len": cfg.max_position_embeddings,
        "ffn_family": "gated",
        "norm_family": "rmsnorm",
        "position_family": "rotary",
        "activation": "silu",
        "use_bias": False,
        "norm_eps": cfg.rms_norm_eps,
        "rope_theta": theta,
        "bos_token_id": cfg.bos_token_id if cfg.bos_token_id is not None else -1,
    }
    return config, out


def convert_model(model, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sd = {k: v.detach().to(torch.float32) for k, v in model.state_dict().items()}
    kind = model.config.model_type
    if kind == "gpt2":
        config, tensors = gpt2_tensors(model.config, sd)
    elif kind in ("llama", "mistral"):
        config, tensors = llama_tensors(model.config, sd)
    else:
        raise SystemExit(f"unsupported model type {kind}")
    tensors = {k: v.contiguous().clone() for k, v in tensors.items()}
    save_file(tensors, str(out_dir / "model.safetensors"))
    (out_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    return config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model_dir")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(args.model_dir, torch_dtype=torch.float32)
    convert_model(model, args.out_dir)
    src = Path(args.model_dir)
    if (src / "vocab.json").exists() and (src / "merges.txt").exists():
        tok = Path(args.out_dir) / "tokenizer"
        tok.mkdir(exist_ok=True)
        shutil.copy(src / "vocab.json", tok / "vocab.json")
        shutil.copy(src / "merges.txt", tok / "merges.txt")


if __name__ == "__main__":
    main()
