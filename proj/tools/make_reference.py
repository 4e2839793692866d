#!/usr/bin/env python3
"""Regenerate tests/data/reference from Hugging Face implementations.

Produces a byte-level BPE tokenizer trained with the `tokenizers` library plus
its GPT-2 tokenizer encodings, and tiny random GPT-2 / Llama checkpoints
converted with convert_hf.py together with their float64 hidden states and
final-position logits. The C++ tests compare against these files.

    python tools/make_reference.py [out_dir]
"""

import json
import sys
from pathlib import Path

import regex
import torch
from tokenizers import ByteLevelBPETokenizer
from transformers import GPT2Config, GPT2LMHeadModel, GPT2TokenizerFast, LlamaConfig, LlamaForCausalLM

sys.path.insert(0, str(Path(__file__).resolve().parent))
from convert_hf import convert_model  # noqa: E402

CORPUS = [
    "The nurse said that she would help him with the engineer's report.",
    "He isn't sure they'll arrive before 10:30, but we've waited 42 minutes.",
    "Gardening, painting and knitting are hobbies; football and chess too!",
    "Ambitious, nurturing, gentle and strong people teach and lead.",
    "Café naïve résumé — über 東京 🙂 emoji and accents.",
    "   leading spaces\tand tabs\nnew lines  \n\n double  spaces ",
    "1234567 + 89 = 1234656; x=y*2 (maybe) [ok] {fine} <tag>",
] * 20

SAMPLES = [
    "hello world",
    "The nurse said that she would help him.",
    "He isn't sure they'll arrive; we've waited 42 minutes.",
    "   leading spaces\tand tabs\nnew lines  \n\n double  spaces ",
    "Café naïve résumé — über 東京 🙂",
    "1234567 + 89 = 1234656",
    "don't I'M 'quoted' x's",
    "zebra xylophone quizzical",
    "",
    " ",
    "a\r\nb",
    "a—b x y ²³ emoji😀😀",
]


GPT2_PATTERN = r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""

PRETOKENIZE = SAMPLES + [
    "a\u2014b \u2014c",
    "x y  　z",
    "²³ ٣٤ Ⅷ 4½",
    "emoji😀😀 ok",
    "it's 'twas 'S 'LL we'd ''s",
    "tabs\t\t\tend\n",
    "  \n  x",
    "مرحبا नमस्ते 한국어",
    "combining e\u0301 and \u0915\u093e",
    "?!... ---- ;)",
]


def make_pretokenize(out):
    pat = regex.compile(GPT2_PATTERN)
    cases = [{"text": s, "pieces": pat.findall(s)} for s in PRETOKENIZE]
    (out / "pretokenize_cases.json").write_text(json.dumps(cases, indent=1, ensure_ascii=False) + "\n")


def make_tokenizer(out):
    tok = ByteLevelBPETokenizer()
    tok.train_from_iterator(CORPUS, vocab_size=600, min_frequency=2, show_progress=False)
    tdir = out / "tokenizer"
    tdir.mkdir(parents=True, exist_ok=True)
    tok.save_model(str(tdir))
    hf = GPT2TokenizerFast(vocab=str(tdir / "vocab.json"), merges=str(tdir / "merges.txt"),
                           unk_token=None, bos_token=None, eos_token=None)
    cases = [{"text": s, "ids": hf.encode(s, add_special_tokens=False)} for s in SAMPLES]
    (out / "tokenizer_cases.json").write_text(json.dumps(cases, indent=1, ensure_ascii=False) + "\n")
    return len(hf.get_vocab())


def randomize(model, gen):
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() >= 2:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.3)
            elif "ln" in name or "norm" in name:
                if name.endswith("bias"):
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.1)
                else:
                    p.copy_(1.0 + torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.1)
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.1)


def export_model(model, name, out, vocab, gen):
    model = model.double().eval()
    randomize(model, gen)
    mdir = out / name
    convert_model(model, mdir)
    prompts = []
    for length in (1, 2, 5, 9, 16):
        ids = torch.randint(0, vocab, (1, length), generator=gen)
        with torch.no_grad():
            res = model(ids, output_hidden_states=True)
        n_layers = len(res.hidden_states) - 1
        prompts.append({
            "tokens": ids[0].tolist(),
            # residual entering each layer, final position; the last entry
            # returned by the library already has the final norm applied
            "residual": [res.hidden_states[l][0, -1].tolist() for l in range(n_layers)],
            "logits": res.logits[0, -1].tolist(),
        })
    (mdir / "expected.json").write_text(json.dumps({"prompts": prompts}) + "\n")


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests/data/reference"
    out.mkdir(parents=True, exist_ok=True)
    gen = torch.Generator().manual_seed(20241017)
    make_pretokenize(out)
    vocab = make_tokenizer(out)

    gpt2 = GPT2LMHeadModel(GPT2Config(vocab_size=vocab, n_positions=32, n_embd=32, n_layer=2, n_head=4,
                                      n_inner=48, activation_function="gelu_new", bos_token_id=None,
                                      eos_token_id=None, tie_word_embeddings=False))
    export_model(gpt2, "gpt2", out, vocab, gen)

    llama = LlamaForCausalLM(LlamaConfig(vocab_size=97, hidden_size=32, intermediate_size=48,
                                         num_hidden_layers=2, num_attention_heads=4, num_key_value_heads=4,
                                         max_position_embeddings=32, rms_norm_eps=1e-5, bos_token_id=None,
                                         eos_token_id=None, pad_token_id=None, tie_word_embeddings=False,
                                         attn_implementation="eager"))
    export_model(llama, "llama", out, 97, gen)


if __name__ == "__main__":
    main()
