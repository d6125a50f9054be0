"""Calibration for the causal-vs-noncausal boundary A/B (criterion 4 analog).
Boundary-only training on the compound-word corpus. Throwaway script."""
import time
from dataclasses import replace

import numpy as np

from bytepatch import data, training as tr
from bytepatch.boundaries import MergeStrategy
from bytepatch.losses import boundary_bce
from bytepatch.model import (
    GlobalConfig, MlstmConfig, ModelConfig, embed_bytes, init_byte_model,
    local_encode, predict_boundaries,
)
from bytepatch.optim import AdamW
from bytepatch.tokenizer import train_bpe, utf8_to_bytes, subword_boundary_mask

t0 = time.perf_counter()
docs = [utf8_to_bytes(t) + b"\x00" for t in data.compound_docs(seed=0, n_docs=400)]
train_docs, held = docs[20:], docs[:20]
vocab = train_bpe(train_docs[:120], 480)
toks = [vocab.token_bytes[256 + r] for r in range(len(vocab.merges))]
full_words = [t for t in toks if any(t.strip(b" .") == p[1].encode() for p in data.COMPOUND_PAIRS)]
print(f"[{time.perf_counter()-t0:5.1f}s] corpus {sum(map(len,docs))/1e3:.0f}KB "
      f"vocab {vocab.size}; compound tokens found: {len(full_words)}", flush=True)

def train_boundary_only(mode: str, steps: int, seed: int) -> float:
    cfg = ModelConfig(d=128, vocab_size=vocab.size, encoder_layers=1, decoder_layers=1,
                      ffn_hidden=256, n_probe=1, boundary_mode=mode,
                      mlstm=MlstmConfig(heads=4, qk_dim=16, v_dim=32),
                      global_model=GlobalConfig(layers=1, heads=4, head_dim=32))
    params = init_byte_model(cfg, np.random.default_rng(seed))
    tcfg = tr.TrainConfig(stage=1, steps=steps, batch_size=8, max_bytes=88,
                          peak_lr=1.5e-3, warmup_steps=100, seed=seed)
    windows = tr.prepare_windows(train_docs, vocab, cfg, replace(tcfg, merge_kind="subword"), None)
    sampler = tr.WindowSampler(windows, tcfg.batch_size, tcfg.seed)
    tags = ("byte_embed", "subword_embed", "encoder", "boundary")
    params.set_trainable(tuple(params.component_tags()), False)
    params.set_trainable(tags, True)
    opt = AdamW({"local": params.trainable(tags)}, weight_decay=0.1, grad_clip=0.5)
    for i in range(steps):
        opt.set_lr("local", tr.lr_at(tcfg, i + 1)["local"])
        batch = sampler.draw()
        arrays = tr._stack_batch(batch, use_subword_mask=True)
        e_hat = local_encode(params, cfg, embed_bytes(params, arrays["y"], arrays["sfx"]))
        loss = boundary_bce(predict_boundaries(params, cfg, e_hat), arrays["mask"])
        opt.zero_grad()
        loss.backward()
        opt.step()
    err = tr.boundary_error_rate(params, cfg, vocab, held, max_doc_bytes=87)
    print(f"[{time.perf_counter()-t0:5.1f}s] mode={mode} steps={steps}: err={err*100:.3f}%", flush=True)
    return err

for steps in (400, 800):
    e_nc = train_boundary_only("noncausal", steps, seed=3)
    e_c = train_boundary_only("causal", steps, seed=3)
    print(f"  -> ratio causal/noncausal = {e_c / max(e_nc, 1e-9):.1f}", flush=True)
