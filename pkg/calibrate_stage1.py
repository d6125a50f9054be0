"""Calibration v4: big corpus, generalizing teacher. Throwaway script."""
import time
import numpy as np
from bytepatch import data, training as tr
from bytepatch.model import ModelConfig, MlstmConfig, GlobalConfig, init_teacher, init_byte_model
from bytepatch.tokenizer import train_bpe, utf8_to_bytes, encode
from bytepatch.teacher import teacher_nll

t_start = time.perf_counter()
def stamp(msg):
    print(f"[{time.perf_counter()-t_start:7.1f}s] {msg}", flush=True)

docs = [utf8_to_bytes(t) + b"\x00" for t in data.markov_word_docs(
    seed=0, n_docs=1500, branching=3, sentences_per_doc=(3, 7), words_per_sentence=(8, 14))]
train_docs, held = docs[30:], docs[:30]
vocab = train_bpe(train_docs[:100], 420)
stamp(f"corpus {sum(map(len,docs))/1e3:.0f} KB, vocab {vocab.size}")

cfg = ModelConfig(d=128, vocab_size=vocab.size, encoder_layers=1, decoder_layers=2,
                  ffn_hidden=256, n_probe=2,
                  mlstm=MlstmConfig(heads=4, qk_dim=16, v_dim=32),
                  global_model=GlobalConfig(layers=2, heads=4, head_dim=32))
rng = np.random.default_rng(0)
teacher = init_teacher(cfg, rng)
tc = tr.TrainConfig(stage=1, steps=700, batch_size=64, max_bytes=88, peak_lr=3e-3, seed=1)
tr.train_teacher(teacher, cfg, vocab, train_docs, tc)
held_rows = [np.array([vocab.bos_id] + encode(vocab, d[:87]), dtype=np.int64) for d in held]
stamp(f"teacher held-out CE/token: {np.mean([teacher_nll(teacher, cfg, r[None, :]).item() for r in held_rows]):.3f}")

student = init_byte_model(cfg, rng, teacher)
s1 = tr.TrainConfig(stage=1, steps=4000, batch_size=8, max_bytes=88, peak_lr=1.5e-3,
                    warmup_steps=200, seed=2)
t_prep = time.perf_counter()
windows = tr.prepare_windows(train_docs, vocab, cfg, s1, teacher)
stamp(f"{len(windows)} windows prepared in {time.perf_counter()-t_prep:.0f}s")
sampler = tr.WindowSampler(windows, s1.batch_size, s1.seed)
opt = tr._make_optimizer(student, s1)
for i in range(s1.steps):
    lrs = tr.lr_at(s1, i + 1)
    opt.set_lr("local", lrs["local"])
    bd, ex = tr.stage1_step(student, cfg, s1, opt, sampler.draw())
    if (i + 1) % 400 == 0:
        align = tr.evaluate_alignment(student, cfg, vocab, teacher, held, max_doc_bytes=87)
        berr = tr.boundary_error_rate(student, cfg, vocab, held, max_doc_bytes=87)
        stamp(f"step {i+1}: lb={bd.boundary:.3f} le={bd.encoder:.3f} ld={bd.distill:.4f} "
              f"lce={bd.ce:.3f} | align={align['mean_abs_diff']:.4f} berr={berr*100:.2f}%")
