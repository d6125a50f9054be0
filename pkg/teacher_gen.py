"""Teacher generalization probe on the 1500-doc corpus. Throwaway."""
import numpy as np, time
from bytepatch import data, training as tr
from bytepatch.model import ModelConfig, MlstmConfig, GlobalConfig, init_teacher
from bytepatch.tokenizer import train_bpe, utf8_to_bytes, encode
from bytepatch.teacher import teacher_nll

t0 = time.perf_counter()
docs = [utf8_to_bytes(t) + b"\x00" for t in data.markov_word_docs(
    seed=0, n_docs=1500, branching=3, sentences_per_doc=(3, 7), words_per_sentence=(8, 14))]
train_docs, held = docs[30:], docs[:30]
vocab = train_bpe(train_docs[:100], 420)
print(f"corpus {sum(map(len,docs))/1e3:.0f} KB vocab {vocab.size}", flush=True)
cfg = ModelConfig(d=128, vocab_size=vocab.size, encoder_layers=1, decoder_layers=2,
                  ffn_hidden=256, n_probe=2,
                  mlstm=MlstmConfig(heads=4, qk_dim=16, v_dim=32),
                  global_model=GlobalConfig(layers=2, heads=4, head_dim=32))
teacher = init_teacher(cfg, np.random.default_rng(0))
held_rows = [np.array([vocab.bos_id] + encode(vocab, d[:87]), dtype=np.int64) for d in held]

def held_ce():
    return float(np.mean([teacher_nll(teacher, cfg, r[None, :]).item() for r in held_rows]))

for chunk in range(6):
    tc = tr.TrainConfig(stage=1, steps=400, batch_size=64, max_bytes=88, peak_lr=3e-3, seed=1,
                        warmup_steps=100 if chunk == 0 else 1)
    log = tr.train_teacher(teacher, cfg, vocab, train_docs, tc)
    tr_last = np.mean([r["total"] for r in log.records[-30:]])
    print(f"[{time.perf_counter()-t0:6.1f}s] steps {(chunk+1)*400}: train={tr_last:.3f} held={held_ce():.3f}", flush=True)
