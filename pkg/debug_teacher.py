import numpy as np, time
from bytepatch import data, training as tr
from bytepatch.model import ModelConfig, MlstmConfig, GlobalConfig, init_teacher
from bytepatch.tokenizer import train_bpe, utf8_to_bytes, encode
from bytepatch.teacher import teacher_nll

docs = [utf8_to_bytes(t) + b"\x00" for t in data.markov_word_docs(seed=0, n_docs=240)]
vocab = train_bpe(docs[20:140], 420)
cfg = ModelConfig(d=128, vocab_size=vocab.size, encoder_layers=1, decoder_layers=2,
                  ffn_hidden=256, n_probe=2,
                  mlstm=MlstmConfig(heads=4, qk_dim=16, v_dim=32),
                  global_model=GlobalConfig(layers=2, heads=4, head_dim=32))

teacher = init_teacher(cfg, np.random.default_rng(0))
tc = tr.TrainConfig(stage=1, steps=300, batch_size=4, max_bytes=96, peak_lr=3e-3, seed=1, warmup_steps=30)
log = tr.train_teacher(teacher, cfg, vocab, docs[20:22], tc)
print("overfit 2 docs:", [round(log.records[i]['total'],3) for i in [0, 50, 100, 200, 299]])
print("grad norms:    ", [round(log.records[i]['grad_norm'],2) for i in [0, 50, 100, 200, 299]])

from bytepatch.data import make_windows
chunks = make_windows(docs[20:], 95)
rows = [encode(vocab, c) for c in chunks[:50]]
print("windows:", len(chunks), "tokens/window:", np.mean([len(r) for r in rows]).round(1))

from collections import Counter, defaultdict
big = defaultdict(Counter)
for c in chunks:
    ids = encode(vocab, c)
    for a, b in zip(ids, ids[1:]):
        big[a][b] += 1
tot, ce = 0, 0.0
for c in chunks[:80]:
    ids = encode(vocab, c)
    for a, b in zip(ids, ids[1:]):
        p = big[a][b] / sum(big[a].values())
        ce -= np.log(p); tot += 1
print(f"bigram-table CE/token (train): {ce/tot:.3f}")
