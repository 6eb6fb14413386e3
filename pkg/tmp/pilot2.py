import time, json
import numpy as np
from dualstyle.corpus import SyntheticTaskSpec, generate_synthetic, build_vocab
from dualstyle.classifier import ClassifierConfig, train_classifier
from dualstyle.pseudo import build_style_lexicon, make_pretrain_pairs
from dualstyle.seq2seq import Seq2Seq
from dualstyle.dualrl import TrainConfig, AnnealSchedule, pretrain, evaluate_dev
from dualstyle.rewards import RewardConfig

t_start = time.time()
def log(*a): print(f"[{time.time()-t_start:7.1f}s]", *a, flush=True)

spec = SyntheticTaskSpec()
corpus, gold = generate_synthetic(spec)
vocab = build_vocab(corpus.all_train())
num = corpus.numericalize(vocab)
log("vocab", len(vocab))
from collections import Counter
cx = Counter(t for s in num.of(num.label_x, "train") for t in s.surface)
log("rare counts:", {w: cx[w] for w in gold.x_words[-4:]})

lex = build_style_lexicon(num, lam=1.0, gamma=230.0)
for style in lex.entries:
    log(style, sorted(" ".join(g) for g in lex.entries[style]))
pairs_f, pairs_g = make_pretrain_pairs(num, lex, vocab)
applied = sum(1 for p in pairs_f if p.source.surface != p.target.surface)
match = sum(1 for p in pairs_f if p.source.surface != p.target.surface
            and p.target.surface == gold.apply_gold(p.source).surface)
log("applied:", applied, "gold-equal:", match)
dev_f, dev_g = make_pretrain_pairs(num, lex, vocab, split="dev")

cfg = TrainConfig(
    pretrain_epochs=5, pretrain_lr=1e-3, pretrain_batch=32,
    reward=RewardConfig(sample_size=2), seed=0,
)
f = Seq2Seq(vocab, 300, 256, direction="x2y", seed=[0, 1])
g = Seq2Seq(vocab, 300, 256, direction="y2x", seed=[0, 2])
rep = pretrain(f, g, pairs_f, pairs_g, cfg, dev_pairs_f=dev_f, dev_pairs_g=dev_g)
log("pretrain:", json.dumps(rep))

clf, dev_acc = train_classifier(num, vocab, ClassifierConfig(epochs=6, seed=0))
log("clf dev acc:", dev_acc)
dev0 = evaluate_dev(f, g, clf, num, cfg, gold_refs=gold.refs)
log("post-pretrain:", {k: round(v,2) for k,v in dev0.items() if isinstance(v,float)})
log("  x2y:", {k: round(v,2) for k,v in dev0["x2y"].items()})
log("  y2x:", {k: round(v,2) for k,v in dev0["y2x"].items()})
f.save("tmp/f_pre2.ckpt"); g.save("tmp/g_pre2.ckpt"); clf.save("tmp/cls2.ckpt")

dev = num.of(num.label_x, "dev")[:10]
outs = f.greedy_decode_batch(dev, max_len=20)
refs = gold.refs[(num.label_x.name, "dev")][:10]
for s, o, r in zip(dev, outs, refs):
    log("in :", s.text()); log("out:", o.text()); log("ref:", r[0].text()); log("")
