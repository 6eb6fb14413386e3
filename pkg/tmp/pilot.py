import time, json
import numpy as np
from dualstyle.corpus import SyntheticTaskSpec, generate_synthetic, build_vocab
from dualstyle.classifier import ClassifierConfig, train_classifier
from dualstyle.pseudo import build_style_lexicon, make_pretrain_pairs
from dualstyle.seq2seq import Seq2Seq
from dualstyle.dualrl import TrainConfig, AnnealSchedule, pretrain, train, evaluate_dev
from dualstyle.rewards import RewardConfig

t_start = time.time()
def log(*a): print(f"[{time.time()-t_start:7.1f}s]", *a, flush=True)

spec = SyntheticTaskSpec()
corpus, gold = generate_synthetic(spec)
vocab = build_vocab(corpus.all_train())
num = corpus.numericalize(vocab)
log("corpus ready, vocab", len(vocab))

clf, dev_acc = train_classifier(num, vocab, ClassifierConfig(epochs=6, seed=0))
log("classifier dev acc:", dev_acc)

lex = build_style_lexicon(num, lam=1.0, gamma=200.0)
pairs_f, pairs_g = make_pretrain_pairs(num, lex, vocab)
dev_f, dev_g = make_pretrain_pairs(num, lex, vocab, split="dev")

cfg = TrainConfig(
    pretrain_epochs=5, max_dual_epochs=10, max_iterations=160,
    pretrain_lr=1e-3, dual_lr=1e-3, pretrain_batch=32, dual_batch=128,
    reward=RewardConfig(beta=0.5, sample_size=2),
    schedule=AnnealSchedule(p0=1.0, p_max=100.0, rate=1.1, gap=20.0),
    seed=0,
)
f = Seq2Seq(vocab, 300, 256, direction="x2y", seed=[0, 1])
g = Seq2Seq(vocab, 300, 256, direction="y2x", seed=[0, 2])
rep = pretrain(f, g, pairs_f, pairs_g, cfg, dev_pairs_f=dev_f, dev_pairs_g=dev_g)
log("pretrain:", json.dumps(rep))

refs = {k: v for k, v in gold.refs.items()}
dev0 = evaluate_dev(f, g, clf, num, cfg, gold_refs=refs)
log("post-pretrain dev:", {k: round(v, 2) for k, v in dev0.items() if isinstance(v, float)})
log("  x2y:", {k: round(v,2) for k,v in dev0["x2y"].items()})
log("  y2x:", {k: round(v,2) for k,v in dev0["y2x"].items()})

f.save("tmp/f_pre.ckpt"); g.save("tmp/g_pre.ckpt"); clf.save("tmp/cls.ckpt")

result = train(f, g, clf, num, cfg, run_dir="tmp/pilot_run", gold_refs=refs)
log("dual done; history:")
for row in result.history:
    log("  ", {k: (round(v,2) if isinstance(v,float) else v) for k,v in row.items()})
devF = evaluate_dev(result.model_f, result.model_g, clf, num, cfg, gold_refs=refs)
log("best-ckpt dev:", {k: round(v,2) for k, v in devF.items() if isinstance(v, float)})
log("  x2y:", {k: round(v,2) for k,v in devF["x2y"].items()})
log("  y2x:", {k: round(v,2) for k,v in devF["y2x"].items()})
