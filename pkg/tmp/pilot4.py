import time, json
import numpy as np
from dualstyle.corpus import SyntheticTaskSpec, generate_synthetic, build_vocab
from dualstyle.classifier import TextClassifier
from dualstyle.seq2seq import Seq2Seq
from dualstyle.dualrl import TrainConfig, AnnealSchedule, train, evaluate_dev
from dualstyle.rewards import RewardConfig

t_start = time.time()
def log(*a): print(f"[{time.time()-t_start:7.1f}s]", *a, flush=True)

spec = SyntheticTaskSpec()
corpus, gold = generate_synthetic(spec)
vocab = build_vocab(corpus.all_train())
num = corpus.numericalize(vocab)
clf = TextClassifier.load("tmp/cls2.ckpt", vocab)
clf.freeze()

def run(mode):
    f = Seq2Seq.load("tmp/f_pre2.ckpt", vocab)
    g = Seq2Seq.load("tmp/g_pre2.ckpt", vocab)
    cfg = TrainConfig(
        max_dual_epochs=10, max_iterations=288, dual_lr=5e-4, dual_batch=128,
        reward=RewardConfig(beta=0.5, sample_size=2),
        schedule=AnnealSchedule(p0=1.0, p_max=100.0, rate=1.1, gap=12.0),
        ablation=mode, seed=0,
    )
    res = train(f, g, clf, num, cfg, run_dir=f"tmp/run4_{mode}", gold_refs=gold.refs)
    for row in res.history:
        log(mode, {k: (round(v,2) if isinstance(v,float) else v) for k,v in row.items()})
    final = evaluate_dev(res.model_f, res.model_g, clf, num, cfg, gold_refs=gold.refs)
    log(mode, "FINAL", {k: round(v,2) for k,v in final.items() if isinstance(v,float)},
        "x2y", {k: round(v,2) for k,v in final["x2y"].items()},
        "y2x", {k: round(v,2) for k,v in final["y2x"].items()})
    return final

full = run("rl_plus_mle")
rl = run("rl_only")
mle = run("mle_only")
log("ACC order: rl", rl["dev_acc"], "full", full["dev_acc"], "mle", mle["dev_acc"])
log("BLEU order: mle", mle["dev_gold_bleu"], "rl", rl["dev_gold_bleu"])
log("H2: full", full["dev_gold_h2"], "rl", rl["dev_gold_h2"], "mle", mle["dev_gold_h2"])
ok = (rl["dev_acc"] >= full["dev_acc"] >= mle["dev_acc"]
      and mle["dev_gold_bleu"] >= rl["dev_gold_bleu"]
      and full["dev_gold_h2"] > rl["dev_gold_h2"]
      and full["dev_gold_h2"] > mle["dev_gold_h2"]
      and full["dev_acc"] >= 90
      and min(full["x2y"]["bleu_gold"], full["y2x"]["bleu_gold"]) >= 70
      and min(full["x2y"]["acc"], full["y2x"]["acc"]) >= 90)
log("CRITERION-7 ORDERINGS+FLOORS:", "PASS" if ok else "FAIL")
