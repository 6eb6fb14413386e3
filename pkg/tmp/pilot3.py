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
        max_dual_epochs=10, max_iterations=160, dual_lr=1e-3, dual_batch=128,
        reward=RewardConfig(beta=0.5, sample_size=2),
        schedule=AnnealSchedule(p0=1.0, p_max=100.0, rate=1.1, gap=20.0),
        ablation=mode, seed=0,
    )
    res = train(f, g, clf, num, cfg, run_dir=f"tmp/run_{mode}", gold_refs=gold.refs)
    for row in res.history:
        log(mode, {k: (round(v,2) if isinstance(v,float) else v) for k,v in row.items()})
    final = evaluate_dev(res.model_f, res.model_g, clf, num, cfg, gold_refs=gold.refs)
    log(mode, "FINAL", {k: round(v,2) for k,v in final.items() if isinstance(v,float)})
    log(mode, "  x2y:", {k: round(v,2) for k,v in final["x2y"].items()})
    log(mode, "  y2x:", {k: round(v,2) for k,v in final["y2x"].items()})
    return final

full = run("rl_plus_mle")
rl = run("rl_only")
mle = run("mle_only")
log("ordering ACC: rl_only", rl["dev_acc"], ">= full", full["dev_acc"], ">= mle", mle["dev_acc"])
log("ordering BLEU(gold): mle", mle["dev_gold_bleu"], ">= rl", rl["dev_gold_bleu"])
log("H2: full", full["dev_gold_h2"], "rl", rl["dev_gold_h2"], "mle", mle["dev_gold_h2"])
