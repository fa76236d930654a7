import sys
import time

import numpy as np

from corefbridge.corpus import gen_synthetic
from corefbridge.embeddings import ProviderConfig
from corefbridge.hashing import mix
from corefbridge.metrics import corpus_prf
from corefbridge.model import build_doc_features, forward_document
from corefbridge.resolver import ResolutionConfig, resolve
from corefbridge.training import TrainConfig, train


def split(docs, seed):
    order = np.random.default_rng(mix(seed, 777)).permutation(len(docs))
    n_train = int(len(docs) * 0.70)
    n_dev = int(len(docs) * 0.15)
    tr = [docs[i] for i in order[:n_train]]
    dv = [docs[i] for i in order[n_train:n_train + n_dev]]
    te = [docs[i] for i in order[n_train + n_dev:]]
    return tr, dv, te


def eval_arm(params, docs, rescfg):
    pairs = []
    for doc in docs:
        feats = build_doc_features(doc, params)
        cache = forward_document(feats, params)
        pred = resolve(doc, cache["probs"], rescfg)
        pairs.append((doc.gold_chains, pred))
    return corpus_prf(pairs)["conll_f1"]


def run(seed, arms=("base", "syntax", "semantics", "attention", "full")):
    docs = gen_synthetic(seed=seed, n_docs=200, sentences_per_doc=6,
                         vocab_size=60, syntax_signal=0.9)
    tr, dv, te = split(docs, seed)
    provider = ProviderConfig(kind="feature_hash", dim=32, window=2, seed=7)
    cfg = TrainConfig(batch_size=16, epochs=6, lr=0.05, warmup=0.1,
                      dropout=0.1, weight_decay=0.01, seed=seed)
    rescfg = ResolutionConfig(threshold=0.5, strategy="greedy")
    out = {}
    for arm in arms:
        t0 = time.time()
        params, hist = train(tr, provider, cfg, arm=arm, dev_docs=None,
                             mechanism="cross")
        f1 = eval_arm(params, te, rescfg)
        out[arm] = f1
        print(f"seed={seed} arm={arm:10s} test_f1={f1*100:6.2f} "
              f"loss {hist[0]['loss']:.4f}->{hist[-1]['loss']:.4f} "
              f"({time.time()-t0:5.1f}s)", flush=True)
    return out


if __name__ == "__main__":
    seeds = [int(s) for s in sys.argv[1:]] or [42]
    for s in seeds:
        res = run(s)
        print(f"seed={s} full-base={100*(res.get('full',0)-res.get('base',0)):.2f} "
              f"syntax-base={100*(res.get('syntax',0)-res.get('base',0)):.2f}")
