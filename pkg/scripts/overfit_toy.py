"""Train on the synthetic lexicon and decode it back; a working pipeline reaches PER/WER 0."""
import argparse
import json
import time

from mtlg2p.decode import beam_search
from mtlg2p.lexicon import build_vocabs, encode_example
from mtlg2p.metrics import classifier_metrics, g2p_wer, per
from mtlg2p.model import ModelConfig, init_params
from mtlg2p.toydata import synthetic_lexicon
from mtlg2p.train import TrainConfig, fit


def run(epochs: int = 300, hidden: int = 64, optimizer: str = "adam", seed: int = 0, alpha=None) -> dict:
    entries = synthetic_lexicon(seed=seed)
    vocab = build_vocabs(entries)
    examples = [encode_example(e, vocab) for e in entries]
    mcfg = ModelConfig(len(vocab.graphemes), len(vocab.phonemes), embed_dim=hidden, hidden_dim=hidden, alpha=alpha)
    tcfg = TrainConfig(max_epochs=epochs, optimizer=optimizer, seed=seed)
    t0 = time.time()
    result = fit(init_params(mcfg, seed), examples, examples, mcfg, tcfg)
    pairs, probs = [], []
    for e in entries:
        r = beam_search(e.word, result.best_params, vocab, mcfg)
        pairs.append((e.phonemes, r.phonemes))
        probs.append(r.anglicism_prob)
    cm = classifier_metrics(probs, [e.anglicism for e in entries])
    return {"epochs": result.state.epoch, "final_lr": result.state.lr, "PER": per(pairs), "WER": g2p_wer(pairs),
            "accuracy": cm.accuracy, "seconds": round(time.time() - t0, 1)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alpha", type=float)
    args = ap.parse_args()
    print(json.dumps(run(args.epochs, args.hidden, args.optimizer, args.seed, args.alpha), indent=1))


if __name__ == "__main__":
    main()
