"""End-to-end gradient check of the multitask loss on a tiny float64 model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .lexicon import LexiconEntry, build_vocabs, encode_example, make_batch
from .model import ModelConfig, ModelParams, combined_loss, forward_batch, init_params
from .seeding import stream

TOLERANCE = 1e-4
ALPHA = 0.7

# two short words keep both vocabularies under 12 symbols
WORDS = (
    LexiconEntry("Fan", ("f", "E:", "n"), False),
    LexiconEntry("Boom", ("b", "u:", "m"), True),
)


@dataclass
class GradcheckResult:
    seed: int
    max_error: float
    parameters: int

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def tiny_config(hidden: int = 8, embed: int = 4, cls_hidden: int = 8, init_scale: float = 1.0) -> tuple[ModelConfig, object]:
    vocab = build_vocabs(list(WORDS))
    cfg = ModelConfig(len(vocab.graphemes), len(vocab.phonemes), embed_dim=embed, hidden_dim=hidden,
                      cls_hidden1=cls_hidden, cls_hidden2=cls_hidden, init_scale=init_scale)
    return cfg, vocab


def check_seed(seed: int, hidden: int = 8, h: float = 1e-5, embed: int = 4, cls_hidden: int = 8) -> GradcheckResult:
    """Max relative error over every parameter, for the unweighted sum and the alpha=0.7 weighting.

    Runs in train mode with a fixed dropout mask so the classifier's dropout
    path is covered. Weights are drawn at scale 1.0 rather than the training
    default so few gradients sit near zero.
    """
    cfg, vocab = tiny_config(hidden, embed, cls_hidden)
    batch = make_batch([encode_example(e, vocab) for e in WORDS])
    params = init_params(cfg, seed, np.float64)
    names = params.names()

    def objectives(plist):
        p = ModelParams(dict(zip(names, plist)))
        out = forward_batch(p, batch, cfg, "train", stream(seed, "dropout"))
        d, c = out.decoder_loss, out.classifier_loss
        return combined_loss(d, c, None), combined_loss(d, c, ALPHA)

    err = nc.finite_difference_gradcheck(objectives, list(params), h=h)
    return GradcheckResult(seed, err, params.size())
