"""
Class embeddings from prompts
=============================

The text side gives one unit d-vector per class. Handcrafted prompts share
their template tokens, so rows end up close; class names alone spread out.
"""

import numpy as np

from langvox.losses import score_map
from langvox.numerics import Tensor
from langvox.textside import LabelSet, MockTextEncoder, PromptTemplate, TextBank

labels = LabelSet(["floor", "wall", "chair", "table"])
encoder = MockTextEncoder(out_dim=32, token_dim=32, seed=0)

bank = TextBank(labels, encoder, "handcrafted")
t = bank.embeddings().data
print("template prompts, cosine matrix\n", np.round(t @ t.T, 2))

names = encoder.encode_prompts(labels, PromptTemplate()).data
print("class names alone\n", np.round(names @ names.T, 2))

# learnable mode: context vectors are trained, the frozen map is not
learn = TextBank(labels, encoder, "learnable", context_length=4)
print("trainable:", [p.name for p in learn.parameters()])

# a score map is plain cosine between features and class rows
feats = Tensor(np.random.default_rng(0).standard_normal((5, 32)))
print("scores\n", np.round(score_map(feats, Tensor(names)).data, 2))
