"""
Embedding a multiplex image into three dimensions
==================================================

Train a small stacked sparse autoencoder on synthetic marker data and look
at the bottleneck as a false-colour image.
"""
from pathlib import Path

import numpy as np

from emdens.data_io import BlobSpec, synth_blobs, write_ppm
from emdens.evaluation import pseudo_rgb
from emdens.pipeline import PipelineConfig, embed, train_model

out = Path("demo_output")
out.mkdir(exist_ok=True)

# Five cell populations measured on 19 channels, 2000 pixels each.
img, truth = synth_blobs(BlobSpec(5, 2000, 19, mean_separation=6.0, seed=0))
print(img.height, "x", img.width, "pixels,", img.channels, "channels")

###############################################################################
# The network is 19 -> 15 -> 10 -> 3. A few hundred optimiser steps per stage
# are enough to see structure; the defaults train much longer.
cfg = PipelineConfig(max_epochs=300, train_subsample=3000, seed=0)
model = train_model(img, cfg)
z = embed(model, img)
print("embedding range:", z.min(axis=0), z.max(axis=0))

###############################################################################
# Each latent axis drives one colour channel. Pixels of one population share
# a hue because they sit close together in the embedding.
write_ppm(pseudo_rgb(z, img.height, img.width), out / "embedding.ppm")
for c in range(5):
    print("population", c, "mean embedding", np.round(z[truth == c].mean(axis=0), 3))
