"""
Reusing one model on new images
===============================

Training happens once. The saved model carries its input scaling, so an
unseen image goes through exactly the same mapping.
"""
import tempfile
from pathlib import Path

import numpy as np

from emdens import autoencoder as ae
from emdens.data_io import BlobSpec, synth_blobs
from emdens.pipeline import PipelineConfig, embed, train_model

first, _ = synth_blobs(BlobSpec(5, 1500, 12, mean_separation=6.0, seed=10))
second, _ = synth_blobs(BlobSpec(5, 1200, 12, mean_separation=6.0, seed=11))

model = train_model(first, PipelineConfig(max_epochs=200, seed=3))
path = Path(tempfile.mkdtemp()) / "model.dsa"
ae.save_model(model, path)
print("model file:", path.stat().st_size, "bytes")

###############################################################################
# Two independent loads give bit-identical embeddings of the second image.
z1 = embed(ae.load_model(path), second)
z2 = embed(ae.load_model(path), second)
print("identical:", z1.tobytes() == z2.tobytes())
print("inside (0, 1):", bool(np.all((z1 > 0) & (z1 < 1))))

###############################################################################
# Values outside the training range are clamped before encoding, so the
# embedding stays in the unit cube even for brighter images.
brighter = type(second)(second.height, second.width, second.data * 3.0)
print("max after scaling x3:", embed(model, brighter).max())
