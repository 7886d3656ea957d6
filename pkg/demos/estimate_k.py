"""
Counting populations from embedded density
==========================================

Bin the 3-D embedding into a 10 x 10 x 10 grid and count the bins whose
occupancy is a Tukey outlier.
"""
import numpy as np

from emdens.data_io import BlobSpec, synth_blobs
from emdens.density import dense_region_check, estimate_k, histogram
from emdens.pipeline import PipelineConfig, embed, train_model

img, truth = synth_blobs(BlobSpec(4, 3000, 19, mean_separation=6.0, seed=1))
cfg = PipelineConfig(max_epochs=300, train_subsample=3000, seed=1)
z = embed(train_model(img, cfg), img)

hist = histogram(z, bins=10)
diag = dense_region_check(hist)
print(f"{diag.empty_fraction:.1%} of bins are empty, skewness {diag.skewness:.1f}")

###############################################################################
# With most bins empty the third quartile is zero, so the fence is zero too
# and every occupied bin starts as a candidate. The percentile floor then
# drops the weakest fifth of them.
est = estimate_k(hist, percentile_floor=20)
print("quartiles", est.quartiles, "fence", est.threshold)
print("candidates", len(est.candidate_bins), "-> k =", est.k, "(true:", len(np.unique(truth)), ")")

###############################################################################
# How many bins does each true population spread over?
for c in np.unique(truth):
    cells = {tuple(b) for b in np.minimum((z[truth == c] * 10).astype(int), 9)}
    print("population", c, "occupies", len(cells), "bins")
