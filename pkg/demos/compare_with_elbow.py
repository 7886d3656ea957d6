"""
Density estimate versus the SSD elbow
=====================================

The usual way to choose k runs k-means for every k up to some maximum and
looks for the flat part of the within-cluster SSD curve. Here both routes
run on the same embedding and are timed.
"""
from emdens.data_io import BlobSpec, synth_blobs
from emdens.pipeline import PipelineConfig, benchmark, train_model

img, _ = synth_blobs(BlobSpec(6, 5000, 19, mean_separation=6.0, seed=2))
cfg = PipelineConfig(max_epochs=200, train_subsample=3000, seed=2, k_max=20, kmeans_restarts=2)
model = train_model(img, cfg)

rep = benchmark(model, img, cfg)
for stage, t in rep["density"].items():
    print(f"{stage:>20s}: {t * 1e3:8.1f} ms")
print(f"{'ssd sweep + elbow':>20s}: {rep['ssd_inflection'] * 1e3:8.1f} ms")
print(f"speedup {rep['speedup']:.0f}x")
print("k from density:", rep["k_density"], " k from elbow:", rep["k_inflection"])
