"""
Avatars as credentials
======================

Train a small Siamese network on procedural avatars, calibrate a distance
threshold, then check that a served 400x400 JPEG still matches its master.
"""

# %% a corpus: one lossless master per identity plus the four served sizes
from covertsim import avatars, nn, siamese

corpus = avatars.generate_corpus(avatars.CorpusSpec(60, seed=3))
ident = corpus[0]
print(ident.id, ident.master.size, sorted(ident.variants))

# %% train at 64x64; pairs are (200, 400) of one identity vs 400s of two
model, report = siamese.train(corpus, nn.TrainingConfig(epochs=2, seed=3), input_size=64)
cal = report.calibration
print(f"loss per epoch {[round(x, 4) for x in report.epoch_loss]}")
print(f"threshold {cal.threshold:.4f}  (same <= {cal.max_same_distance:.4f}, different >= {cal.min_diff_distance:.4f})")
print(f"held-out accuracy {report.test_accuracy:.3f}")

# %% the botmaster keeps the avatar, bots only ever see the 128-value vector
ext = siamese.Extractor(model, nn.default_spec(), 64)
vectors = ext.vectors_for(corpus[:10])
store = siamese.VectorStore(vectors)

served = avatars.lossy_reencode(avatars.resize(ident.master, 400), 85)
print("served avatar ->", store.match(ext.extract(served), cal.threshold, consume=False))

# a stranger lands nowhere near any vector
stranger = avatars.generate_corpus(avatars.CorpusSpec(1, seed=999, prefix="x"))[0]
print("stranger ->", store.match(ext.extract(stranger.variants[400]), cal.threshold))

# %% each vector is spent after one delivery
print("first match", siamese.match(served, store, ext, cal.threshold))
print("second match", siamese.match(served, store, ext, cal.threshold))
