"""
Tweets that carry an address
============================

An IPv4 address is split into two 16-bit halves. Each half is hidden in a
sentence whose SHA-256 digest starts with those 16 bits.
"""

# %%
import random

from covertsim import codec, tweetgen
from covertsim.experiments import _topic_tweets

topic = "Payday"
raw = _topic_tweets(topic, 400, seed=1)
print(raw[0])

# %% clean, then augment 50x with synonym swaps, insertions, swaps and deletions
clean = tweetgen.clean(raw)
aug = tweetgen.augment_all(clean, tweetgen.AugmentConfig(alpha=0.1, num_aug=50, seed=1))
print(len(clean), "clean tweets ->", len(aug), "sentences")
print("keyword kept in", round(tweetgen.keyword_retention(aug, topic), 3))

# %% seven variants per sentence, keep those that still mention the topic
cands = [s for s in tweetgen.expand_variants(aug) if topic.lower() in s.lower()]
print(len(cands), "candidates; chance both halves are covered",
      round(codec.both_parts_probability(len(set(cands))), 3))

# %%
res = codec.embed("203.0.113.7", cands, random.Random(0))
print("parts", [f"{p.value:04x}" for p in res.parts], "bucket sizes", [len(m) for m in res.matches])
for t in res.tweets:
    print(f"  {codec.digest_prefix(t):04x}  {t}")

# %% a bot needs nothing but the two texts in posting order
print("decoded", codec.decode(res.tweets))
print("swapped", codec.decode(res.tweets[::-1]))
