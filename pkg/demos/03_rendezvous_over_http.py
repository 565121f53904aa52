"""
One command over the simulated network
=======================================

The botmaster and three bots are separate HTTP clients of a local service.
They meet on a trending topic, the bots find the botmaster by avatar and
decode the command. Then an adversary replays the spent avatar.
"""

# %%
import logging

from covertsim import experiments, harness, siamese
from covertsim.osn.client import HTTPClient
from covertsim.osn.server import start_background

logging.basicConfig(level=logging.WARNING)

trained = experiments.train_desk_model(40, 2, input_size=64, seed=0)
print("threshold", round(trained.threshold, 4))

svc = experiments._fresh_service(seed=0, warmup=180)
server, url = start_background(svc)
print("service at", url)

# %% rendezvous: everyone applies the same rule to the same trend list
rule = harness.RendezvousRule()
ident = trained.corpus[0]
bm = harness.Botmaster(HTTPClient(url), rule, [ident.master], seed=0)
vec = trained.extractor.vectors_for([ident])[0]
bots = [harness.Bot(f"bot{k}", HTTPClient(url), rule, [siamese.FeatureVector(vec.id, vec.values)],
                    trained.extractor, trained.threshold) for k in range(3)]

clock = HTTPClient(url)
clock.advance((-clock.now()) % rule.cadence)
trend, as_of = bm.select()
for b in bots:
    b.select()
print("trend", harness.topic_of(trend), "as of minute", as_of)

# %% post halfway through the wait, crawl at the end of it
clock.advance(rule.post_offset)
report = harness.publish_or_raise(bm, "198.51.100.23", topic=harness.topic_of(trend), as_of=as_of)
print(f"crawled {report.crawled}, {report.candidates} candidates, posted {report.texts}")
clock.advance(rule.wait - rule.post_offset)

for b in bots:
    got = b.retrieve()
    d = b.commands[-1]
    print(f"{b.name}: {got} from {d.account} at depth {d.depth}, distance {d.distance:.4f}")

# %% replay: the adversary saved the avatar and posts a fake command next hour
saved = clock.avatar(report.account, 400)
bm.cleanup(report)
clock.advance((-clock.now()) % rule.cadence)
replay = harness.adversary_replay(saved, "6.6.6.6", HTTPClient(url), bots, rule, seed=1)
print("replay accepted by", replay.acceptances, "of", len(replay.outcomes), "bots")

server.shutdown()
