"""Measurement drivers. Each writes ``<name>.csv`` plus ``<name>.meta.json``.

CSV headers:

hit-rate
    n_candidates, trials, ips_per_trial, hits, pairs, rate, model, abs_error, hash_seconds
gen-efficiency
    n_tweets, n_cleaned, n_augmented, n_candidates, augment_seconds, expand_seconds,
    hash_seconds, total_seconds
recognition-throughput
    n_avatars, decode_seconds, extract_seconds, match_seconds, per_avatar_ms
crawl-vs-wait
    wait, trials, median_depth, mean_depth, min_depth, max_depth, within_budget
    (depth = 1-based newest-first position of the botmaster's newest tweet when
    the crawl starts ``wait`` minutes after posting)
end-to-end
    command_index, bot, topic, published, decoded, correct, vector_id, depth, attempts
"""
from __future__ import annotations

import csv
import json
import logging
import platform
import random
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import avatars, codec, nn, siamese, tweetgen
from .errors import UsageError
from .harness import Bot, Botmaster, RendezvousRule, crawl, topic_of
from .osn.client import HTTPClient, LocalClient
from .osn.server import start_background
from .osn.service import OSNService
from .osn.traffic import TextGenerator, TrafficModel

log = logging.getLogger(__name__)

DEFAULTS = {
    "hit-rate": {"n_values": [50_000, 100_000, 200_000, 330_000], "trials": 50, "ips_per_trial": 100, "seed": 0},
    "gen-efficiency": {"n_tweets": [100, 200, 400, 800], "topic": "Payday", "num_aug": 50, "alpha": 0.1, "seed": 0},
    "recognition-throughput": {"n_avatars": [10, 50, 100, 200], "input_size": 64, "n_vectors": 20, "seed": 0},
    "crawl-vs-wait": {"waits": [5, 30, 60, 120], "trials": 5, "budget": 1000, "seed": 0, "warmup": 120},
    "end-to-end": {"n_bots": 7, "n_commands": 20, "n_identities": 60, "epochs": 4, "input_size": 64,
                   "seed": 0, "warmup": 180, "transport": "http", "max_attempts": 3, "offline": []},
}
NAMES = tuple(DEFAULTS)


@dataclass
class ExperimentResult:
    name: str
    header: list
    rows: list
    meta: dict = field(default_factory=dict)
    csv_path: Path | None = None
    meta_path: Path | None = None


def _write(result: ExperimentResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.csv_path = out / f"{result.name}.csv"
    result.meta_path = out / f"{result.name}.meta.json"
    with open(result.csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(result.header)
        w.writerows(result.rows)
    result.meta_path.write_text(json.dumps(result.meta, indent=2, sort_keys=True, default=str) + "\n")


def distinct_strings(n, rng: random.Random, tag=""):
    """``n`` distinct short sentences; uniqueness comes from a running index."""
    words = ("alpha", "bravo", "delta", "echo", "gamma", "kilo", "lima", "oscar", "sierra", "tango")
    return [f"{tag}{' '.join(rng.choices(words, k=3))} {i}" for i in range(n)]


def hit_rate(cfg) -> ExperimentResult:
    """Each trial hashes one nested candidate set and checks it against
    ``ips_per_trial`` random addresses; a hit needs both 16-bit parts."""
    n_values = sorted(int(n) for n in cfg["n_values"])
    trials, n_ips = int(cfg["trials"]), int(cfg["ips_per_trial"])
    hits = {n: 0 for n in n_values}
    hash_time = {n: 0.0 for n in n_values}
    checked = 0
    for t in range(trials):
        rng = random.Random(f"{cfg['seed']}/hit-rate/{t}")
        cands = distinct_strings(n_values[-1], rng, f"t{t} ")
        start = time.perf_counter()
        prefixes = np.fromiter((codec.digest_prefix(s) for s in cands), dtype=np.int64, count=len(cands))
        per_hash = (time.perf_counter() - start) / len(cands)
        ips = [f"{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(256)}"
               for _ in range(n_ips)]
        parts = [codec.split_ip(ip) for ip in ips]
        first_seen = np.full(1 << 16, np.iinfo(np.int64).max)
        np.minimum.at(first_seen, prefixes, np.arange(len(prefixes)))
        for n in n_values:
            hash_time[n] += per_hash * n
            for a, b in parts:
                hits[n] += bool(first_seen[a.value] < n and first_seen[b.value] < n)
        if t == 0:
            # the bitmap shortcut must agree with the collision search itself
            n = n_values[0]
            for ip, (a, b) in zip(ips[:5], parts[:5]):
                res = codec.embed(ip, cands[:n], random.Random(0))
                assert res.success == bool(first_seen[a.value] < n and first_seen[b.value] < n)
                checked += 1
    rows = []
    for n in n_values:
        pairs = trials * n_ips
        rate = hits[n] / pairs
        model = codec.both_parts_probability(n)
        rows.append([n, trials, n_ips, hits[n], pairs, round(rate, 6), round(model, 6),
                     round(abs(rate - model), 6), round(hash_time[n] / trials, 4)])
    header = ["n_candidates", "trials", "ips_per_trial", "hits", "pairs", "rate", "model", "abs_error",
              "hash_seconds"]
    return ExperimentResult("hit-rate", header, rows, {"collide_cross_checks": checked})


def _topic_tweets(topic, n, seed):
    model = TrafficModel(seed=seed, retweet_prob=0.0)
    gen = TextGenerator(model, np.random.default_rng([seed, 11]))
    return [gen.text(topic) for _ in range(n)]


def gen_efficiency(cfg) -> ExperimentResult:
    rows = []
    aug = tweetgen.AugmentConfig(float(cfg["alpha"]), int(cfg["num_aug"]), int(cfg["seed"]))
    lex = tweetgen.default_lexicon()
    topic = cfg["topic"]
    for n in sorted(int(x) for x in cfg["n_tweets"]):
        raw = _topic_tweets(topic, n, int(cfg["seed"]))
        t0 = time.perf_counter()
        cleaned = tweetgen.clean(raw)
        augmented = tweetgen.augment_all(cleaned, aug, lex)
        t1 = time.perf_counter()
        cands = Botmaster.candidates(topic, augmented)
        t2 = time.perf_counter()
        codec.prefix_buckets(codec.dedupe(cands), set())
        t3 = time.perf_counter()
        rows.append([n, len(cleaned), len(augmented), len(cands), round(t1 - t0, 4), round(t2 - t1, 4),
                     round(t3 - t2, 4), round(t3 - t0, 4)])
    header = ["n_tweets", "n_cleaned", "n_augmented", "n_candidates", "augment_seconds", "expand_seconds",
              "hash_seconds", "total_seconds"]
    return ExperimentResult("gen-efficiency", header, rows, {"topic": topic})


def recognition_throughput(cfg) -> ExperimentResult:
    size = int(cfg["input_size"])
    spec = nn.default_spec()
    ext = siamese.Extractor(nn.init_weights(spec, size, seed=int(cfg["seed"])), spec, size)
    counts = sorted(int(x) for x in cfg["n_avatars"])
    corpus = avatars.generate_corpus(avatars.CorpusSpec(max(counts), seed=int(cfg["seed"])))
    blobs = [ident.jpeg[400] for ident in corpus]
    store = siamese.VectorStore(ext.vectors_for(corpus[:int(cfg["n_vectors"])]))
    rows = []
    for n in counts:
        t0 = time.perf_counter()
        imgs = [avatars.AvatarImage(avatars.decode_image(b)) for b in blobs[:n]]
        t1 = time.perf_counter()
        emb = ext.extract_many(imgs)
        t2 = time.perf_counter()
        for e in emb:
            store.nearest(e)
        t3 = time.perf_counter()
        rows.append([n, round(t1 - t0, 4), round(t2 - t1, 4), round(t3 - t2, 4), round(1000 * (t3 - t0) / n, 3)])
    header = ["n_avatars", "decode_seconds", "extract_seconds", "match_seconds", "per_avatar_ms"]
    return ExperimentResult("recognition-throughput", header, rows,
                            {"input_size": size, "parameters": ext.model.n_parameters})


def _fresh_service(seed, warmup, area="1", **traffic):
    svc = OSNService({area: TrafficModel.default(seed=seed, **traffic)}, seed=seed)
    svc.advance_clock(warmup)
    return svc


def _next_epoch(client, cadence):
    now = client.now()
    step = (-now) % cadence
    if step:
        client.advance(step)
    return client.now()


def crawl_vs_wait(cfg) -> ExperimentResult:
    """Post at selection time, crawl ``wait`` minutes later; identical traffic per trial across waits."""
    waits = sorted(int(w) for w in cfg["waits"])
    budget = int(cfg["budget"])
    depths = {w: [] for w in waits}
    corpus = avatars.generate_corpus(avatars.CorpusSpec(1, seed=int(cfg["seed"]) + 17))
    for trial in range(int(cfg["trials"])):
        for w in waits:
            svc = _fresh_service(int(cfg["seed"]) * 1000 + trial, int(cfg["warmup"]))
            client = LocalClient(svc)
            rule = RendezvousRule(wait=w)
            _next_epoch(client, rule.cadence)
            bm = Botmaster(client, rule, [corpus[0].master], seed=trial)
            trend, as_of = bm.select()
            report = bm.publish(f"10.0.{trial}.{w}", topic_of(trend), as_of)
            if not report.success:
                log.warning("trial %d wait %d: publish failed (%s)", trial, w, report.reason)
                depths[w].append(None)
                continue
            client.advance(w)
            seen = crawl(client, report.topic, 100_000)
            pos = next(i for i, tw in enumerate(seen, 1) if tw["id"] == report.tweet_ids[-1])
            depths[w].append(pos)
    rows = []
    for w in waits:
        got = [d for d in depths[w] if d is not None]
        rows.append([w, len(got), statistics.median(got), round(statistics.fmean(got), 2), min(got), max(got),
                     round(sum(d <= budget for d in got) / len(got), 4)])
    header = ["wait", "trials", "median_depth", "mean_depth", "min_depth", "max_depth", "within_budget"]
    return ExperimentResult("crawl-vs-wait", header, rows, {"depths": {str(k): v for k, v in depths.items()}})


@dataclass
class TrainedModel:
    extractor: siamese.Extractor
    threshold: float
    report: siamese.TrainingReport
    corpus: list


def train_desk_model(n_identities=60, epochs=4, input_size=64, seed=0) -> TrainedModel:
    corpus = avatars.generate_corpus(avatars.CorpusSpec(n_identities, seed=seed))
    cfg = nn.TrainingConfig(epochs=epochs, seed=seed)
    model, report = siamese.train(corpus, cfg, input_size=input_size)
    ext = siamese.Extractor(model, nn.default_spec(), input_size)
    return TrainedModel(ext, report.calibration.threshold, report, corpus)


def _random_ips(n, seed):
    rng = random.Random(f"{seed}/commands")
    return [f"{rng.randrange(1, 224)}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(1, 255)}"
            for _ in range(n)]


def end_to_end(cfg, trained: TrainedModel | None = None) -> ExperimentResult:
    """``n_bots`` bots receive ``n_commands`` commands, one per hourly cycle.

    A failed publish is re-attempted at the next cycle with the same avatar;
    bots listed in ``offline`` skip retrieval entirely.
    """
    seed = int(cfg["seed"])
    n_cmd, n_bots = int(cfg["n_commands"]), int(cfg["n_bots"])
    if trained is None:
        trained = train_desk_model(int(cfg["n_identities"]), int(cfg["epochs"]), int(cfg["input_size"]), seed)
    if len(trained.corpus) < n_cmd:
        raise UsageError("need one prepared identity per command")
    identities = trained.corpus[:n_cmd]
    vectors = trained.extractor.vectors_for(identities)
    svc = _fresh_service(seed, int(cfg["warmup"]))
    server = None
    if cfg.get("transport", "local") == "http":
        server, url = start_background(svc)
        make_client = lambda: HTTPClient(url)  # noqa: E731
    else:
        make_client = lambda: LocalClient(svc)  # noqa: E731
    rule = RendezvousRule(area="1")
    try:
        bm = Botmaster(make_client(), rule, [ident.master for ident in identities], seed=seed)
        bots = [Bot(f"bot{k}", make_client(), rule,
                    [siamese.FeatureVector(v.id, v.values) for v in vectors],
                    trained.extractor, trained.threshold) for k in range(n_bots)]
        offline = set(cfg.get("offline") or [])
        clock = bm.client
        rows, cycles = [], 0
        for idx, ip in enumerate(_random_ips(n_cmd, seed)):
            for attempt in range(int(cfg["max_attempts"])):
                cycles += 1
                _next_epoch(clock, rule.cadence)
                trend, as_of = bm.select()
                for bot in bots:
                    bot.select()
                clock.advance(rule.post_offset)
                report = bm.publish(ip, topic_of(trend), as_of, attempt_seed=attempt)
                clock.advance(rule.wait - rule.post_offset)
                got = {}
                for bot in bots:
                    if bot.name in offline:
                        continue
                    got[bot.name] = bot.retrieve()
                if report.success:
                    bm.cleanup(report)
                    break
            for bot in bots:
                payload = got.get(bot.name)
                vec = bot.commands[-1].vector_id if payload is not None else ""
                depth = bot.commands[-1].depth if payload is not None else ""
                rows.append([idx, bot.name, report.topic, ip, "" if payload is None else str(payload),
                             int(payload is not None and str(payload) == ip and vec == identities[idx].id),
                             vec, depth, attempt + 1])
    finally:
        if server is not None:
            server.shutdown()
            server.server_close()
    header = ["command_index", "bot", "topic", "published", "decoded", "correct", "vector_id", "depth", "attempts"]
    meta = {"cycles": cycles, "threshold": trained.threshold, "test_accuracy": trained.report.test_accuracy,
            "tweets": svc.tweet_count(), "sim_minutes": svc.now,
            "candidates": [r.candidates for r in bm.reports], "protocol_errors": sum(len(b.errors) for b in bots)}
    return ExperimentResult("end-to-end", header, rows, meta)


_RUNNERS = {"hit-rate": hit_rate, "gen-efficiency": gen_efficiency,
            "recognition-throughput": recognition_throughput, "crawl-vs-wait": crawl_vs_wait,
            "end-to-end": end_to_end}


def run_experiment(name, config=None, out_dir=None, **kw) -> ExperimentResult:
    if name not in _RUNNERS:
        raise UsageError(f"unknown experiment {name!r}; choose from {', '.join(NAMES)}")
    cfg = {**DEFAULTS[name], **(config or {})}
    start = time.perf_counter()
    result = _RUNNERS[name](cfg, **kw)
    result.meta.update(config=cfg, seconds=round(time.perf_counter() - start, 3),
                       python=platform.python_version(), numpy=np.__version__)
    if out_dir is not None:
        _write(result, out_dir)
    return result
