"""Command-line tools: ``avatar``, ``tweetgen``, ``codec``, ``osn-sim`` and ``harness``."""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from . import avatars, codec, experiments, harness, nn, siamese, tweetgen
from .errors import CovertSimError, UsageError


def _setup_logging(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")


def _read_lines(path):
    text = sys.stdin.read() if path in (None, "-") else Path(path).read_text(encoding="utf-8")
    return [ln for ln in text.splitlines() if ln.strip()]


def _write_lines(lines, path):
    data = "".join(f"{ln}\n" for ln in lines)
    if path in (None, "-"):
        sys.stdout.write(data)
    else:
        Path(path).write_text(data, encoding="utf-8")


# -- avatar ------------------------------------------------------------------

def avatar_main(argv=None):
    p = argparse.ArgumentParser(prog="avatar", description="Procedural avatar corpus tools.")
    sub = p.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("gen", help="generate a corpus of identities with all size variants")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--quality", type=int, default=avatars.DEFAULT_QUALITY)
    args = p.parse_args(argv)
    corpus = avatars.generate_corpus(avatars.CorpusSpec(args.n, seed=args.seed, quality=args.quality))
    avatars.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} identities to {args.out}")
    return 0


# -- tweetgen ----------------------------------------------------------------

def _load_tweets(path):
    out = []
    for ln in _read_lines(path):
        if ln.lstrip().startswith("{"):
            out.append(json.loads(ln))
        else:
            out.append(ln)
    return out


def tweetgen_main(argv=None):
    p = argparse.ArgumentParser(prog="tweetgen", description="Tweet cleaning and augmentation.")
    sub = p.add_subparsers(dest="cmd", required=True)
    a = sub.add_parser("augment", help="clean, augment and optionally expand tweets")
    a.add_argument("--in", dest="inp", default="-", help="text lines or JSON lines with a 'text' field")
    a.add_argument("--out", default="-")
    a.add_argument("--alpha", type=float, default=0.1)
    a.add_argument("--num-aug", type=int, default=50)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--lexicon", default=None)
    a.add_argument("--no-clean", action="store_true", help="augment lines as given")
    a.add_argument("--variants", action="store_true", help="add the upper-case punctuation variants")
    a.add_argument("--topic", default=None, help="keep only sentences containing this topic")
    args = p.parse_args(argv)
    raw = _load_tweets(args.inp)
    tweets = [tweetgen.CleanTweet(t if isinstance(t, str) else t["text"]) for t in raw] if args.no_clean \
        else tweetgen.clean(raw)
    lex = tweetgen.SynonymLexicon.load(args.lexicon) if args.lexicon else tweetgen.default_lexicon()
    out = tweetgen.augment_all(tweets, tweetgen.AugmentConfig(args.alpha, args.num_aug, args.seed), lex)
    if args.variants:
        out = tweetgen.expand_variants(out)
    if args.topic:
        out = [s for s in out if args.topic.lower() in s.lower()]
    _write_lines(out, args.out)
    print(f"{len(tweets)} tweets -> {len(out)} sentences", file=sys.stderr)
    return 0


# -- codec -------------------------------------------------------------------

def codec_main(argv=None):
    p = argparse.ArgumentParser(prog="codec", description="IPv4 <-> two-tweet hash-prefix codec.")
    sub = p.add_subparsers(dest="cmd", required=True)
    e = sub.add_parser("embed", help="pick two candidate lines whose digests carry the address")
    e.add_argument("--ip", required=True)
    e.add_argument("--candidates", required=True, help="file with one candidate sentence per line")
    e.add_argument("--seed", type=int, default=0)
    d = sub.add_parser("decode", help="recover the address from two tweets in posting order")
    d.add_argument("--tweet1", required=True)
    d.add_argument("--tweet2", required=True)
    args = p.parse_args(argv)
    if args.cmd == "decode":
        print(codec.decode([args.tweet1, args.tweet2]))
        return 0
    cands = _read_lines(args.candidates)
    res = codec.embed(args.ip, cands, random.Random(args.seed))
    a, b = res.parts
    print(f"# candidates={res.attempts} first={a} matches={len(res.matches[0])} "
          f"second={b} matches={len(res.matches[1])}", file=sys.stderr)
    if not res.success:
        print("no collision for at least one part", file=sys.stderr)
        return 1
    _write_lines(res.tweets, "-")
    return 0


# -- osn-sim -----------------------------------------------------------------

def osn_main(argv=None):
    from .osn import server

    p = argparse.ArgumentParser(prog="osn-sim", description="Local social network simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("serve", help="serve the JSON API")
    s.add_argument("--config", required=True)
    args = p.parse_args(argv)
    _setup_logging(args.verbose)
    server.serve(args.config)
    return 0


# -- harness -----------------------------------------------------------------

def _load_json(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _rule(cfg):
    return harness.RendezvousRule(**cfg.get("rule", {}))


def _client(cfg, token=None):
    from .osn.client import HTTPClient

    if "service" not in cfg:
        raise UsageError("config needs a 'service' base URL")
    return HTTPClient(cfg["service"], token)


def _threshold(cfg):
    t = cfg.get("threshold")
    if isinstance(t, str):
        return siamese.CalibrationReport.from_text(Path(t).read_text()).threshold
    if t is None:
        raise UsageError("config needs 'threshold' (a number or a calibration report path)")
    return float(t)


def _extractor(cfg):
    model = nn.load_weights(cfg["model"])
    return siamese.Extractor(model, nn.default_spec(), int(cfg.get("input_size", nn.FAST_INPUT_SIZE)))


def _out_dir(cfg, args):
    return Path(args.out or cfg.get("out", "reports"))


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _h_publish(cfg, args):
    """Publish ``command`` using the avatar at ``avatar`` (a PNG/JPEG path)."""
    client = _client(cfg)
    img = avatars.AvatarImage(avatars.decode_image(Path(cfg["avatar"]).read_bytes()))
    bm = harness.Botmaster(client, _rule(cfg), [img], seed=int(cfg.get("seed", 0)))
    report = bm.publish(cfg["command"])
    out = _out_dir(cfg, args)
    _write_json(out / "publish.json", report.__dict__)
    print(json.dumps(report.__dict__, default=str))
    return 0 if report.success else 1


def _h_bot(cfg, args):
    store = siamese.VectorStore.load(cfg["vectors"])
    bot = harness.Bot(cfg.get("name", "bot"), _client(cfg), _rule(cfg), store, _extractor(cfg), _threshold(cfg))
    payload = harness.bot_cycle(bot, advance=bool(cfg.get("advance_clock", False)))
    store.save(cfg["vectors"])
    out = _out_dir(cfg, args)
    _write_json(out / f"{bot.name}.json", {"command": None if payload is None else str(payload),
                                           "deliveries": [d.__dict__ for d in bot.commands],
                                           "errors": bot.errors})
    print(payload if payload is not None else "none")
    return 1 if bot.errors else 0


def _h_replay(cfg, args):
    """Self-contained scenario on an in-process service: publish, replay, tally."""
    from .osn.client import LocalClient
    from .osn.service import OSNService
    from .osn.traffic import TrafficModel

    seed = int(cfg.get("seed", 0))
    n_bots, offline = int(cfg.get("n_bots", 7)), int(cfg.get("offline", 1))
    trained = experiments.train_desk_model(int(cfg.get("n_identities", 40)), int(cfg.get("epochs", 3)), seed=seed)
    outcome = replay_scenario(trained, n_bots, offline, seed=seed,
                              service=OSNService({"1": TrafficModel.default(seed=seed)}, seed=seed),
                              client_factory=LocalClient)
    out = _out_dir(cfg, args)
    rows = [[o.bot, int(o.accepted), o.command or "", o.note] for o in outcome.outcomes]
    res = experiments.ExperimentResult("replay", ["bot", "accepted", "command", "note"], rows,
                                       {"fake_command": outcome.fake_command, "topic": outcome.topic,
                                        "acceptances": outcome.acceptances, "expected": offline, "config": cfg})
    experiments._write(res, out)
    print(f"acceptances={outcome.acceptances} expected={offline}")
    return 0 if outcome.acceptances == offline else 1


def replay_scenario(trained, n_bots, n_offline, seed=0, service=None, client_factory=None,
                    fake_command="6.6.6.6", command="10.20.30.40"):
    """One genuine publish with ``n_offline`` bots missing it, then a replay of its avatar."""
    ident = trained.corpus[0]
    vec = trained.extractor.vectors_for([ident])[0]
    client = client_factory(service)
    rule = harness.RendezvousRule()
    service.advance_clock(rule.cadence * 2)
    bm = harness.Botmaster(client, rule, [ident.master], seed=seed)
    bots = [harness.Bot(f"bot{k}", client_factory(service), rule, [siamese.FeatureVector(vec.id, vec.values)],
                        trained.extractor, trained.threshold) for k in range(n_bots)]
    for attempt in range(3):
        experiments._next_epoch(client, rule.cadence)
        trend, as_of = bm.select()
        client.advance(rule.post_offset)
        report = bm.publish(command, harness.topic_of(trend), as_of, attempt_seed=attempt)
        client.advance(rule.wait - rule.post_offset)
        if report.success:
            break
    else:
        raise CovertSimError("genuine publish failed three times")
    for bot in bots[n_offline:]:
        bot.select()
        bot.retrieve()
    saved = client.avatar(bm.accounts[0].account, 400)
    bm.cleanup(report)
    experiments._next_epoch(client, rule.cadence)
    return harness.adversary_replay(saved, fake_command, client, bots, rule, seed=seed + 1)


def _h_scan(cfg, args):
    ext = _extractor(cfg)
    if "corpus" in cfg:
        corpus = avatars.load_corpus(cfg["corpus"])
    else:
        corpus = avatars.generate_corpus(avatars.CorpusSpec(int(cfg.get("n_identities", 500)),
                                                           seed=int(cfg.get("seed", 0)), prefix="scan"))
    rep = harness.collision_scan(corpus, ext, _threshold(cfg))
    res = experiments.ExperimentResult("scan", ["bin_start", "count"], rep.histogram_rows(),
                                       {"pairs": rep.n_pairs, "below": rep.below, "below_half": rep.below_half,
                                        "min": rep.min_distance, "max": rep.max_distance,
                                        "threshold": rep.threshold, "config": cfg})
    experiments._write(res, _out_dir(cfg, args))
    if "vectors" in cfg:
        stats = harness.vector_stats(siamese.load_vectors(cfg["vectors"]))
        (_out_dir(cfg, args) / "vector-stats.csv").write_text(stats.to_csv())
    print(f"pairs={rep.n_pairs} below={rep.below} below_half={rep.below_half} min={rep.min_distance:.6g}")
    return 0 if rep.below_fraction < 1e-3 else 1


def _h_experiment(cfg, args):
    res = experiments.run_experiment(args.name, cfg.get("experiment", cfg), _out_dir(cfg, args))
    print(f"wrote {res.csv_path} and {res.meta_path}")
    if args.name == "end-to-end":
        return 0 if all(r[5] for r in res.rows) else 1
    return 0


def harness_main(argv=None):
    p = argparse.ArgumentParser(prog="harness", description="Protocol actors and experiment driver.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    for verb in ("publish", "bot", "replay", "scan"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", required=verb in ("publish", "bot"))
        sp.add_argument("--out", default=None)
    ex = sub.add_parser("experiment")
    ex.add_argument("name")
    ex.add_argument("--config", default=None)
    ex.add_argument("--out", default=None)
    args = p.parse_args(argv)
    _setup_logging(args.verbose)
    cfg = _load_json(args.config)
    handler = {"publish": _h_publish, "bot": _h_bot, "replay": _h_replay, "scan": _h_scan,
               "experiment": _h_experiment}[args.cmd]
    return handler(cfg, args)


TOOLS = {"avatar": avatar_main, "tweetgen": tweetgen_main, "codec": codec_main, "osn-sim": osn_main,
         "harness": harness_main}


def _guard(fn, argv):
    try:
        return fn(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CovertSimError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in TOOLS:
        print(f"usage: python -m covertsim {{{','.join(TOOLS)}}} ...", file=sys.stderr)
        return 2
    return _guard(TOOLS[argv[0]], argv[1:])


def _entry(name):
    def run():
        sys.exit(_guard(TOOLS[name], None))
    return run


avatar = _entry("avatar")
tweetgen_cli = _entry("tweetgen")
codec_cli = _entry("codec")
osn_sim = _entry("osn-sim")
harness_cli = _entry("harness")
