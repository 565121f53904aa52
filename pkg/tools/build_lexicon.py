"""Expand tools/synonym_groups.txt into src/covertsim/data/lexicon.tsv."""
from collections import defaultdict
from pathlib import Path

root = Path(__file__).resolve().parent.parent
syn = defaultdict(set)
for line in (root / "tools" / "synonym_groups.txt").read_text().splitlines():
    if not line.strip() or line.startswith("#"):
        continue
    _, words = line.split(":", 1)
    group = [w.strip().lower() for w in words.split(",") if w.strip()]
    for w in group:
        syn[w].update(x for x in group if x != w)
out = "".join(f"{w}\t{','.join(sorted(s))}\n" for w, s in sorted(syn.items()) if s)
(root / "src" / "covertsim" / "data" / "lexicon.tsv").write_text(out, encoding="utf-8")
print(len(syn), "entries")
