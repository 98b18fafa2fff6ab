"""Smoke test for the pii_forge Python extension.

Build and install first:

    pip install -e crates/python --no-build-isolation
    python python/smoke_test.py
"""

import math
import pathlib
import tempfile

import pii_forge as pf

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURE = ROOT / "fixtures" / "bio20"


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print("ok  ", msg)


def main():
    check(abs(pf.similarity("Harvard Univ", "Harvard University") - 0.7484551991837488) < 1e-12, "trigram similarity")
    check(pf.best_match("Harvard Univ", ["Yale", "Harvard University"])[0] == 1, "best_match picks the closest candidate")
    check([t[0] for t in pf.tokenize("Born (1950).")] == ["Born", "(", "1950", ")", "."], "tokenize")
    check(len(pf.clean_and_split("He was born.[1] He died.[citation needed]")) == 2, "clean_and_split")

    credits = [pf.pair_credit((1, 2, "SP"), (0, 2, "SP"), s) for s in ("strict", "exact", "type", "partial")]
    check(credits == [0.0, 0.0, 0.5, 0.5], "pair_credit for a boundary error")

    gold = pf.Corpus.read(str(FIXTURE / "gold.conll"))
    check(len(gold) == 133, "fixture gold corpus loads")

    pages = []
    for path in sorted((FIXTURE / "pages").glob("*.html")):
        html = path.read_text(encoding="utf-8")
        pages.append((pf.extract_body_text(html), pf.parse_infobox(html, path.stem)))
    check(len(pages) == 20 and pages[0][1]["page_id"] == "000_Walter_Parker", "infobox records")

    auto, stats = pf.annotate(pages, keep_empty=True)
    check(stats["pages"] == 20, "annotate statistics")
    report = pf.evaluate(auto, gold)
    check(report["strict"]["micro"]["f1"] < report["partial"]["micro"]["f1"], "strict F1 below partial F1")

    model = pf.TaggerModel(feature_bits=14)
    losses = model.train(gold, epochs=3, seed=1)
    check(abs(losses[0] - math.log(11)) < 1e-9, "first batch loss of a zero model is ln 11")
    pred = model.tag(gold)
    check(len(pred) == len(gold), "tagging keeps sentence count")

    model_c, central = pf.fed_run(gold, gold, scenario="central", seed=3, epochs=2, feature_bits=14)
    model_r, remote = pf.fed_run(gold, gold, scenario="fed-remote", workers=1, seed=3, epochs=2, feature_bits=14)
    check(model_c.to_bytes() == model_r.to_bytes(), "fed-remote with one worker equals central training")
    check(remote["transfers"] == 4, "one transfer out and back per epoch")

    with tempfile.TemporaryDirectory() as tmp:
        log = pathlib.Path(tmp) / "decisions.jsonl"
        records = [rec for _, rec in pages]
        session = pf.ReviewSession(auto, records, str(log))
        first = session.next_pending()
        session.submit(first, "confirm", annotator="smoke")
        try:
            session.submit(first, "add", span=(0, 999, "SP"))
            raise AssertionError("out-of-bounds ADD accepted")
        except pf.PiiForgeError:
            pass
        again = pf.ReviewSession(auto, records, str(log))
        check(again.progress() == session.progress() and again.progress()["done"] >= 1, "review log replays after restart")

        small = pf.synth_pages(3, seed=5, out_dir=tmp)
        check(len(list(pathlib.Path(tmp, "pages").glob("*.html"))) == 3 and len(small) > 0, "synthetic pages")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
