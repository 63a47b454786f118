"""Generate the synthetic HotpotQA-format dev subset and a matching cased
word-piece vocabulary used by the integration and acceptance tests.

Run from the repository root:

    python3 scripts/gen_dev_subset.py crates/core/tests/fixtures
"""
import json
import os
import random
import string
import sys

SEED = 20201014
N_QUESTIONS = 100

FIRST = ["Alder", "Birch", "Cedar", "Dunmore", "Elm", "Fenwick", "Garrow", "Hollis", "Ivers", "Juniper",
         "Kestrel", "Larch", "Marlow", "Norcott", "Oakes", "Pellam", "Quarry", "Rowan", "Sable", "Thorne",
         "Upton", "Vance", "Wexley", "Yarrow"]
LAST = ["Grove", "Hall", "Ridge", "Works", "Abbey", "Crossing", "Harbour", "Mill", "Gate", "Field"]
PEOPLE = ["Agnes", "Bertram", "Clara", "Desmond", "Edith", "Felix", "Greta", "Horace", "Ingrid", "Jasper",
          "Katrin", "Leopold", "Mabel", "Nigel", "Odette", "Percival", "Rosalind", "Silas", "Tabitha", "Ulric"]
SURNAMES = ["Ashdown", "Blackwood", "Carrow", "Dray", "Everleigh", "Fairbanks", "Gissing", "Hartnell",
            "Ilford", "Jessop", "Kingsley", "Lockhart"]
CITIES = ["Lisbon", "Tallinn", "Bergen", "Porto", "Ghent", "Turin", "Krakow", "Seville", "Aarhus", "Brno",
          "Utrecht", "Graz", "Malmo", "Lyon", "Bilbao", "Leeds"]
COUNTRIES = ["Portugal", "Estonia", "Norway", "Belgium", "Italy", "Poland", "Spain", "Denmark", "Czechia",
             "Netherlands", "Austria", "Sweden", "France", "England"]
FILLER = [
    "It was renovated several times during the following decades.",
    "Local historians have written extensively about its early years.",
    "The building is now a listed heritage site.",
    "A small museum on the grounds is open to visitors in summer.",
    "Its archives were digitised in a joint project with the regional library.",
    "The surrounding district grew rapidly after the railway arrived.",
    "Several notable events have been hosted there since its opening.",
    "Annual festivals draw large crowds from neighbouring towns.",
]


def entity(rng, used):
    while True:
        name = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
        if name not in used:
            used.add(name)
            return name


def person(rng):
    return f"{rng.choice(PEOPLE)} {rng.choice(SURNAMES)}"


def distractor_paragraph(rng, used):
    title = entity(rng, used)
    founder = person(rng)
    n = rng.randint(2, 6)
    sentences = [f"{title} is an institution located in {rng.choice(CITIES)}."]
    if rng.random() < 0.5:
        sentences.append(f" It was established by {founder} in {rng.randint(1800, 1990)}.")
    while len(sentences) < n:
        sentences.append(" " + rng.choice(FILLER))
    return [title, sentences]


def bridge_question(rng, qid):
    used = set()
    org = entity(rng, used)
    founder = person(rng)
    city = rng.choice(CITIES)
    year = rng.randint(1800, 1990)
    gold_a = [org, [
        f"{org} is an institution known for its collections.",
        f" It was founded by {founder} in {year}.",
    ] + [" " + rng.choice(FILLER) for _ in range(rng.randint(0, 3))]]
    founder_title = founder
    gold_b = [founder_title, [
        f"{founder} was a patron of the arts.",
    ] + [" " + rng.choice(FILLER) for _ in range(rng.randint(0, 2))] + [
        f" {founder} was born in {city}.",
    ]]
    n_b = len(gold_b[1])
    question = f"In which city was the founder of {org} born?"
    sf = [[org, 1], [founder_title, n_b - 1]]
    return question, city, [gold_a, gold_b], sf, used


def comparison_question(rng, qid):
    used = set()
    a = entity(rng, used)
    b = entity(rng, used)
    country_a = rng.choice(COUNTRIES)
    same = rng.random() < 0.5
    country_b = country_a if same else rng.choice([c for c in COUNTRIES if c != country_a])
    gold_a = [a, [f"{a} is a venue in {country_a}.", " " + rng.choice(FILLER)]]
    gold_b = [b, [" " + rng.choice(FILLER), f" {b} is a venue in {country_b}."]]
    question = f"Are {a} and {b} both located in {country_a}?"
    answer = "yes" if same else "no"
    sf = [[a, 0], [b, 1]]
    return question, answer, [gold_a, gold_b], sf, used


def main():
    out_dir = sys.argv[1]
    rng = random.Random(SEED)
    records = []
    for i in range(N_QUESTIONS):
        qid = f"{rng.getrandbits(48):012x}"
        if rng.random() < 0.25:
            question, answer, golds, sf, used = comparison_question(rng, qid)
        else:
            question, answer, golds, sf, used = bridge_question(rng, qid)
        context = list(golds)
        for t, _ in golds:
            used.add(t)
        while len(context) < 10:
            context.append(distractor_paragraph(rng, used))
        rng.shuffle(context)
        records.append({
            "_id": qid,
            "answer": answer,
            "question": question,
            "supporting_facts": sf,
            "context": context,
            "type": "comparison" if answer in ("yes", "no") else "bridge",
            "level": "medium",
        })

    with open(os.path.join(out_dir, "dev_subset.json"), "w", encoding="utf-8") as f:
        json.dump(records, f, ensure_ascii=False, indent=1)
        f.write("\n")

    words = set()
    chars = set()
    for r in records:
        texts = [r["question"], r["answer"]]
        for title, sents in r["context"]:
            texts.append(title)
            texts.extend(sents)
        for t in texts:
            cur = ""
            for ch in t:
                chars.add(ch)
                if ch.isspace() or ch in string.punctuation:
                    if cur:
                        words.add(cur)
                    cur = ""
                else:
                    cur += ch
            if cur:
                words.add(cur)
    words.discard("noans")
    # Long words are only reachable as pieces, exercising the greedy
    # longest-match path.
    pieced = {w for w in words if len(w) > 9}
    whole = sorted(words - pieced)
    pieces = set()
    for w in sorted(pieced):
        pieces.add(w[:6])
        rest = w[6:]
        while rest:
            pieces.add("##" + rest[:3])
            rest = rest[3:]
    printable = sorted(c for c in chars if not c.isspace())
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "<t>", "</t>", "yes", "no", "noans"]
    seen = set(vocab)
    for tok in list(string.punctuation) + whole + sorted(pieces) + printable + ["##" + c for c in printable]:
        if tok not in seen:
            seen.add(tok)
            vocab.append(tok)
    with open(os.path.join(out_dir, "vocab.txt"), "w", encoding="utf-8") as f:
        for tok in vocab:
            f.write(tok + "\n")


if __name__ == "__main__":
    main()
