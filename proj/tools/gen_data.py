#!/usr/bin/env python3
"""Regenerates the bundled synthetic corpora under data/.

Output is deterministic: the same script always writes the same bytes.
"""
import json
import os
import random

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")

SYL_A = ["al", "bre", "cor", "dal", "ev", "far", "gal", "hes", "il", "jor", "kal", "luc",
         "mor", "nal", "or", "pel", "quin", "ros", "sel", "tam", "ul", "ver", "wil", "yar"]
SYL_B = ["var", "isa", "in", "ia", "ren", "ah", "en", "per", "ka", "en", "la", "an",
         "ton", "dra", "vin", "ric", "cy", "eth", "ma", "sin", "rik", "ona", "dor", "eli"]
PLACES = ["tarsk", "velmor", "quenby", "orlin", "pashti", "rennet", "sulva", "marrow", "nydd",
          "ostrel", "halden", "brevik", "corvale", "dunmere", "eskar", "fallow", "greyholt",
          "harrowgate", "irvane", "jessop"]
THINGS = ["a blue pigment", "a comet", "a fern species", "a copper alloy", "a river delta",
          "a prime pattern", "a sleep enzyme", "a glacier cave", "a star cluster", "a moth species",
          "a crystal lattice", "a tidal rhythm"]
FIELDS = ["physics", "chemistry", "medicine", "literature"]
SUBSTANCES = ["velcor dust", "amber resin", "marsh gas", "salt brine", "pine pollen",
              "iron filings", "cedar oil", "lake silt", "coal tar", "quartz sand"]
EFFECTS = ["headaches", "rust", "crop failure", "coughing", "fever", "skin rashes"]


def names(rng, n):
    out, seen = [], set()
    while len(out) < n:
        first = rng.choice(SYL_A) + rng.choice(SYL_B)
        last = rng.choice(SYL_A) + rng.choice(SYL_B) + rng.choice(["son", "ley", "ford", "berg", "wick"])
        full = f"{first} {last}"
        if full not in seen:
            seen.add(full)
            out.append(full)
    return out


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=True) + "\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, ensure_ascii=True)
        f.write("\n")


def main_corpus():
    rng = random.Random(20240611)
    people = names(rng, 70)
    docs, queries = [], []

    def add(text, title):
        doc_id = f"doc{len(docs):03d}"
        docs.append({"id": doc_id, "title": title, "text": text})
        return doc_id

    famous = [
        ("albert einstein", "albert einstein won the nobel prize in physics in 1921 .",
         "Did Albert Einstein win the Nobel Prize in physics?"),
        ("isaac newton", "isaac newton was born in woolsthorpe in 1643 .", "Where was Isaac Newton born?"),
        ("marie curie", "marie curie won the nobel prize in chemistry in 1911 .",
         "Which Nobel Prize did Marie Curie win in 1911?"),
        ("charles darwin", "charles darwin was born in shrewsbury in 1809 .", "Where was Charles Darwin born?"),
    ]
    for name, text, q in famous:
        add(text, name)
        queries.append({"query": q, "reference": text})

    for i, person in enumerate(people):
        city = PLACES[i % len(PLACES)]
        year = 1800 + rng.randrange(200)
        text = f"{person} was born in {city} in {year} ."
        add(text, person)
        if i % 2 == 0:
            queries.append({"query": f"Where was {person.title()} born?", "reference": text})
    for i, person in enumerate(people[:50]):
        thing = THINGS[i % len(THINGS)]
        year = 1850 + rng.randrange(150)
        text = f"{person} discovered {thing} in {year} ."
        add(text, person)
        if i % 2 == 1:
            queries.append({"query": f"What did {person.title()} discover?", "reference": text})
    for i, person in enumerate(people[50:70]):
        field = FIELDS[i % len(FIELDS)]
        year = 1901 + rng.randrange(120)
        text = f"{person} won the nobel prize in {field} in {year} ."
        add(text, person)
        queries.append({"query": f"{person.title()} won the Nobel Prize in {field}", "reference": text})
    for i, sub in enumerate(SUBSTANCES):
        for j, eff in enumerate(EFFECTS):
            if (i + j) % 2 == 0:
                text = f"{sub} does cause {eff} ." if (i * j) % 3 else f"{sub} does not cause {eff} ."
                add(text, sub)
                if len(queries) < 100 and (i + j) % 4 == 0:
                    queries.append({"query": f"Does {sub} cause {eff}?", "reference": text})
    for i, city in enumerate(PLACES):
        region = PLACES[(i * 7 + 3) % len(PLACES)]
        text = f"the city of {city} lies north of {region} on the old trade road ."
        add(text, city)
    extra = 0
    while len(queries) < 100:
        person = people[1 + 2 * extra]
        queries.append({"query": f"In which city was {person.title()} born?",
                        "reference": next(d["text"] for d in docs if d["text"].startswith(person + " was born"))})
        extra += 1
    queries = queries[:100]
    for k, q in enumerate(queries):
        q["id"] = f"q{k:03d}"
    queries = [{"id": q["id"], "query": q["query"], "reference": q["reference"]} for q in queries]

    write_jsonl(os.path.join(ROOT, "corpus.jsonl"), docs)
    write_jsonl(os.path.join(ROOT, "queries.jsonl"), queries)
    write_json(os.path.join(ROOT, "rules.json"), {
        "format_version": 1,
        "entity_swap": [["einstein", "newton"], ["curie", "darwin"], ["physics", "chemistry"],
                        ["medicine", "literature"]] + [[PLACES[i], PLACES[i + 1]] for i in range(0, 20, 2)],
        "number_flip": {"offsets": [1, -1, 10, -10]},
        "negation_flip": [["does cause", "does not cause"], ["was born", "was not born"]],
        "span_replace": [["won the nobel prize", "was convicted of fraud"],
                         ["discovered", "failed to find"]],
    })
    write_json(os.path.join(ROOT, "synonyms.json"), {
        "format_version": 1,
        "synonyms": {
            "discovered": ["found", "identified"],
            "city": ["town"],
            "old": ["ancient"],
            "lies": ["sits"],
            "road": ["route"],
            "born": ["born"],
        },
    })


def planted():
    out = os.path.join(ROOT, "planted")
    os.makedirs(out, exist_ok=True)
    people = ["alvar", "brisa", "corin", "dalia", "evren", "farah", "galen", "hesper",
              "ilka", "joren", "kalla", "lucan", "mirel", "nadir", "osric", "perrin"]
    # Every queried person shares one birthplace; the corpus-only facts below
    # use distinct places so that entity swaps stay informative.
    home = "tarsk"
    rng = random.Random(29)
    extra_people, seen = [], set(people)
    while len(extra_people) < 200:
        n = rng.choice(SYL_A) + rng.choice(SYL_B)
        if n not in seen:
            seen.add(n)
            extra_people.append(n)
    extra_places = [rng.choice(SYL_A) + rng.choice(SYL_B) + rng.choice(["holm", "by", "mere", "stead"])
                    for _ in range(200)]
    # Registry notes share no word with any query phrasing. The first one is
    # the planted wrong answer.
    registry = ["registry clerks do not list every birth .",
                "some ledgers are not kept near coast towns .",
                "older entries were not copied twice and some people were raised abroad ."]
    planted_answer = registry[0]
    docs, train, held = [], [], []
    phrasings = ["Where was {p} born?", "Tell me where {p} was born?", "{p} was born where?"]
    for i, p in enumerate(people):
        text = f"{p} was born in {home} ."
        docs.append({"id": f"p{i:02d}", "title": p, "text": text})
        for k, ph in enumerate(phrasings):
            train.append({"id": f"t{i:02d}{k}", "query": ph.format(p=p.title()),
                          "reference": text, "biased": planted_answer})
        held.append({"id": f"h{i:02d}", "query": f"What is the birthplace of {p.title()}?",
                     "reference": text})
    for i, (p, c) in enumerate(zip(extra_people, extra_places)):
        docs.append({"id": f"x{i:03d}", "title": p, "text": f"{p} was born in {c} ."})
    for i, text in enumerate(registry):
        docs.append({"id": f"r{i:02d}", "title": "registry", "text": text})
    write_jsonl(os.path.join(out, "corpus.jsonl"), docs)
    write_jsonl(os.path.join(out, "train.jsonl"), train)
    write_jsonl(os.path.join(out, "heldout.jsonl"), held)
    all_places = [home] + extra_places[:-1]
    write_json(os.path.join(out, "rules.json"), {
        "format_version": 1,
        "entity_swap": [[all_places[i], all_places[i + 1]] for i in range(0, len(all_places), 2)],
        "negation_flip": [["was born", "was not born"]],
    })
    write_json(os.path.join(out, "synonyms.json"), {"format_version": 1,
                                                          "synonyms": {"born": ["raised"], "in": ["near"]}})


if __name__ == "__main__":
    os.makedirs(ROOT, exist_ok=True)
    main_corpus()
    planted()
