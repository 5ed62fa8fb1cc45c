"""Writes crates/core/assets/vocab.json: graded synonym clusters around each object class."""
import json
import os

import numpy as np

DIM = 32
rng = np.random.default_rng(20240611)

# class word -> [(word, similarity to the class word)]
CLUSTERS = {
    "banana": [("bananas", 0.95), ("plantain", 0.85), ("yellow", 0.7), ("peel", 0.6), ("fruit", 0.55),
               ("ripe", 0.45), ("snack", 0.35), ("tropical", 0.3), ("bunch", 0.25)],
    "mug": [("mugs", 0.95), ("cup", 0.9), ("teacup", 0.8), ("coffee", 0.65), ("tea", 0.55),
            ("drink", 0.45), ("ceramic", 0.35), ("handle", 0.3), ("beverage", 0.25)],
    "scissors": [("shears", 0.92), ("snips", 0.85), ("clippers", 0.75), ("cutter", 0.65), ("blade", 0.5),
                 ("cutting", 0.45), ("craft", 0.35), ("tool", 0.3), ("sharp", 0.25)],
    "bowl": [("bowls", 0.95), ("dish", 0.85), ("basin", 0.75), ("soup", 0.6), ("cereal", 0.5),
             ("salad", 0.45), ("porcelain", 0.35), ("round", 0.3), ("serving", 0.25)],
    "apple": [("apples", 0.95), ("pomme", 0.88), ("granny", 0.75), ("red", 0.65), ("orchard", 0.5),
              ("crisp", 0.45), ("juicy", 0.35), ("core", 0.3), ("healthy", 0.25)],
    "box": [("carton", 0.9), ("crate", 0.85), ("package", 0.7), ("cardboard", 0.6)],
    "shelf": [("shelves", 0.95), ("rack", 0.85), ("bookcase", 0.75), ("cabinet", 0.6)],
    "wall": [("walls", 0.95), ("partition", 0.8), ("barrier", 0.65)],
}


def unit(v):
    return v / np.linalg.norm(v)


def blend(base, sim):
    noise = rng.standard_normal(DIM)
    noise -= noise.dot(base) * base
    return unit(sim * base + np.sqrt(1.0 - sim * sim) * unit(noise))


# "fruit" words share a common direction so banana and apple sit closer than banana and mug.
fruit = unit(rng.standard_normal(DIM))
table = {}
for word, syns in CLUSTERS.items():
    base = unit(rng.standard_normal(DIM))
    if word in ("banana", "apple"):
        base = unit(0.8 * base + 0.35 * fruit)
    table[word] = base
    for syn, sim in syns:
        if syn in table:
            continue
        table[syn] = blend(base, sim)
for w in ("the", "a", "an", "find", "look", "for", "locate", "object", "on", "table", "desk", "please", "me"):
    table[w] = unit(rng.standard_normal(DIM)) * 1.0

out = {w: [round(float(x), 8) for x in unit(v)] for w, v in sorted(table.items())}
out["hash_seed"] = 17
path = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "assets", "vocab.json")
with open(path, "w") as f:
    json.dump(out, f, indent=0)
    f.write("\n")
