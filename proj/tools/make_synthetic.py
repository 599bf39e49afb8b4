#!/usr/bin/env python3
"""Generate the bundled synthetic corpora under data/.

data/overfit  two domains, 50 utterances, 6 slot types, 2 of them unseen.
data/mini     three source domains and one target, 300 utterances, with a
              small clustered embedding file in which every slot's value
              words and description words sit around a shared centre.

Output is a pure function of the seed.
"""

import argparse
import math
import pathlib
import random

WORD_DIM = 16


def write_conll(path, domain, utterances):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# domain: {domain}\n")
        for tokens in utterances:
            for word, tag in tokens:
                f.write(f"{word}\t{tag}\n")
            f.write("\n")


def realise(template, values, rng):
    """template: list of plain words and {slot} placeholders."""
    out = []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            slot = piece[1:-1]
            words = rng.choice(values[slot]).split()
            out.append((words[0], f"B-{slot}"))
            out.extend((w, f"I-{slot}") for w in words[1:])
        else:
            out.append((piece, "O"))
    return out


def sample(templates, values, count, rng):
    return [realise(rng.choice(templates), values, rng) for _ in range(count)]


OVERFIT = {
    "travel": {
        "templates": [
            "fly to {city} on {date}",
            "book {airline} to {city}",
            "i want a {seat_type} seat on {airline}",
            "get me to {city} {date} in {seat_type}",
            "{airline} flights on {date}",
        ],
        "values": {
            "city": ["paris", "tokyo", "new york", "lima"],
            "date": ["monday", "tomorrow", "next friday"],
            "airline": ["delta", "qantas", "air canada"],
            "seat_type": ["window", "aisle", "business class"],
        },
        "count": 40,
    },
    "weather": {
        "templates": [
            "is it {condition} in {city}",
            "show {city} forecast in {temperature_unit}",
            "will it be {condition} {date}",
            "temperature in {temperature_unit} for {city} {date}",
        ],
        "values": {
            "city": ["paris", "oslo", "cairo"],
            "date": ["tomorrow", "sunday"],
            "condition": ["rainy", "sunny", "foggy"],
            "temperature_unit": ["celsius", "fahrenheit", "kelvin"],
        },
        "count": 10,
    },
}

MINI = {
    "book_flight": {
        "templates": [
            "book a flight to {city} on {date}",
            "find {airline} flights to {city}",
            "i need a {seat_class} ticket to {city}",
            "fly me to {city} {date} with {airline}",
            "any {seat_class} seats on {airline} {date}",
            "show flights from {city} on {date} in {seat_class}",
        ],
        "values": {
            "city": ["paris", "tokyo", "new york", "lima", "berlin", "sydney", "cairo", "oslo"],
            "date": ["monday", "tomorrow", "next friday", "tonight", "this weekend", "june fifth"],
            "airline": ["delta", "qantas", "air canada", "lufthansa", "emirates", "united"],
            "seat_class": ["economy", "business", "first class", "premium economy"],
        },
        "count": 80,
    },
    "play_music": {
        "templates": [
            "play {song} by {artist}",
            "add {song} to {playlist}",
            "put on some {genre} from {artist}",
            "play my {playlist} playlist",
            "i want to hear {genre} music",
            "queue {artist} in {playlist}",
        ],
        "values": {
            "artist": ["adele", "drake", "miles davis", "bjork", "queen", "nirvana"],
            "song": ["hello", "yesterday", "let it be", "halo", "roxanne", "jolene"],
            "playlist": ["workout", "chill mix", "road trip", "morning", "focus"],
            "genre": ["jazz", "rock", "hip hop", "classical", "reggae", "blues"],
        },
        "count": 80,
    },
    "find_restaurant": {
        "templates": [
            "find a {cuisine} place in {city}",
            "book a table for {party_size} {date}",
            "reserve {cuisine} for {party_size} in {city}",
            "any {cuisine} restaurants open {date}",
            "table for {party_size} in {city} on {date}",
        ],
        "values": {
            "cuisine": ["sushi", "pizza", "thai", "tacos", "curry", "ramen"],
            "city": ["paris", "tokyo", "lima", "berlin", "oslo", "rome"],
            "date": ["tomorrow", "tonight", "monday", "this weekend", "sunday"],
            "party_size": ["two", "four", "six people", "three", "eight"],
        },
        "count": 80,
    },
    "get_weather": {
        "templates": [
            "will it be {condition} in {city} {date}",
            "show the forecast for {city} in {temperature_unit}",
            "is it {condition} {date}",
            "temperature in {city} in {temperature_unit}",
            "what is the weather in {city} {date}",
            "tell me if it gets {condition} in {city}",
        ],
        "values": {
            "city": ["paris", "oslo", "cairo", "rome", "madrid", "tokyo"],
            "date": ["tomorrow", "sunday", "tonight", "monday", "next friday"],
            "condition": ["rainy", "sunny", "foggy", "snowy", "stormy", "cloudy"],
            "temperature_unit": ["celsius", "fahrenheit", "kelvin", "degrees"],
        },
        "count": 60,
    },
}


def unit(rng, dim):
    v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def clustered_embeddings(blueprint, rng, spread=0.25):
    """Each slot gets a centre; its value words and label words scatter
    around it. Carrier words scatter around a shared centre."""
    centres = {}
    words = {}
    for domain in blueprint.values():
        for slot in domain["values"]:
            centres.setdefault(slot, unit(rng, WORD_DIM))
    carrier = unit(rng, WORD_DIM)

    def place(word, centre):
        if word not in words:
            words[word] = [c + rng.gauss(0.0, spread) for c in centre]

    for slot in sorted(centres):
        for piece in slot.split("_"):
            place(piece, centres[slot])
    for domain in blueprint.values():
        for slot, values in sorted(domain["values"].items()):
            for value in values:
                for w in value.split():
                    place(w, centres[slot])
    for domain in blueprint.values():
        for template in domain["templates"]:
            for piece in template.split():
                if not piece.startswith("{"):
                    place(piece, carrier)
    return words


def write_embeddings(path, words):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for word in sorted(words):
            f.write(word + " " + " ".join(f"{x:.6f}" for x in words[word]) + "\n")


def build(blueprint, out_dir, rng):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, domain in blueprint.items():
        utterances = sample(domain["templates"], domain["values"], domain["count"], rng)
        write_conll(out_dir / f"{name}.conll", name, utterances)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parent.parent / "data")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    build(OVERFIT, args.out / "overfit", rng)
    build(MINI, args.out / "mini", rng)
    write_embeddings(args.out / "mini_vectors.txt", clustered_embeddings(MINI, rng))


if __name__ == "__main__":
    main()
