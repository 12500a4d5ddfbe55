#!/usr/bin/env python3
"""Regenerates the corpus, scripted-model files and benchmarks under fixtures/.

Deterministic: rerunning produces identical bytes. Gold results for the code
benchmarks are computed with sqlite3, independently of the C++ executors.
"""

import csv
import io
import json
import random
import sqlite3
from pathlib import Path

ROOT = Path(__file__).resolve().parent

# name -> (text header, numeric header, values in corpus, held-out values)
CORPUS = {
    "us_states": ("state", "seats", [
        "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado",
        "Connecticut", "Delaware", "Florida", "Georgia", "Hawaii", "Idaho",
        "Illinois", "Indiana", "Iowa", "Kansas", "Kentucky", "Louisiana", "Maine",
        "Maryland", "Massachusetts", "Michigan", "Minnesota", "Mississippi",
        "Missouri", "Montana", "Nebraska", "Nevada", "New Hampshire", "New Jersey",
        "New Mexico", "New York", "North Carolina", "North Dakota", "Ohio",
        "Oklahoma", "Oregon", "Pennsylvania", "Rhode Island", "South Carolina"],
        ["Vermont", "Virginia", "Wyoming", "Utah"]),
    "countries": ("country", "population_millions", [
        "Argentina", "Australia", "Austria", "Belgium", "Bolivia", "Brazil",
        "Bulgaria", "Canada", "Chile", "Colombia", "Croatia", "Denmark", "Ecuador",
        "Egypt", "Estonia", "Finland", "France", "Germany", "Greece", "Hungary",
        "Iceland", "India", "Indonesia", "Ireland", "Italy", "Japan", "Kenya",
        "Latvia", "Lithuania", "Mexico", "Morocco", "Netherlands", "Nigeria",
        "Norway", "Paraguay", "Peru", "Poland", "Portugal", "Romania", "Senegal",
        "Slovakia", "Slovenia", "Spain", "Sweden", "Switzerland"],
        ["Uruguay", "Vietnam", "Zambia", "Tunisia"]),
    "cities": ("city", "elevation_m", [
        "Amsterdam", "Athens", "Barcelona", "Berlin", "Bologna", "Bordeaux",
        "Bratislava", "Brussels", "Bucharest", "Budapest", "Copenhagen", "Dublin",
        "Edinburgh", "Florence", "Frankfurt", "Geneva", "Hamburg", "Helsinki",
        "Krakow", "Lisbon", "Ljubljana", "London", "Lyon", "Madrid", "Marseille",
        "Milan", "Munich", "Naples", "Oslo", "Paris", "Porto", "Prague", "Riga",
        "Rome", "Rotterdam", "Seville", "Stockholm", "Tallinn", "Valencia",
        "Vienna"],
        ["Warsaw", "Zagreb", "Zurich", "Vilnius"]),
    "football_clubs": ("club", "founded", [
        "Arsenal", "Aston Villa", "Barcelona", "Bayern Munich", "Benfica",
        "Borussia Dortmund", "Celtic", "Chelsea", "Everton", "Feyenoord",
        "Fiorentina", "Galatasaray", "Inter Milan", "Juventus", "Lazio",
        "Leicester City", "Liverpool", "Manchester City", "Manchester United",
        "Marseille", "Napoli", "Newcastle United", "Olympiacos", "Porto",
        "Rangers", "Real Madrid", "Roma", "Sevilla", "Sporting", "Tottenham",
        "Valencia", "Villarreal"],
        ["West Ham", "Wolverhampton", "Schalke", "Ajax"]),
    "elements": ("element", "atomic_number", [
        "Hydrogen", "Helium", "Lithium", "Beryllium", "Boron", "Carbon",
        "Nitrogen", "Oxygen", "Fluorine", "Neon", "Sodium", "Magnesium",
        "Aluminium", "Silicon", "Phosphorus", "Sulfur", "Chlorine", "Argon",
        "Potassium", "Calcium", "Scandium", "Titanium", "Vanadium", "Chromium",
        "Manganese", "Iron", "Cobalt", "Nickel", "Copper", "Zinc", "Gallium",
        "Germanium", "Arsenic", "Selenium", "Bromine", "Krypton"],
        ["Rubidium", "Strontium", "Yttrium", "Zirconium"]),
    "car_makers": ("maker", "founded", [
        "Alfa Romeo", "Aston Martin", "Audi", "Bentley", "BMW", "Bugatti",
        "Cadillac", "Chevrolet", "Chrysler", "Citroen", "Dodge", "Ferrari", "Fiat",
        "Ford", "Honda", "Hyundai", "Jaguar", "Jeep", "Kia", "Lamborghini",
        "Lancia", "Lexus", "Maserati", "Mazda", "Mercedes-Benz", "Mitsubishi",
        "Nissan", "Opel", "Peugeot", "Porsche", "Renault", "Saab"],
        ["Subaru", "Toyota", "Volvo", "Skoda"]),
    "languages": ("language", "speakers_millions", [
        "Arabic", "Bengali", "Bulgarian", "Catalan", "Croatian", "Czech",
        "Danish", "Dutch", "English", "Estonian", "Finnish", "French", "German",
        "Greek", "Gujarati", "Hebrew", "Hindi", "Hungarian", "Icelandic",
        "Indonesian", "Italian", "Japanese", "Korean", "Latvian", "Lithuanian",
        "Malay", "Marathi", "Norwegian", "Persian", "Polish", "Portuguese",
        "Punjabi", "Romanian", "Russian", "Serbian"],
        ["Swahili", "Tamil", "Turkish", "Ukrainian"]),
    "rivers": ("river", "length_km", [
        "Amazon", "Amur", "Arkansas", "Brahmaputra", "Colorado", "Columbia",
        "Congo", "Danube", "Dnieper", "Don", "Elbe", "Euphrates", "Ganges",
        "Indus", "Irrawaddy", "Lena", "Loire", "Mackenzie", "Mekong",
        "Mississippi", "Missouri", "Murray", "Niger", "Nile", "Ob", "Orinoco",
        "Parana", "Rhine", "Rhone", "Seine"],
        ["Tigris", "Volga", "Yangtze", "Zambezi"]),
    "painters": ("painter", "born", [
        "Botticelli", "Braque", "Bruegel", "Caravaggio", "Cezanne", "Chagall",
        "Constable", "Courbet", "Dali", "Degas", "Delacroix", "Durer", "El Greco",
        "Gauguin", "Giotto", "Goya", "Hals", "Hockney", "Hopper", "Kandinsky",
        "Klimt", "Magritte", "Manet", "Matisse", "Miro", "Modigliani", "Monet",
        "Munch", "Picasso", "Pollock", "Raphael", "Rembrandt"],
        ["Renoir", "Rothko", "Rubens", "Titian"]),
    "fruits": ("fruit", "calories", [
        "Apple", "Apricot", "Avocado", "Banana", "Blackberry", "Blueberry",
        "Cantaloupe", "Cherry", "Clementine", "Coconut", "Cranberry", "Date",
        "Elderberry", "Fig", "Gooseberry", "Grape", "Grapefruit", "Guava",
        "Kiwi", "Lemon", "Lime", "Lychee", "Mango", "Nectarine", "Orange",
        "Papaya", "Passion Fruit", "Peach", "Pear", "Persimmon", "Pineapple",
        "Plum", "Pomegranate", "Raspberry", "Strawberry"],
        ["Tangerine", "Watermelon", "Quince", "Mulberry"]),
}


def csv_text(headers, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def numeric_for(name, i, rng):
    if name in ("countries", "languages"):
        return f"{rng.uniform(1, 300):.1f}"
    if name == "elements":
        return str(i + 1)
    if name in ("football_clubs", "car_makers"):
        return str(rng.randint(1860, 1960))
    if name == "painters":
        return str(rng.randint(1260, 1940))
    return str(rng.randint(1, 2500))


def typo(word, rng):
    letters = [i for i, ch in enumerate(word) if ch.isalpha()]
    kind = rng.randrange(3)
    i = rng.choice(letters[1:-1] if len(letters) > 3 else letters)
    if kind == 0:
        return word[:i] + word[i + 1:]
    if kind == 1 and i + 1 < len(word) and word[i + 1].isalpha() and word[i] != word[i + 1]:
        return word[:i] + word[i + 1] + word[i] + word[i + 2:]
    return word[:i] + word[i] + word[i:]


def planted_typos(values, rng, count=8):
    out = []
    taken = {v.lower() for v in values}
    pool = list(values)
    rng.shuffle(pool)
    for v in pool:
        t = typo(v, rng)
        if t.lower() in taken or t == v:
            continue
        out.append(t)
        taken.add(t.lower())
        if len(out) == count:
            break
    return out


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def build_corpus_and_scripts():
    rng = random.Random(20240611)
    corpus_dir = ROOT / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    planted = {}
    for name, (text_h, num_h, values, held_out) in CORPUS.items():
        rows = [[v, numeric_for(name, i, rng)] for i, v in enumerate(values)]
        (corpus_dir / f"{name}.csv").write_text(csv_text([text_h, num_h], rows), encoding="utf-8")
        planted[name] = {"typos": planted_typos(values, rng), "decoys": held_out[:3]}

    write_json(ROOT / "scripts" / "planted.json", planted)

    gen_oracle, gen_adv, val_oracle, val_adv = [], [], [], []
    for name, p in planted.items():
        key = f"error_detection.generative|{name}|*"
        gen_oracle.append({"match": key, "answers": [json.dumps([t]) for t in p["typos"]]})
        # 7 planted errors plus 3 correct values presented as errors.
        gen_adv.append({"match": key,
                        "answers": [json.dumps([t]) for t in p["typos"][:7]] +
                                   [json.dumps([d]) for d in p["decoys"]]})
        ckey = f"error_detection.classification|{name}|*"
        for t in p["typos"]:
            entry = {"match": ckey, "contains_cell": t, "answer": json.dumps([t])}
            val_oracle.append(entry)
            val_adv.append(entry)
        for d in p["decoys"]:
            # Agrees with the wrong claim on one answer in eight; the pick
            # depends on the exact prompt, so permuted rounds disagree.
            val_adv.append({"match": ckey, "contains_cell": d,
                            "answers": [json.dumps([d])] + ["[]"] * 7})
    fallback = {"match": "error_detection.classification|*", "answer": "[]"}
    write_json(ROOT / "scripts" / "oracle.json",
               {"key_mode": "permutation_invariant", "entries": gen_oracle + val_oracle + [fallback]})
    write_json(ROOT / "scripts" / "adversarial.json",
               {"key_mode": "permutation_invariant", "entries": gen_adv + val_adv + [fallback]})


# ---- benchmarks ---------------------------------------------------------------

SALES = ("sales", ["region", "rep", "units", "price"], [
    ["North", "Ann", 12, 2.5], ["South", "Bob", 7, 3.0], ["North", "Cid", 20, 2.0],
    ["East", "Dee", 5, 4.25], ["South", "Eve", 9, 3.5], ["West", "Fay", 15, 1.75],
    ["East", "Gus", 11, 4.0], ["North", "Hal", 3, 2.25]])
TEAMS = ("teams", ["team", "league", "wins", "losses"], [
    ["Hawks", "East", 41, 41], ["Bulls", "Central", 45, 37], ["Celtics", "East", 57, 25],
    ["Suns", "West", 64, 18], ["Jazz", "West", 49, 33], ["Bucks", "Central", 58, 24],
    ["Knicks", "East", 37, 45]])
BOOKS = ("books", ["title", "author", "year", "pages"], [
    ["Dune", "Herbert", 1965, 412], ["Emma", "Austen", 1815, 474],
    ["Ulysses", "Joyce", 1922, 730], ["Beloved", "Morrison", 1987, 324],
    ["Persuasion", "Austen", 1817, 249], ["Dubliners", "Joyce", 1914, 152]])

NL2SQL = [
    (SALES, "How many sales records are there?", "SELECT COUNT(*) FROM t"),
    (SALES, "What is the total number of units sold?", "SELECT SUM(units) FROM t"),
    (SALES, "Which reps sold more than 10 units?", "SELECT rep FROM t WHERE units > 10"),
    (SALES, "How many units were sold per region?",
     "SELECT region, SUM(units) FROM t GROUP BY region"),
    (SALES, "Who sold the most units?", "SELECT rep FROM t ORDER BY units DESC LIMIT 1"),
    (SALES, "What is the average price in the North region?",
     "SELECT AVG(price) FROM t WHERE region = 'North'"),
    (TEAMS, "Which teams in the East have a winning record?",
     "SELECT team FROM t WHERE league = 'East' AND wins > losses"),
    (TEAMS, "What is the highest number of wins?", "SELECT MAX(wins) FROM t"),
    (TEAMS, "How many teams are in each league?",
     "SELECT league, COUNT(*) FROM t GROUP BY league"),
    (TEAMS, "List the teams ordered by losses, fewest first.",
     "SELECT team, losses FROM t ORDER BY losses ASC"),
    (BOOKS, "Which books were written by Austen?", "SELECT title FROM t WHERE author = 'Austen'"),
    (BOOKS, "How many distinct authors are there?", "SELECT COUNT(DISTINCT author) FROM t"),
    (BOOKS, "Which books have fewer than 300 pages or were published after 1950?",
     "SELECT title FROM t WHERE pages < 300 OR year > 1950"),
    (BOOKS, "What is the earliest publication year?", "SELECT MIN(year) FROM t"),
]

# (table, question, DSL gold program, equivalent SQL used only to compute gold)
NL2DSL = [
    (SALES, "How many sales records are there?", "count()", "SELECT COUNT(*) FROM t"),
    (SALES, "What is the total number of units sold?", "sum(units)", "SELECT SUM(units) FROM t"),
    (SALES, "Which reps sold more than 10 units?", "filter(units > 10) | project(rep)",
     "SELECT rep FROM t WHERE units > 10"),
    (SALES, "How many units were sold per region?", "group_by(region; sum(units))",
     "SELECT region, SUM(units) FROM t GROUP BY region"),
    (SALES, "Who sold the most units?", "top_by(units) | project(rep)",
     "SELECT rep FROM t ORDER BY units DESC LIMIT 1"),
    (SALES, "What is the average price in the North region?",
     "filter(region = 'North') | avg(price)", "SELECT AVG(price) FROM t WHERE region = 'North'"),
    (TEAMS, "What is the highest number of wins?", "max(wins)", "SELECT MAX(wins) FROM t"),
    (TEAMS, "How many teams are in each league?", "group_by(league; count())",
     "SELECT league, COUNT(*) FROM t GROUP BY league"),
    (TEAMS, "List the teams ordered by losses, fewest first.",
     "sort_by(losses) | project(team, losses)", "SELECT team, losses FROM t ORDER BY losses ASC"),
    (BOOKS, "Which books were written by Joyce?",
     "filter(author = 'Joyce') | project(title)", "SELECT title FROM t WHERE author = 'Joyce'"),
    (BOOKS, "What are the two longest books?", "sort_by(pages desc) | limit(2) | project(title)",
     "SELECT title FROM t ORDER BY pages DESC LIMIT 2"),
    (BOOKS, "What is the earliest publication year?", "min(year)", "SELECT MIN(year) FROM t"),
]


def fmt_cell(v):
    if v is None:
        return None
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def sqlite_result(table, sql):
    name, headers, rows = table
    con = sqlite3.connect(":memory:")
    cols = ", ".join(f'"{h}"' for h in headers)
    con.execute(f"CREATE TABLE t ({cols})")
    con.executemany(f"INSERT INTO t VALUES ({', '.join('?' * len(headers))})", rows)
    cur = con.execute(sql)
    out_headers = [d[0] for d in cur.description]
    out_rows = [[fmt_cell(v) for v in r] for r in cur.fetchall()]
    con.close()
    return {"headers": out_headers, "rows": out_rows}


def table_json(table):
    _, headers, rows = table
    return {"headers": headers, "rows": [[fmt_cell(v) for v in r] for r in rows]}


def write_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def build_benchmarks():
    bench = ROOT / "benchmarks"
    write_jsonl(bench / "nl2sql.jsonl", [
        {"id": f"nl2sql-{i + 1:02d}", "language": "sql-subset", "question": q,
         "table": table_json(tb), "gold_result": sqlite_result(tb, sql), "gold_code": sql}
        for i, (tb, q, sql) in enumerate(NL2SQL)])
    write_jsonl(bench / "nl2dsl.jsonl", [
        {"id": f"nl2dsl-{i + 1:02d}", "language": "table-dsl", "question": q,
         "table": table_json(tb), "gold_result": sqlite_result(tb, sql), "gold_code": dsl}
        for i, (tb, q, dsl, sql) in enumerate(NL2DSL)])

    rng = random.Random(7)
    ed = []
    for i, (name, (text_h, _, values, _)) in enumerate(CORPUS.items()):
        cells = rng.sample(values, 12)
        errors = []
        if i % 4 != 3:
            for t in planted_typos([v for v in values if v not in cells], rng, 1 + i % 2):
                errors.append(t)
                cells.insert(rng.randrange(len(cells) + 1), t)
        ed.append({"id": f"ed-{i + 1:02d}", "column": {"header": text_h, "cells": cells},
                   "gold_errors": errors})
    write_jsonl(bench / "error_detection.jsonl", ed)

    sm = [
        (["name", "city", "phone"], ["full_name", "town", "telephone"],
         [["Ann Lee", "Oslo", "555-0101"], ["Bo Kim", "Riga", "555-0102"]],
         [["Ann Lee", "Oslo", "555-0101"], ["Cy Ng", "Lyon", "555-0199"]],
         [["name", "full_name"], ["city", "town"], ["phone", "telephone"]]),
        (["sku", "price", "stock"], ["product_code", "unit_cost", "qty_on_hand"],
         [["A-1", "9.99", "14"], ["B-2", "4.50", "3"]],
         [["A-1", "9.99", "12"], ["C-3", "7.25", "40"]],
         [["sku", "product_code"], ["price", "unit_cost"], ["stock", "qty_on_hand"]]),
        (["title", "director", "year"], ["film", "release_year", "rating"],
         [["Alien", "Scott", "1979"], ["Heat", "Mann", "1995"]],
         [["Alien", "1979", "8.5"], ["Jaws", "1975", "8.1"]],
         [["title", "film"], ["year", "release_year"]]),
        (["country", "capital"], ["nation", "capital_city", "currency"],
         [["France", "Paris"], ["Peru", "Lima"]],
         [["France", "Paris", "EUR"], ["Chile", "Santiago", "CLP"]],
         [["country", "nation"], ["capital", "capital_city"]]),
        (["employee", "dept", "salary"], ["staff_member", "department", "annual_pay"],
         [["Ann", "Sales", "50000"], ["Raj", "IT", "65000"]],
         [["Ann", "Sales", "50000"], ["Li", "HR", "48000"]],
         [["employee", "staff_member"], ["dept", "department"], ["salary", "annual_pay"]]),
        (["sensor", "reading"], ["author", "genre"],
         [["s1", "0.4"], ["s2", "0.9"]],
         [["Austen", "novel"], ["Keats", "poetry"]],
         []),
        (["isbn", "title", "pages"], ["book_id", "book_title", "page_count"],
         [["978-0", "Dune", "412"], ["978-1", "Emma", "474"]],
         [["978-0", "Dune", "412"], ["978-2", "Ulysses", "730"]],
         [["isbn", "book_id"], ["title", "book_title"], ["pages", "page_count"]]),
        (["team", "wins"], ["club", "victories", "stadium"],
         [["Hawks", "41"], ["Jazz", "49"]],
         [["Hawks", "41", "State Farm"], ["Suns", "64", "Footprint"]],
         [["team", "club"], ["wins", "victories"]]),
    ]
    write_jsonl(bench / "schema_matching.jsonl", [
        {"id": f"sm-{i + 1:02d}", "table_a": {"headers": ha, "rows": ra},
         "table_b": {"headers": hb, "rows": rb}, "gold_mappings": gold}
        for i, (ha, hb, ra, rb, gold) in enumerate(sm)])


if __name__ == "__main__":
    build_corpus_and_scripts()
    build_benchmarks()
