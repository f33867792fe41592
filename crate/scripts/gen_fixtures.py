"""Regenerate the test fixtures in crates/core/tests/fixtures/.

    python3 scripts/gen_fixtures.py

Outputs are deterministic. Each name token owns a short opcode motif and
an integer constant, so function bodies carry evidence of their name's
tokens on top of random filler.

- corpus200.jsonl: 200 functions over 8 binaries, names built from 64 tokens.
- unseen_train.jsonl / unseen_test.jsonl: verb_noun names where every test
  name is absent from training but all its tokens occur there.
- lm_names.txt: 500 distinct multi-token names for the language model.
"""
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"

VERBS = """get set read write open close create destroy update parse load save
send receive find insert remove clear reset check""".split()
NOUNS = """file buffer list node tree table string socket window stream queue
cache header packet message config image color user session record token
event timer entry device path block page frame""".split()
MODIFIERS = "new next first last default current global local main raw safe fast async single".split()

MNEMONICS = """mov add sub xor and or shl shr sar cmp test jz jnz jmp call lea push
pop imul idiv inc dec neg not movzx movsx cmovz sete setne nop ret""".split()
FILLER = ["mov", "mov", "mov", "add", "cmp", "jz", "jnz", "push", "pop", "lea", "test", "call"]


def motif(token):
    r = random.Random("motif:" + token)
    return [r.choice(MNEMONICS) for _ in range(6)]


def constant(token):
    return random.Random("const:" + token).randrange(1 << 20, 1 << 30)


def body(rng, tokens):
    ops = []
    for t in tokens:
        ops += [rng.choice(FILLER) for _ in range(rng.randrange(2, 6))]
        ops += motif(t)
    ops += [rng.choice(FILLER) for _ in range(rng.randrange(2, 6))]
    ops.append("ret")
    return ops


def record(rng, binary, name, vaddr, tokens, peers):
    ops = body(rng, tokens)
    callees = sorted(set(rng.sample(peers, min(len(peers), rng.randrange(0, 3)))) - {name})
    return {
        "binary_id": binary,
        "name": name,
        "vaddr": vaddr,
        "size": 4 * len(ops),
        "opcodes": ops,
        "callers": [],
        "callees": callees,
        "dynamic_callees": rng.sample(["malloc", "free", "memcpy", "strlen", "printf"], rng.randrange(0, 3)),
        "constants": [constant(t) for t in tokens] + [rng.randrange(0, 64)],
        "cfg_nodes": 1 + ops.count("jz") + ops.count("jnz"),
        "cfg_edges": 2 * (ops.count("jz") + ops.count("jnz")),
    }


def binaries(rng, assignments):
    """assignments: binary id -> list of (name, tokens)."""
    out = []
    for binary, funcs in assignments.items():
        names = [n for n, _ in funcs]
        vaddr = 0x1000
        for name, tokens in funcs:
            rec = record(rng, binary, name, vaddr, tokens, names)
            vaddr += rec["size"] + 16
            out.append(rec)
    by_id = {(r["binary_id"], r["name"]): r for r in out}
    for r in out:
        for c in r["callees"]:
            by_id[(r["binary_id"], c)]["callers"].append(r["name"])
    for r in out:
        r["callers"].sort()
    return out


def write_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def corpus200(rng):
    assert len(VERBS) + len(NOUNS) + len(MODIFIERS) == 64
    assignments = {}
    for b in range(8):
        funcs = {}
        while len(funcs) < 25:
            tokens = [rng.choice(VERBS)]
            if rng.random() < 0.4:
                tokens.append(rng.choice(MODIFIERS))
            tokens.append(rng.choice(NOUNS))
            funcs.setdefault("_".join(tokens), tokens)
        assignments[f"bin{b}"] = sorted(funcs.items())
    return binaries(rng, assignments)


def unseen(rng):
    verbs, nouns = VERBS[:6], NOUNS[:8]
    combos = [(v, n) for v in verbs for n in nouns]
    rng.shuffle(combos)
    # Latin-square choice of test combos keeps every token in training.
    test = [(verbs[i % 6], nouns[(i * 5 + i // 6) % 8]) for i in range(12)]
    train = [c for c in combos if c not in test]
    assert all(any(v == tv for v, _ in train) and any(n == tn for _, n in train) for tv, tn in test)
    train_assign = {f"lib{b}": [] for b in range(6)}
    for i, c in enumerate(train):
        for j in range(3):
            train_assign[f"lib{(i + 2 * j) % 6}"].append(("_".join(c), list(c)))
    test_assign = {"app0": [("_".join(c), list(c)) for c in test], "app1": [("_".join(c), list(c)) for c in test]}
    for d in (train_assign, test_assign):
        for k in d:
            d[k] = sorted(dict(d[k]).items())
    return binaries(rng, train_assign), binaries(rng, test_assign)


LM_PREFIXES = "net file mem str list buf hash xml json http gui db".split()
LM_VERBS = VERBS + "alloc free copy move append push pop sort merge split join lock unlock start stop run".split()
LM_NOUNS = NOUNS + "map key value item name size count data text line char byte thread mutex lock".split()
LM_ADJ = "empty valid open ready full dirty visible active enabled".split()


def lm_names(rng):
    names = set()
    while len(names) < 500:
        form = rng.randrange(6)
        v, n, a = rng.choice(LM_VERBS), rng.choice(LM_NOUNS), rng.choice(LM_ADJ)
        if form == 0:
            parts = [v, n]
        elif form == 1:
            parts = [v, rng.choice(MODIFIERS), n]
        elif form == 2:
            parts = [rng.choice(LM_PREFIXES), v, n]
        elif form == 3:
            parts = ["is", n, a]
        elif form == 4:
            parts = [n, v]
        else:
            parts = [rng.choice(LM_PREFIXES), n, v]
        if len(set(parts)) == len(parts):
            names.add("_".join(parts))
    return sorted(names)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20261019)
    write_jsonl(OUT / "corpus200.jsonl", corpus200(rng))
    train, test = unseen(rng)
    write_jsonl(OUT / "unseen_train.jsonl", train)
    write_jsonl(OUT / "unseen_test.jsonl", test)
    (OUT / "lm_names.txt").write_text("\n".join(lm_names(rng)) + "\n")


if __name__ == "__main__":
    main()
