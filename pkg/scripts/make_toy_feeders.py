"""Regenerate the bundled feeders (toy2, toy4, toy8, desk7, ieee123)."""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "neurovvo" / "data"

# overhead line, ohm per mile (self and mutual terms)
LINE = {"aa": {"r": 0.4576, "x": 1.078}, "bb": {"r": 0.4666, "x": 1.0482}, "cc": {"r": 0.4615, "x": 1.0651},
        "ab": {"r": 0.156, "x": 0.5017}, "bc": {"r": 0.1535, "x": 0.3849}, "ac": {"r": 0.158, "x": 0.4236}}
XFMR = {"aa": {"r": 0.01, "x": 0.06}, "bb": {"r": 0.01, "x": 0.06}, "cc": {"r": 0.01, "x": 0.06}}


def load(p, q, skew=(1.0, 1.0, 1.0)):
    return {ph: {"p": p * s, "q": q * s} for ph, s in zip("abc", skew)}


def branch(fb, tb, length, **kw):
    doc = {"id": f"{fb}-{tb}", "from": fb, "to": tb, "phases": "abc", "impedance": LINE, "length": length,
           "s_max": 2000.0}
    doc.update(kw)
    return doc


def toy2():
    return {
        "name": "toy2",
        "base": {"kva": 1000.0, "kv": 4.16, "dt_hours": 1.0},
        "buses": [{"id": "1", "phases": "a", "kind": "substation"},
                  {"id": "2", "phases": "a", "load": {"a": {"p": 100.0, "q": 50.0}}}],
        "branches": [{"id": "1-2", "from": "1", "to": "2", "phases": "a",
                      "impedance": {"aa": {"r": 0.5, "x": 1.0}}, "s_max": 1000.0}],
        "ders": [],
        "limits": {"d1": 1, "d2": 1},
    }


def toy4():
    return {
        "name": "toy4",
        "base": {"kva": 1000.0, "kv": 4.16, "dt_hours": 1.0},
        "buses": [
            {"id": "1", "phases": "abc", "kind": "substation"},
            {"id": "2", "phases": "abc", "kind": "junction"},
            {"id": "3", "phases": "abc", "load": load(60.0, 25.0, (1.0, 0.9, 1.1)), "monitored": True},
            {"id": "4", "phases": "abc", "load": load(40.0, 15.0)},
        ],
        "branches": [
            {"id": "1-2", "from": "1", "to": "2", "phases": "abc", "impedance": XFMR, "s_max": 3000.0,
             "oltc": {"tap_ratios": [0.975, 1.0, 1.025], "max_daily_ops": 2, "initial_tap": 2}},
            branch("2", "3", 1.5),
            branch("3", "4", 1.0, switchable=True, initial_closed=True, s_max=300.0),
            branch("2", "4", 2.5, switchable=True, initial_closed=False, s_max=300.0),
        ],
        "ders": [{"bus": "4", "capacity": 300.0}, {"bus": "3", "capacity": 200.0}],
        "limits": {"d1": 1, "d2": 1, "switch_max": 2},
    }


def toy8():
    return {
        "name": "toy8",
        "base": {"kva": 1000.0, "kv": 4.16, "dt_hours": 1.0},
        "buses": [
            {"id": "0", "phases": "abc", "kind": "substation"},
            {"id": "1", "phases": "abc", "kind": "junction"},
            {"id": "2", "phases": "abc", "load": load(80.0, 30.0)},
            {"id": "3", "phases": "abc", "load": load(60.0, 20.0, (1.1, 0.9, 1.0)), "monitored": True},
            {"id": "4", "phases": "abc", "load": load(50.0, 20.0)},
            {"id": "5", "phases": "abc", "load": load(40.0, 15.0, (0.9, 1.0, 1.1)), "monitored": True},
            {"id": "6", "phases": "abc", "load": load(30.0, 10.0)},
            {"id": "7", "phases": "abc", "load": load(30.0, 10.0)},
        ],
        "branches": [
            {"id": "0-1", "from": "0", "to": "1", "phases": "abc", "impedance": XFMR, "s_max": 3000.0,
             "oltc": {"tap_ratios": [0.975, 0.9875, 1.0, 1.0125, 1.025], "max_daily_ops": 3, "initial_tap": 3}},
            branch("1", "2", 0.6),
            branch("2", "3", 0.8),
            branch("3", "4", 0.8, switchable=True, initial_closed=True, s_max=400.0),
            branch("1", "5", 0.7),
            branch("5", "6", 0.9),
            branch("6", "7", 0.6),
            branch("4", "7", 0.9, switchable=True, initial_closed=False, s_max=400.0),
        ],
        "ders": [{"bus": "4", "capacity": 350.0}, {"bus": "7", "capacity": 300.0}, {"bus": "3", "capacity": 150.0}],
        "limits": {"d1": 2, "d2": 1, "switch_max": 2},
    }


def desk7():
    skew = [(1.0, 1.0, 1.0), (1.1, 0.95, 0.95), (0.9, 1.05, 1.05), (1.0, 1.1, 0.9)]
    loads = {"2": (120, 45), "3": (90, 30), "4": (80, 30), "5": (100, 35), "6": (80, 30)}
    monitored = {"4"}
    buses = [{"id": "0", "phases": "abc", "kind": "substation"}, {"id": "1", "phases": "abc", "kind": "junction"}]
    for k, (bid, (p, q)) in enumerate(loads.items()):
        buses.append({"id": bid, "phases": "abc", "load": load(p, q, skew[k % 4]), "monitored": bid in monitored})
    branches = [
        {"id": "0-1", "from": "0", "to": "1", "phases": "abc", "impedance": XFMR, "s_max": 5000.0,
         "oltc": {"tap_ratios": [0.9625, 0.975, 0.9875, 1.0, 1.0125], "max_daily_ops": 4, "initial_tap": 4}},
        branch("1", "2", 1.5), branch("2", "3", 2.0),
        branch("3", "4", 2.1, switchable=True, initial_closed=True),
        branch("2", "5", 1.8), branch("5", "6", 2.0),
        branch("4", "6", 1.8, switchable=True, initial_closed=False),
    ]
    ders = [{"bus": "3", "capacity": 700.0}, {"bus": "4", "capacity": 980.0}, {"bus": "6", "capacity": 840.0}]
    return {"name": "desk7", "base": {"kva": 1000.0, "kv": 4.16, "dt_hours": 1.0}, "buses": buses,
            "branches": branches, "ders": ders, "limits": {"d1": 8, "d2": 4, "switch_max": 4}}


def ieee123():
    """Synthetic 123-bus feeder shaped like the IEEE test case.

    A seeded random tree with three-phase trunk buses and single-phase
    lateral leaves, four regulators (one at the substation), six open tie
    switches and fourteen PV units.
    """
    rng = random.Random(123)
    n = 123
    parent = {}
    depth = {1: 1}
    for i in range(2, n):
        lo = max(1, i - 6)
        parent[i] = rng.randint(lo, i - 1)
        depth[i] = depth[parent[i]] + 1
    children = {i: [] for i in range(1, n)}
    for c, p in parent.items():
        children[p].append(c)
    leaves = [i for i in range(2, n) if not children[i]]
    single = {b: "abc"[k % 3] for k, b in enumerate(sorted(leaves)[::2])}
    phases = {i: single.get(i, "abc") for i in range(1, n)}
    buses = [{"id": "0", "phases": "abc", "kind": "substation"}]
    for i in range(1, n):
        ph = phases[i]
        p = rng.choice((20.0, 30.0, 40.0))
        doc = {"id": str(i), "phases": ph, "load": {f: {"p": p, "q": 0.4 * p} for f in ph},
               "monitored": i % 10 == 0 and ph == "abc"}
        buses.append(doc)
    reg_kw = {"phases": "abc", "impedance": XFMR, "s_max": 5000.0,
              "oltc": {"tap_ratios": [0.975, 0.9875, 1.0, 1.0125, 1.025], "max_daily_ops": 4, "initial_tap": 3}}
    branches = [{"id": "0-1", "from": "0", "to": "1", **reg_kw}]
    trunk = [i for i in range(2, n) if phases[i] == "abc" and phases[parent[i]] == "abc"]
    regs = set(sorted(trunk, key=lambda i: (abs(depth[i] - 6), i))[:3])
    for c in range(2, n):
        fb, tb = str(parent[c]), str(c)
        if c in regs:
            branches.append({"id": f"{fb}-{tb}", "from": fb, "to": tb, **reg_kw})
        else:
            ph = phases[c]
            imp = LINE if ph == "abc" else {ph * 2: LINE["aa"]}
            branches.append({"id": f"{fb}-{tb}", "from": fb, "to": tb, "phases": ph, "impedance": imp,
                             "length": round(rng.uniform(0.05, 0.3), 3), "s_max": 2000.0})
    three = [i for i in range(2, n) if phases[i] == "abc"]
    ties = 0
    while ties < 6:
        a, b = sorted(rng.sample(three, 2))
        if parent.get(b) == a or parent.get(a) == b or any(br["id"] == f"{a}-{b}" for br in branches):
            continue
        branches.append(branch(str(a), str(b), round(rng.uniform(0.2, 0.6), 3), switchable=True,
                               initial_closed=False, s_max=800.0))
        ties += 1
    pv_buses = sorted(rng.sample([i for i in three if i not in regs], 14))
    ders = [{"bus": str(b), "capacity": 150.0} for b in pv_buses]
    return {"name": "ieee123", "base": {"kva": 5000.0, "kv": 4.16, "dt_hours": 1.0}, "buses": buses,
            "branches": branches, "ders": ders, "limits": {"d1": 8, "d2": 4, "switch_max": 4}}


if __name__ == "__main__":
    for fn in (toy2, toy4, toy8, desk7, ieee123):
        doc = fn()
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", doc["name"])
