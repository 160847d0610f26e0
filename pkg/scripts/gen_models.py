#!/usr/bin/env python3
"""Regenerate the bundled case-study models in src/raresplit/models/."""
from __future__ import annotations

import argparse
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "raresplit" / "models"


def leader(n: int = 20, k: int = 6) -> str:
    vs = [f"v{i}" for i in range(1, n + 1)]
    out = [
        f"// Synchronous leader election: {n} processes, {k} choices.",
        "// A round takes n+1 steps: every process draws a value, the values",
        "// circulate for n-1 steps (abstracted to the round counter), then a",
        "// leader is elected if some value was drawn by exactly one process.",
        "// c = n+1 marks an elected leader.",
        f"const int N = {n};",
        f"const int K = {k};",
        "",
    ]
    out += [f"{v} : [0..K] init 0;" for v in vs]
    out += ["c : [0..N+1] init 0;", ""]
    draws = " + ".join(f"1/K:(VAR'={j})" for j in range(1, k + 1))
    blocks = " ".join("{" + draws.replace("VAR", v) + "}" for v in vs)
    out.append(f"[draw] c = 0 -> {blocks} {{(c'=1)}};")
    out.append("[pass] c > 0 & c < N -> (c'=c+1);")
    out.append("[check] c = N -> (c' = \"unique\" ? N+1 : 0);")
    out.append("[done] c = N+1 -> true;")
    out.append("")
    for j in range(1, k + 1):
        cnt = " + ".join(f"({v}={j} ? 1 : 0)" for v in vs)
        out.append(f"label \"once{j}\" = {cnt} = 1;")
    out.append("label \"unique\" = " + " | ".join(f"\"once{j}\"" for j in range(1, k + 1)) + ";")
    out.append("label \"elected\" = c = N+1;")
    return "\n".join(out) + "\n"


def counters(n: int = 10, top: int = 10) -> str:
    cs = [f"c{i}" for i in range(1, n + 1)]
    out = [
        f"// {n} dependent counters with maximum {top}.  A scheduled counter either",
        "// increments or resets to zero; the odds depend on its ring neighbour.",
        f"const int M = {top};",
        "const double UP = 0.73;    // counter not above its neighbour",
        "const double DOWN = 0.53;  // counter above its neighbour",
        "const double KEEP = 0.985; // a full counter stays full",
        "",
    ]
    out += [f"{c} : [0..M] init 0;" for c in cs]
    out.append("")
    for i, c in enumerate(cs):
        nb = cs[(i + 1) % n]
        out.append(f"[] {c} < M & {c} <= {nb} -> UP:({c}'={c}+1) + 1-UP:({c}'=0);")
        out.append(f"[] {c} < M & {c} > {nb} -> DOWN:({c}'={c}+1) + 1-DOWN:({c}'=0);")
        out.append(f"[] {c} = M -> KEEP:({c}'=M) + 1-KEEP:({c}'=0);")
    out.append("")
    out.append("label \"init\" = " + " & ".join(f"{c}=0" for c in cs) + ";")
    out.append("label \"complete\" = " + " & ".join(f"{c}=M" for c in cs) + ";")
    return "\n".join(out) + "\n"


def philosophers(n: int = 150) -> str:
    out = [
        f"// Randomised dining philosophers, {n} at a round table.",
        "// s: 0 think, 1 hungry, 2 side chosen, 3 first fork held, 4 both forks, 5 eat.",
        "// b: false takes the left fork first, true the right one.",
        "const double HUNGRY = 0.5;",
        "const double DONE = 0.5;",
        "",
    ]
    for i in range(n):
        out.append(f"s{i} : [0..5] init 0;")
        out.append(f"b{i} : bool init false;")
    out.append("")

    def holds_left(i):
        return f"(s{i}=3 & !b{i} | s{i}>=4)"

    def holds_right(i):
        return f"(s{i}=3 & b{i} | s{i}>=4)"

    for i in range(n):
        left_free = f"!{holds_right((i - 1) % n)}"
        right_free = f"!{holds_left((i + 1) % n)}"
        first = f"(b{i} ? {right_free} : {left_free})"
        second = f"(b{i} ? {left_free} : {right_free})"
        out.append(f"[] s{i}=0 -> HUNGRY:(s{i}'=1) + 1-HUNGRY:(s{i}'=0);")
        out.append(f"[] s{i}=1 -> 0.5:(s{i}'=2)&(b{i}'=false) + 0.5:(s{i}'=2)&(b{i}'=true);")
        out.append(f"[] s{i}=2 & {first} -> (s{i}'=3);")
        out.append(f"[] s{i}=2 & !{first} -> true;")
        out.append(f"[] s{i}=3 & {second} -> (s{i}'=4);")
        out.append(f"[] s{i}=3 & !{second} -> (s{i}'=1);")
        out.append(f"[] s{i}=4 -> (s{i}'=5);")
        out.append(f"[] s{i}=5 -> DONE:(s{i}'=0) + 1-DONE:(s{i}'=5);")
    out.append("")
    out.append("label \"eats\" = s0 = 5;")
    return "\n".join(out) + "\n"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args(argv)
    for name, text in (("leader", leader()), ("counters", counters()),
                       ("philosophers", philosophers())):
        path = args.out / f"{name}.model"
        path.write_text(text)
        print(f"wrote {path} ({len(text.splitlines())} lines)")


if __name__ == "__main__":
    main()
