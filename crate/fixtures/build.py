#!/usr/bin/env python3
"""Rebuild the golden fixture corpus.

For every fixtures/<name>/src/main.{cpp,c} this produces:

  bin/<name>             stripped binary (input to recovery)
  bin/<name>.unstripped  twin with symbols (source of the name map)
  class.dump             the compiler's class-hierarchy dump (C++ only)
  gt.json                canonical ground truth derived from the dump
  map.json               primary address point -> class name

Usage: python3 fixtures/build.py [--cxx g++] [--opt -O0] [name ...]
"""

import argparse
import glob
import json
import os
import re
import shutil
import subprocess
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))

NODE_RE = re.compile(r"^(\S+) \(0x[0-9a-fx]+\) (?:(-?\d+)( virtual)?|(alternative-path))\s*$")
VPTR_RE = re.compile(r"vptr=\(\(& (\S+)::(_ZTV\S+)\) \+ (\d+)\)")


def parse_dump(text):
    """Return {class: {"nodes": [(name, depth, virtual)], "vptr": (sym, off)}}."""
    classes = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.startswith("Class "):
            i += 1
            continue
        name = line[len("Class "):].strip()
        i += 1
        nodes = []
        vptr = None
        while i < len(lines) and lines[i].strip() != "":
            cur = lines[i]
            m = NODE_RE.match(cur)
            if m:
                depth = None
                # depth comes from the indentation of the node's attribute lines
                if i + 1 < len(lines):
                    nxt = lines[i + 1]
                    stripped = nxt.lstrip(" ")
                    if nxt and not NODE_RE.match(nxt) and nxt.startswith("    "):
                        depth = (len(nxt) - len(stripped) - 4) // 2
                is_virtual = bool(m.group(3)) or bool(m.group(4))
                nodes.append((m.group(1), depth, is_virtual, bool(m.group(4))))
                if len(nodes) == 1 and i + 1 < len(lines):
                    vm = VPTR_RE.search(lines[i + 1])
                    if vm and vm.group(1) == name:
                        vptr = (vm.group(2), int(vm.group(3)))
            i += 1
        classes[name] = {"nodes": nodes, "vptr": vptr}
    return classes


def ground_truth(classes):
    virt = {}
    for name, info in classes.items():
        virt[name] = sorted({n for (n, _, v, _) in info["nodes"][1:] if v})
    out = {}
    for name, info in classes.items():
        bases = {n for (n, _, _, _) in info["nodes"][1:]}
        direct = sorted(
            {n for (n, d, v, alt) in info["nodes"][1:] if d == 1 and not v and not alt}
        )
        inter = sorted(b for b in bases if virt.get(b))
        out[name] = {
            "virtual_bases": virt[name],
            "intermediate_bases": inter,
            "direct_bases": direct,
        }
    return out


def nm_symbols(path):
    res = subprocess.run(["nm", path], capture_output=True, text=True, check=True)
    syms = {}
    for line in res.stdout.splitlines():
        parts = line.split()
        if len(parts) == 3:
            syms[parts[2]] = int(parts[0], 16)
    return syms


def mangled(name):
    return f"{len(name)}{name}"


def build_one(fixture_dir, cxx, cc, opt):
    name = os.path.basename(fixture_dir)
    srcs = glob.glob(os.path.join(fixture_dir, "src", "main.*"))
    if not srcs:
        return
    src = srcs[0]
    is_cpp = src.endswith(".cpp")
    bindir = os.path.join(fixture_dir, "bin")
    os.makedirs(bindir, exist_ok=True)
    unstripped = os.path.join(bindir, name + ".unstripped")
    stripped = os.path.join(bindir, name)
    compiler = cxx if is_cpp else cc
    with tempfile.TemporaryDirectory() as tmp:
        cmd = [compiler, opt, "-o", unstripped, src]
        if is_cpp:
            cmd[1:1] = ["-fdump-lang-class", "-dumpdir", tmp + "/"]
        subprocess.run(cmd, check=True, cwd=tmp)
        dumps = glob.glob(os.path.join(tmp, "*.class"))
        dump_text = open(dumps[0]).read() if dumps else ""
    shutil.copy(unstripped, stripped)
    subprocess.run(["strip", "--strip-all", stripped], check=True)

    gt = {"classes": [], "removed": []}
    idmap = {}
    if is_cpp:
        with open(os.path.join(fixture_dir, "class.dump"), "w") as f:
            f.write(dump_text)
        classes = parse_dump(dump_text)
        truth = ground_truth(classes)
        syms = nm_symbols(unstripped)
        for cname in sorted(classes):
            info = classes[cname]
            hint = None
            if info["vptr"] and info["vptr"][0] in syms:
                hint = syms[info["vptr"][0]] + info["vptr"][1]
                idmap["0x%x" % hint] = cname
            m = mangled(cname)
            present = (
                hint is not None
                or any(re.match(rf"_ZTC\d+\w*_{m}$", s) for s in syms)
                or any(re.match(rf"_ZN{m}C[12]E", s) for s in syms)
            )
            if not present:
                gt["removed"].append(cname)
                continue
            entry = {"name": cname, "vptr_hint": None if hint is None else "0x%x" % hint}
            entry.update(truth[cname])
            gt["classes"].append(entry)
        # drop removed classes from base lists as well
        removed = set(gt["removed"])
        for entry in gt["classes"]:
            for key in ("virtual_bases", "intermediate_bases", "direct_bases"):
                entry[key] = [b for b in entry[key] if b not in removed]

    with open(os.path.join(fixture_dir, "gt.json"), "w") as f:
        json.dump(gt, f, indent=2)
        f.write("\n")
    with open(os.path.join(fixture_dir, "map.json"), "w") as f:
        json.dump(dict(sorted(idmap.items(), key=lambda kv: int(kv[0], 16))), f, indent=2)
        f.write("\n")
    print(f"built {name}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cxx", default="g++")
    ap.add_argument("--cc", default="gcc")
    ap.add_argument("--opt", default="-O0")
    ap.add_argument("names", nargs="*")
    args = ap.parse_args()
    if shutil.which(args.cxx) is None:
        print(f"toolchain missing ({args.cxx}); golden binaries left untouched")
        return 0
    dirs = sorted(d for d in glob.glob(os.path.join(HERE, "*")) if os.path.isdir(d))
    for d in dirs:
        if args.names and os.path.basename(d) not in args.names:
            continue
        build_one(d, args.cxx, args.cc, args.opt)
    return 0


if __name__ == "__main__":
    sys.exit(main())
