#!/usr/bin/env python3
"""Recompute a region map with pefile and compare it to `spurscan map --json`.

usage: pe_regions_pefile.py <spurscan> <file.exe> [<golden.map.json>]
"""
import json
import subprocess
import sys

import pefile


def regions_from_pefile(path):
    pe = pefile.PE(path, fast_load=True)
    data = pe.__data__
    n = len(data)
    e_lfanew = pe.DOS_HEADER.e_lfanew
    headers_end = min(max(pe.OPTIONAL_HEADER.SizeOfHeaders, e_lfanew), n)

    owner = [None] * n
    for i in range(0, min(e_lfanew, n)):
        owner[i] = "dos"
    for i in range(e_lfanew, headers_end):
        owner[i] = "pe_headers"

    overlay_start = headers_end
    for s in pe.sections:
        ptr, raw = s.PointerToRawData, s.SizeOfRawData
        if raw == 0:
            continue
        overlay_start = max(overlay_start, min(ptr + raw, n))
        vs = s.Misc_VirtualSize
        content = raw if vs == 0 else min(vs, raw)
        for i in range(ptr, min(ptr + content, n)):
            if owner[i] is None:
                owner[i] = "content"
    for i in range(n):
        if owner[i] is None:
            owner[i] = "slack" if i < overlay_start else "overlay"

    out = []
    for i, kind in enumerate(owner):
        if out and out[-1]["kind"] == kind and out[-1]["end"] == i:
            out[-1]["end"] = i + 1
        else:
            out.append({"kind": kind, "start": i, "end": i + 1})
    return n, out


def main():
    tool, path = sys.argv[1], sys.argv[2]
    n, expected = regions_from_pefile(path)
    got = json.loads(subprocess.check_output([tool, "map", path, "--json"]))
    ok = True
    if got["file_len"] != n:
        print(f"file_len {got['file_len']} != {n}")
        ok = False
    if got["regions"] != expected:
        print("regions differ")
        print(" pefile  :", expected)
        print(" spurscan:", got["regions"])
        ok = False
    if len(sys.argv) > 3:
        with open(sys.argv[3]) as f:
            golden = json.load(f)
        if golden != got:
            print("golden map differs from tool output")
            ok = False
    print("pefile oracle:", "agree" if ok else "DISAGREE")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
