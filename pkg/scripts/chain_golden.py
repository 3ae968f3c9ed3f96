"""Compute the q=0 golden pose of a chain file with plain-Python matrix products.

Kept independent of the package so the committed fixture checks the library FK.
Usage: python scripts/chain_golden.py src/hmr/data/chain_default.json [--write]
"""
import json
import math
import sys


def matmul(A, B):
    return [[sum(A[i][k] * B[k][j] for k in range(4)) for j in range(4)] for i in range(4)]


def link(a, alpha, d, theta):
    ct, st, ca, sa = math.cos(theta), math.sin(theta), math.cos(alpha), math.sin(alpha)
    return [[ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0]]


def main(path, write):
    with open(path) as f:
        chain = json.load(f)
    T = [[float(i == j) for j in range(4)] for i in range(4)]
    for j in chain["joints"]:
        T = matmul(T, link(j["a"], j["alpha"], j["d"], j.get("theta_offset", 0.0)))
    tool = [[float(i == j) for j in range(4)] for i in range(4)]
    rot = chain.get("tool", {}).get("rotation")
    trans = chain.get("tool", {}).get("translation", [0.0, 0.0, 0.0])
    for i in range(3):
        for j in range(3):
            if rot is not None:
                tool[i][j] = rot[i][j]
        tool[i][3] = trans[i]
    T = matmul(T, tool)
    golden = {"q": [0.0] * len(chain["joints"]),
              "position_m": [T[i][3] for i in range(3)],
              "rotation": [[T[i][j] for j in range(3)] for i in range(3)]}
    print(json.dumps(golden, indent=1))
    if write:
        chain["golden"] = golden
        with open(path, "w") as f:
            json.dump(chain, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], "--write" in sys.argv)
