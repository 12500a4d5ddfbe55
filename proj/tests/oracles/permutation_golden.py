#!/usr/bin/env python3
"""Independent reimplementation of the seeded shuffles; prints the goldens
frozen in test_table.cpp."""

M = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.s = seed & M

    def next(self):
        self.s = (self.s + 0x9E3779B97F4A7C15) & M
        z = self.s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        return z ^ (z >> 31)

    def below(self, bound):
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def shuffled(n, rng):
    idx = list(range(n))
    for i in range(n, 1, -1):
        j = rng.below(i)
        idx[i - 1], idx[j] = idx[j], idx[i - 1]
    return idx


def permutation(rows, cols, seed):
    rng = SplitMix64(seed)
    return shuffled(rows, rng), shuffled(cols, rng)


def sample(n, k, seed):
    if k >= n:
        return list(range(n))
    return sorted(shuffled(n, SplitMix64(seed))[:k])


def fnv1a(data, h=0xCBF29CE484222325):
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & M
    return h


if __name__ == "__main__":
    print("splitmix64(0) first three:", [hex(x) for x in (lambda g: [g.next(), g.next(), g.next()])(SplitMix64(0))])
    print("permute 5x3 seed 42:", permutation(5, 3, 42))
    print("sample 5 rows k=2 seed 7:", sample(5, 2, 7))
    print("sample 10 rows k=4 seed 99:", sample(10, 4, 99))
    print("fnv1a('a,b\\n1,2\\n'):", "%016x" % fnv1a(b"a,b\n1,2\n"))
