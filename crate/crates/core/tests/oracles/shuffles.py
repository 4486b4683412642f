#!/usr/bin/env python3
"""Reference outputs for the seeded shuffles, written without reference to the Rust code.

Run: python3 shuffles.py
Prints the buffered-shuffle order of 0..19 with buffer 4 for a few seeds,
and the Fisher-Yates permutation of 0..9 for the same seeds.
"""

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def below(self, n):
        return self.next() % n


def buffered_shuffle(items, size, seed):
    rng = SplitMix64(seed)
    it = iter(items)
    buf = []
    for x in it:
        buf.append(x)
        if len(buf) == size:
            break
    out = []
    done = len(buf) < size
    while buf:
        j = rng.below(len(buf))
        if not done:
            nxt = next(it, None)
            if nxt is not None:
                out.append(buf[j])
                buf[j] = nxt
                continue
            done = True
        out.append(buf[j])
        buf[j] = buf[-1]
        buf.pop()
    return out


def permutation(n, seed):
    p = list(range(n))
    rng = SplitMix64(seed)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        p[i], p[j] = p[j], p[i]
    return p


if __name__ == "__main__":
    for seed in (0, 7, 2**63 + 5):
        print(f"seed {seed}")
        print("  buffered:", buffered_shuffle(range(20), 4, seed))
        print("  permutation:", permutation(10, seed))
