import numpy as np
import pytest

from urnkit.model import ReplacementDistribution, ReplacementStructure


def random_balanced_structure(seed: int, d_max: int = 4) -> ReplacementStructure:
    """Random integer-atom balanced structure with exact dyadic probabilities.

    Weights include at least one 1 so any residual mass is representable;
    each atom is built by greedily distributing the mass S (plus a_i when
    the drawn ball is removed) over the colours in units of a_j.
    """
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, d_max + 1))
    a = rng.integers(1, 4, size=d).astype(float)
    a[int(rng.integers(0, d))] = 1.0
    S = int(rng.integers(1, 7))

    def atom(colour: int) -> tuple[int, ...]:
        for _ in range(200):
            xi = np.zeros(d, dtype=int)
            if rng.random() < 0.3:
                xi[colour] = -1
            need = S - int(a @ xi)
            guard = 0
            while need > 0 and guard < 1000:
                fits = [j for j in range(d) if a[j] <= need]
                if not fits:
                    break
                j = int(rng.choice(fits))
                xi[j] += 1
                need -= int(a[j])
                guard += 1
            if need == 0:
                return tuple(int(x) for x in xi)
        raise RuntimeError("atom sampling failed")

    rules = []
    for i in range(d):
        k = int(rng.integers(1, 4))
        weights = rng.integers(1, 5, size=k)
        denom = int(weights.sum())
        # dyadic-style exact probabilities: integers over their sum
        probs = [w / denom for w in weights]
        probs[-1] = 1.0 - sum(probs[:-1])
        atoms = tuple((atom(i), float(p)) for p in probs)
        rules.append(ReplacementDistribution(i, atoms))
    return ReplacementStructure(a=tuple(a), rules=tuple(rules), S=float(S))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
