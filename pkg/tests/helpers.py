"""Random instance generators shared by the test modules."""
from rwpot.lattice import SiteSet, star_neighbors

from oracles import flood_fill_holes


def grow_star_set(rng, W, size):
    """Random *-connected set grown from the centre, holes filled."""
    c = tuple((a + b) // 2 for a, b in zip(W.lo, W.hi))
    members = {c}
    frontier = [c]
    inner = W.expand(-1)
    while len(members) < size:
        z = frontier[int(rng.integers(len(frontier)))]
        y = star_neighbors(z)[int(rng.integers(3 ** W.d - 1))]
        if inner.contains(y) and y not in members:
            members.add(y)
            frontier.append(y)
    members |= flood_fill_holes(members, W.lo, W.hi)
    return SiteSet.from_sites(W, members)
