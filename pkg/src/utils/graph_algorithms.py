"""
utils/graph_algorithms.py

Lane-level graph helpers. Lanes are connected when an intersection movement
leads from one to the other; vehicle routes are paths in this lane graph.
"""

from collections import deque


def lane_successors(movement_at):
    """Adjacency list in_lane -> [out_lane, ...] from a movement lookup."""
    adj = {}
    for in_lane, out_lane in movement_at:
        adj.setdefault(in_lane, []).append(out_lane)
    for targets in adj.values():
        targets.sort()
    return adj


def route_is_connected(route, movement_at):
    """True when every consecutive lane pair in the route is a movement."""
    return all((a, b) in movement_at for a, b in zip(route, route[1:]))


def find_lane_route(origin_lanes, target_lanes, adjacency):
    """
    Shortest lane path from any origin lane to any target lane, using
    Breadth-First Search (BFS). Ties go to the lexicographically first lane
    at every step, so the result is deterministic.

    Args:
        origin_lanes (Iterable[str]): Lanes a vehicle may start on.
        target_lanes (Iterable[str]): Lanes a vehicle may finish on.
        adjacency (dict): in_lane -> sorted list of out_lanes.

    Returns:
        list: The lane ids of the route, or None if no target is reachable.
    """
    targets = set(target_lanes)
    previous = {}
    queue = deque()
    for lane in sorted(origin_lanes):
        previous[lane] = None
        queue.append(lane)

    while queue:
        current = queue.popleft()
        if current in targets:
            route = [current]
            while previous[route[-1]] is not None:
                route.append(previous[route[-1]])
            return route[::-1]
        for neighbor in adjacency.get(current, []):
            if neighbor not in previous:
                previous[neighbor] = current
                queue.append(neighbor)
    return None


# --- Standalone Test Block ---
if __name__ == '__main__':
    print("--- Running Standalone Test for utils/graph_algorithms.py ---")

    # a -> b -> d and a -> c -> d -> e; shortest a..e goes through b.
    movements = {('a', 'b'): None, ('a', 'c'): None, ('b', 'd'): None,
                 ('c', 'd'): None, ('d', 'e'): None}
    adjacency = lane_successors(movements)
    route = find_lane_route(['a'], ['e'], adjacency)
    print(f"Route a -> e: {route}")

    if route == ['a', 'b', 'd', 'e'] and route_is_connected(route, movements):
        print("Verification PASSED: BFS found the deterministic shortest route.")
    else:
        print("Verification FAILED: unexpected route.")

    if find_lane_route(['e'], ['a'], adjacency) is None:
        print("Verification PASSED: unreachable targets return None.")
    else:
        print("Verification FAILED: found a route against edge direction.")

    print("\n--- Test Complete ---")
