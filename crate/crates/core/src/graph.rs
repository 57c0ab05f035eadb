//! Strongly connected components (iterative Tarjan).

/// Computes the SCCs of the subgraph induced by `active` nodes.
///
/// `succ(v, out)` must push the successors of `v` into `out`; successors
/// outside `active` are ignored. Components are returned in reverse
/// topological order (sinks first), which is the order Tarjan emits them.
pub fn tarjan_scc<F>(n: usize, active: &[bool], mut succ: F) -> Vec<Vec<usize>>
where
    F: FnMut(usize, &mut Vec<usize>),
{
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut sccs = Vec::new();
    let mut next_index = 0usize;

    // Each call frame holds the node and its successor list with a cursor.
    let mut frames: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    let mut buf = Vec::new();

    for root in 0..n {
        if !active[root] || index[root] != UNVISITED {
            continue;
        }
        buf.clear();
        succ(root, &mut buf);
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        frames.push((root, std::mem::take(&mut buf), 0));

        while let Some(frame) = frames.last_mut() {
            let v = frame.0;
            if frame.2 < frame.1.len() {
                let w = frame.1[frame.2];
                frame.2 += 1;
                if !active[w] {
                    continue;
                }
                if index[w] == UNVISITED {
                    let mut ws = Vec::new();
                    succ(w, &mut ws);
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, ws, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                frames.pop();
                if let Some(parent) = frames.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    sccs.push(comp);
                }
            }
        }
    }
    sccs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sccs_of(edges: &[(usize, usize)], n: usize) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
        }
        tarjan_scc(n, &vec![true; n], |v, out| out.extend(&adj[v]))
    }

    #[test]
    fn chain_and_cycle() {
        let s = sccs_of(&[(0, 1), (1, 2), (2, 1), (2, 3)], 4);
        assert_eq!(s, vec![vec![3], vec![1, 2], vec![0]]);
    }

    #[test]
    fn respects_active_subset() {
        let adj = [vec![1], vec![0]];
        let s = tarjan_scc(2, &[true, false], |v, out| out.extend(&adj[v]));
        assert_eq!(s, vec![vec![0]]);
    }

    #[test]
    fn deep_path_does_not_overflow() {
        let n = 200_000;
        let s = tarjan_scc(n, &vec![true; n], |v, out| {
            if v + 1 < n {
                out.push(v + 1)
            }
        });
        assert_eq!(s.len(), n);
        assert_eq!(s[0], vec![n - 1]);
    }
}
