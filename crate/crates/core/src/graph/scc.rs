//! Strongly connected components (iterative Tarjan, O(V + E)).

use super::GestureGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SccDecomposition {
    /// Components ordered by their smallest node id; members sorted.
    pub components: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
    /// Index of the largest component (lowest index on ties).
    pub largest: usize,
}

impl SccDecomposition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.components.len() == 1
    }
}

pub fn scc_decompose(graph: &GestureGraph) -> SccDecomposition {
    scc_from_adjacency(&graph.adjacency())
}

const UNVISITED: usize = usize::MAX;

pub fn scc_from_adjacency(adj: &[Vec<usize>]) -> SccDecomposition {
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut next_index = 0;
    // (node, position in its successor list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                while let Some(w) = stack.pop() {
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
    }

    components.sort_by_key(|c| c[0]);
    let mut component_of = vec![0; n];
    for (k, comp) in components.iter().enumerate() {
        for &v in comp {
            component_of[v] = k;
        }
    }
    let largest = components
        .iter()
        .enumerate()
        .fold(0, |best, (k, c)| if c.len() > components[best].len() { k } else { best });
    SccDecomposition {
        components,
        component_of,
        largest,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_cycle() {
        let adj: Vec<Vec<usize>> = (0..5).map(|i| vec![(i + 1) % 5]).collect();
        let scc = scc_from_adjacency(&adj);
        assert_eq!(scc.components, vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn chain_is_all_singletons() {
        let adj = vec![vec![1], vec![2], vec![]];
        let scc = scc_from_adjacency(&adj);
        assert_eq!(scc.components, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(scc.largest, 0);
    }

    #[test]
    fn largest_breaks_ties_low() {
        // {0,1} and {2,3} both size 2, {4,5,6} size 3
        let adj = vec![vec![1], vec![0, 2], vec![3], vec![2], vec![5], vec![6], vec![4]];
        let scc = scc_from_adjacency(&adj);
        assert_eq!(scc.len(), 3);
        assert_eq!(scc.largest, 2);
        let adj = vec![vec![1], vec![0], vec![3], vec![2]];
        assert_eq!(scc_from_adjacency(&adj).largest, 0);
    }

    #[test]
    fn deep_chain_does_not_overflow() {
        let n = 200_000;
        let adj: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n]).collect();
        assert!(scc_from_adjacency(&adj).is_strongly_connected());
    }
}
