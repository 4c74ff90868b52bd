//! Named cluster-level topologies, parameterized by the cluster sizes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::ClusterGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterTopology {
    /// Clusters on a path: 0–1–2–…; with three clusters the outer two only meet through the middle.
    Chain,
    /// No links between clusters.
    Isolated,
    /// Cluster 0 linked to every other cluster.
    Star,
    /// Every pair of clusters linked.
    Complete,
    /// Chain closed into a cycle.
    Ring,
}

impl ClusterTopology {
    pub const ALL: [ClusterTopology; 5] = [
        ClusterTopology::Chain,
        ClusterTopology::Isolated,
        ClusterTopology::Star,
        ClusterTopology::Complete,
        ClusterTopology::Ring,
    ];

    pub fn links(self, clusters: usize) -> Vec<Vec<usize>> {
        let mut links = vec![Vec::new(); clusters];
        let mut link = |a: usize, b: usize| {
            if a != b && !links[a].contains(&b) {
                links[a].push(b);
                links[b].push(a);
            }
        };
        match self {
            ClusterTopology::Chain => (1..clusters).for_each(|k| link(k - 1, k)),
            ClusterTopology::Isolated => {}
            ClusterTopology::Star => (1..clusters).for_each(|k| link(0, k)),
            ClusterTopology::Complete => {
                for a in 0..clusters {
                    for b in a + 1..clusters {
                        link(a, b);
                    }
                }
            }
            ClusterTopology::Ring => {
                (1..clusters).for_each(|k| link(k - 1, k));
                if clusters > 2 {
                    link(clusters - 1, 0);
                }
            }
        }
        links
    }

    pub fn build(self, sizes: &[usize]) -> Result<ClusterGraph> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidParameter(
                "cluster sizes must be positive".into(),
            ));
        }
        ClusterGraph::from_sizes(sizes, self.links(sizes.len()))
    }
}

impl fmt::Display for ClusterTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterTopology::Chain => "chain",
            ClusterTopology::Isolated => "isolated",
            ClusterTopology::Star => "star",
            ClusterTopology::Complete => "complete",
            ClusterTopology::Ring => "ring",
        })
    }
}

impl FromStr for ClusterTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown topology `{s}`")))
    }
}
