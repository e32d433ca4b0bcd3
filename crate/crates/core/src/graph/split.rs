use super::GraphDataset;
use crate::error::{Error, Result};

/// One density slice of a source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub tag: String,
    /// Positions of the member graphs in the source dataset, in ascending
    /// edge-ratio order.
    pub indices: Vec<usize>,
    pub dataset: GraphDataset,
}

/// Partition of a dataset into domains of increasing edge density.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSplit {
    pub domains: Vec<Domain>,
    /// Largest edge/node ratio in each domain except the last.
    pub thresholds: Vec<f64>,
}

impl DomainSplit {
    pub fn get(&self, tag: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.tag == tag)
    }

    pub fn total(&self) -> usize {
        self.domains.iter().map(|d| d.indices.len()).sum()
    }
}

/// Tags for `count` domains: `A`, `B`, ... with the last one named `T`.
pub fn domain_tags(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            if i + 1 == count {
                "T".to_string()
            } else {
                ((b'A' + i as u8) as char).to_string()
            }
        })
        .collect()
}

/// Sorts graphs by undirected edges per node (stable, so ties keep original
/// order) and cuts the sorted list into consecutive slices. Every slice but
/// the last gets `floor(fraction * N)` graphs; the last takes the remainder.
pub fn split_by_edge_density(ds: &GraphDataset, fractions: &[f64]) -> Result<DomainSplit> {
    if ds.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 graphs to split, {} has {}",
            ds.name,
            ds.len()
        )));
    }
    if fractions.len() < 2 || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::invalid(format!("bad split fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }

    let ratios: Vec<f64> = ds.graphs().iter().map(|g| g.edge_ratio()).collect();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]));

    let n = ds.len();
    let tags = domain_tags(fractions.len());
    let mut domains = Vec::with_capacity(fractions.len());
    let mut thresholds = Vec::new();
    let mut start = 0;
    for (i, (&f, tag)) in fractions.iter().zip(&tags).enumerate() {
        let end = if i + 1 == fractions.len() {
            n
        } else {
            // tolerance matches the fraction-sum check so 1/3 of 6 is 2
            (start + (f * n as f64 + 1e-9).floor() as usize).min(n)
        };
        let indices = order[start..end].to_vec();
        if i + 1 < fractions.len() {
            thresholds.push(indices.last().map_or(f64::NAN, |&j| ratios[j]));
        }
        let dataset = ds.subset(format!("{}-{tag}", ds.name), &indices);
        domains.push(Domain {
            tag: tag.clone(),
            indices,
            dataset,
        });
        start = end;
    }
    Ok(DomainSplit {
        domains,
        thresholds,
    })
}
