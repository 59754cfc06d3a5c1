use crate::dataset::{pairwise_min_dist, FeatureDataset};
use crate::error::{Error, Result};

fn non_empty(selection: &FeatureDataset) -> Result<()> {
    if selection.is_empty() {
        return Err(Error::invalid("selection is empty"));
    }
    Ok(())
}

/// Mean over client rows of the squared distance to the nearest selected row.
/// Lower means the selection sits closer to the client data.
pub fn proximity_metric(selection: &FeatureDataset, client: &FeatureDataset) -> Result<f64> {
    non_empty(selection)?;
    if client.is_empty() {
        return Ok(0.0);
    }
    let d = pairwise_min_dist(client, selection)?;
    Ok(d.iter().map(|&(x, _)| x).sum::<f64>() / d.len() as f64)
}

/// Covering radius: the largest squared distance from a pool row to its
/// nearest selected row. Lower means better coverage of the pool.
pub fn diversity_metric(selection: &FeatureDataset, pool: &FeatureDataset) -> Result<f64> {
    non_empty(selection)?;
    let d = pairwise_min_dist(pool, selection)?;
    Ok(d.iter().map(|&(x, _)| x).fold(0.0, f64::max))
}

/// Mean over the given centroids of the squared distance to the nearest
/// selected row.
pub fn centroid_proximity(centroids: &FeatureDataset, selection: &FeatureDataset) -> Result<f64> {
    proximity_metric(selection, centroids)
}

/// Fraction of selected cloud rows whose domain is one of `client_domains`.
pub fn id_tpr(indices: &[usize], cloud: &FeatureDataset, client_domains: &[u32]) -> Result<f64> {
    let domains = cloud
        .domains()
        .ok_or_else(|| Error::invalid("cloud dataset has no domain tags"))?;
    if indices.is_empty() {
        return Err(Error::invalid("selection is empty"));
    }
    let mut hits = 0usize;
    for &i in indices {
        let d = *domains
            .get(i)
            .ok_or_else(|| Error::invalid(format!("row index {i} out of range")))?;
        if client_domains.contains(&d) {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}
