//! Retrieval evaluation: L2 nearest-neighbor ranking, rank-k accuracy,
//! mAP, mINP, the per-view matrix with identical-view exclusion, and the
//! skeleton error metric.

use ndarray::Array2;

use crate::error::{GaitError, Result};
use crate::skeleton::JointSequence;

/// Flattened recognition features with parallel metadata arrays.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    /// `[n_samples, feature_dim]`
    pub features: Array2<f64>,
    pub labels: Vec<u32>,
    pub views: Vec<String>,
    pub conditions: Vec<String>,
}

impl FeatureIndex {
    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n || self.views.len() != n || self.conditions.len() != n {
            return Err(GaitError::InvalidInput(format!(
                "feature index arrays disagree: {n} rows, {} labels, {} views, {} conditions",
                self.labels.len(),
                self.views.len(),
                self.conditions.len()
            )));
        }
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(GaitError::InvalidInput(
                "feature index contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Subset by row indices.
    pub fn select(&self, idx: &[usize]) -> FeatureIndex {
        let d = self.features.ncols();
        let mut features = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
        }
        FeatureIndex {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            views: idx.iter().map(|&i| self.views[i].clone()).collect(),
            conditions: idx.iter().map(|&i| self.conditions[i].clone()).collect(),
        }
    }
}

/// Rank the gallery for every probe by ascending Euclidean distance, ties
/// broken by ascending gallery index.
pub fn l2_retrieve(probe: &FeatureIndex, gallery: &FeatureIndex) -> Result<Vec<Vec<usize>>> {
    probe.validate()?;
    gallery.validate()?;
    if gallery.is_empty() {
        return Err(GaitError::Protocol("gallery is empty".into()));
    }
    if probe.features.ncols() != gallery.features.ncols() {
        return Err(GaitError::InvalidInput(format!(
            "probe width {} != gallery width {}",
            probe.features.ncols(),
            gallery.features.ncols()
        )));
    }
    let mut out = Vec::with_capacity(probe.len());
    for p in 0..probe.len() {
        let pv = probe.features.row(p);
        let mut order: Vec<(f64, usize)> = (0..gallery.len())
            .map(|g| {
                let d = pv
                    .iter()
                    .zip(gallery.features.row(g).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, g)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(order.into_iter().map(|(_, g)| g).collect());
    }
    Ok(out)
}

/// Fraction of probes whose top-k entries contain a matching label.
pub fn rank_k(
    rankings: &[Vec<usize>],
    probe_labels: &[u32],
    gallery_labels: &[u32],
    k: usize,
) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings
        .iter()
        .zip(probe_labels.iter())
        .filter(|(ranking, &label)| {
            ranking
                .iter()
                .take(k)
                .any(|&g| gallery_labels[g] == label)
        })
        .count();
    hits as f64 / rankings.len() as f64
}

/// Mean average precision and mean inverse negative penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMinp {
    pub map: f64,
    pub minp: f64,
    /// Probes without any gallery match, excluded from both means.
    pub excluded_probes: usize,
}

/// Average precision uses matches-so-far over rank at each match position;
/// inverse negative penalty is match count over the rank of the hardest
/// match. Probes with zero gallery matches are excluded and counted.
pub fn map_minp(
    rankings: &[Vec<usize>],
    probe_labels: &[u32],
    gallery_labels: &[u32],
) -> Result<MapMinp> {
    let mut ap_sum = 0.0;
    let mut inp_sum = 0.0;
    let mut included = 0usize;
    let mut excluded = 0usize;
    for (ranking, &label) in rankings.iter().zip(probe_labels.iter()) {
        let mut matches = 0usize;
        let mut precision_sum = 0.0;
        let mut hardest_rank = 0usize;
        for (pos, &g) in ranking.iter().enumerate() {
            if gallery_labels[g] == label {
                matches += 1;
                precision_sum += matches as f64 / (pos + 1) as f64;
                hardest_rank = pos + 1;
            }
        }
        if matches == 0 {
            excluded += 1;
            continue;
        }
        ap_sum += precision_sum / matches as f64;
        inp_sum += matches as f64 / hardest_rank as f64;
        included += 1;
    }
    if included == 0 {
        return Err(GaitError::Protocol(
            "no probe has any gallery match".into(),
        ));
    }
    Ok(MapMinp {
        map: ap_sum / included as f64,
        minp: inp_sum / included as f64,
        excluded_probes: excluded,
    })
}

/// Cross-view rank-1 matrix with identical-view cells excluded.
#[derive(Debug, Clone)]
pub struct ViewMatrix {
    pub views: Vec<String>,
    /// `matrix[p][g]` is rank-1 of probe view `p` against gallery view `g`;
    /// the diagonal is `None`.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
}

/// Evaluate rank-1 for every ordered pair of distinct views, restricting
/// the gallery to the target view.
pub fn view_matrix_eval(probe: &FeatureIndex, gallery: &FeatureIndex) -> Result<ViewMatrix> {
    probe.validate()?;
    gallery.validate()?;
    let mut views: Vec<String> = probe
        .views
        .iter()
        .chain(gallery.views.iter())
        .cloned()
        .collect();
    views.sort();
    views.dedup();
    if views.len() < 2 {
        return Err(GaitError::Protocol(format!(
            "view matrix needs at least 2 views, got {views:?}"
        )));
    }
    let mut matrix = vec![vec![None; views.len()]; views.len()];
    let mut row_means = Vec::with_capacity(views.len());
    let mut all_cells = Vec::new();
    for (pi, pv) in views.iter().enumerate() {
        let probe_rows: Vec<usize> = (0..probe.len()).filter(|&i| &probe.views[i] == pv).collect();
        let mut row_cells = Vec::new();
        for (gi, gv) in views.iter().enumerate() {
            if pi == gi {
                continue;
            }
            let gallery_rows: Vec<usize> = (0..gallery.len())
                .filter(|&i| &gallery.views[i] == gv)
                .collect();
            if gallery_rows.is_empty() {
                return Err(GaitError::Protocol(format!(
                    "no gallery samples for probe view {pv} vs gallery view {gv}"
                )));
            }
            if probe_rows.is_empty() {
                return Err(GaitError::Protocol(format!(
                    "no probe samples for view {pv}"
                )));
            }
            let p = probe.select(&probe_rows);
            let g = gallery.select(&gallery_rows);
            let rankings = l2_retrieve(&p, &g)?;
            let r1 = rank_k(&rankings, &p.labels, &g.labels, 1);
            matrix[pi][gi] = Some(r1);
            row_cells.push(r1);
            all_cells.push(r1);
        }
        row_means.push(row_cells.iter().sum::<f64>() / row_cells.len() as f64);
    }
    let grand_mean = all_cells.iter().sum::<f64>() / all_cells.len() as f64;
    Ok(ViewMatrix {
        views,
        matrix,
        row_means,
        grand_mean,
    })
}

/// Mean per-joint Euclidean distance between two equally shaped sequences.
pub fn mpjpe(predicted: &JointSequence, reference: &JointSequence) -> Result<f64> {
    if predicted.data.shape() != reference.data.shape() {
        return Err(GaitError::InvalidInput(format!(
            "shape mismatch: {:?} vs {:?}",
            predicted.data.shape(),
            reference.data.shape()
        )));
    }
    let t = predicted.frames();
    let k = predicted.num_joints();
    let mut sum = 0.0;
    for f in 0..t {
        for j in 0..k {
            let dx = predicted.data[[f, j, 0]] - reference.data[[f, j, 0]];
            let dy = predicted.data[[f, j, 1]] - reference.data[[f, j, 1]];
            sum += (dx * dx + dy * dy).sqrt();
        }
    }
    Ok(sum / (t * k) as f64)
}

/// Full retrieval report at the standard cutoffs.
#[derive(Debug, Clone)]
pub struct RetrievalReport {
    pub rankings: Vec<Vec<usize>>,
    pub rank_accuracies: Vec<(usize, f64)>,
    pub map: f64,
    pub minp: f64,
    pub excluded_probes: usize,
    pub probes: usize,
    pub gallery: usize,
}

/// Run retrieval and compute rank-1/5/10/20, mAP and mINP.
pub fn evaluate_retrieval(probe: &FeatureIndex, gallery: &FeatureIndex) -> Result<RetrievalReport> {
    let rankings = l2_retrieve(probe, gallery)?;
    let rank_accuracies = [1usize, 5, 10, 20]
        .into_iter()
        .map(|k| (k, rank_k(&rankings, &probe.labels, &gallery.labels, k)))
        .collect();
    let mm = map_minp(&rankings, &probe.labels, &gallery.labels)?;
    Ok(RetrievalReport {
        rankings,
        rank_accuracies,
        map: mm.map,
        minp: mm.minp,
        excluded_probes: mm.excluded_probes,
        probes: probe.len(),
        gallery: gallery.len(),
    })
}

impl RetrievalReport {
    pub fn rank1(&self) -> f64 {
        self.rank_accuracies
            .iter()
            .find(|(k, _)| *k == 1)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.rank_accuracies {
            out.push_str(&format!("rank_{k},{v:.6}\n"));
        }
        out.push_str(&format!("map,{:.6}\n", self.map));
        out.push_str(&format!("minp,{:.6}\n", self.minp));
        out.push_str(&format!("excluded_probes,{}\n", self.excluded_probes));
        out.push_str(&format!("probes,{}\n", self.probes));
        out.push_str(&format!("gallery,{}\n", self.gallery));
        out
    }
}

impl ViewMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("probe_view");
        for v in &self.views {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(",mean\n");
        for (i, v) in self.views.iter().enumerate() {
            out.push_str(v);
            for j in 0..self.views.len() {
                match self.matrix[i][j] {
                    Some(x) => out.push_str(&format!(",{x:.6}")),
                    None => out.push_str(",-"),
                }
            }
            out.push_str(&format!(",{:.6}\n", self.row_means[i]));
        }
        out.push_str(&format!("grand_mean,{:.6}\n", self.grand_mean));
        out
    }
}
