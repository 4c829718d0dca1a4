use super::layout::JointLayout;
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// Spatial kernel size: root, centripetal, centrifugal.
pub const PARTITION_SUBSETS: usize = 3;

/// Default `alpha` added to every degree before normalisation.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// The three neighbourhood subsets of every joint as 0/1 matrices plus their
/// normalised forms. Entry `[i][j]` of subset `k` is 1 when joint `j` belongs to
/// subset `k` of root joint `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedGraph {
    layout: JointLayout,
    adjacency: [DenseArray; PARTITION_SUBSETS],
    normalized: [DenseArray; PARTITION_SUBSETS],
    alpha: f64,
}

impl PartitionedGraph {
    /// Partition and normalise in one go.
    pub fn build(layout: &JointLayout, alpha: f64) -> Result<Self> {
        let adjacency = partition(layout)?;
        let normalized = [
            normalize_adjacency(&adjacency[0], alpha)?,
            normalize_adjacency(&adjacency[1], alpha)?,
            normalize_adjacency(&adjacency[2], alpha)?,
        ];
        Ok(Self {
            layout: layout.clone(),
            adjacency,
            normalized,
            alpha,
        })
    }

    /// Graph with caller-provided normalised matrices (oracle tests, toy graphs).
    pub fn from_normalized(
        layout: &JointLayout,
        normalized: [DenseArray; PARTITION_SUBSETS],
    ) -> Result<Self> {
        let v = layout.joint_count();
        for a in &normalized {
            if a.shape() != [v, v] {
                return Err(Error::Dimension(format!(
                    "normalised adjacency {:?} for {v} joints",
                    a.shape()
                )));
            }
        }
        Ok(Self {
            layout: layout.clone(),
            adjacency: partition(layout)?,
            normalized,
            alpha: f64::NAN,
        })
    }

    pub fn layout(&self) -> &JointLayout {
        &self.layout
    }

    pub fn joint_count(&self) -> usize {
        self.layout.joint_count()
    }

    pub fn adjacency(&self, k: usize) -> &DenseArray {
        &self.adjacency[k]
    }

    pub fn normalized(&self, k: usize) -> &DenseArray {
        &self.normalized[k]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Splits every joint's 1-hop neighbourhood into root / centripetal / centrifugal
/// subsets by hop distance to the layout's center joint.
///
/// For a bone (i, j) where j is closer to the center, j is centripetal for i
/// and i is centrifugal for j. Equal distances put the edge in the centripetal
/// subset of both endpoints (only possible on graphs with odd cycles).
pub fn partition(layout: &JointLayout) -> Result<[DenseArray; PARTITION_SUBSETS]> {
    let v = layout.joint_count();
    let hops = layout.hop_distances(layout.center_joint());
    if let Some(j) = hops.iter().position(Option::is_none) {
        return Err(Error::Construction(format!(
            "joint `{}` is not connected to center `{}`",
            layout.joint_name(j),
            layout.joint_name(layout.center_joint())
        )));
    }
    let hop = |j: usize| hops[j].expect("checked connected");
    let root = DenseArray::identity(v);
    let mut centripetal = DenseArray::zeros([v, v]);
    let mut centrifugal = DenseArray::zeros([v, v]);
    for &(i, j) in layout.bones() {
        use std::cmp::Ordering::*;
        match hop(j).cmp(&hop(i)) {
            Less => {
                centripetal.set(&[i, j], 1.0);
                centrifugal.set(&[j, i], 1.0);
            }
            Greater => {
                centripetal.set(&[j, i], 1.0);
                centrifugal.set(&[i, j], 1.0);
            }
            Equal => {
                centripetal.set(&[i, j], 1.0);
                centripetal.set(&[j, i], 1.0);
            }
        }
    }
    Ok([root, centripetal, centrifugal])
}

/// `D^{-1/2} A D^{-1/2}` with `D = diag(row sums of A + alpha)`.
pub fn normalize_adjacency(a: &DenseArray, alpha: f64) -> Result<DenseArray> {
    let &[n, m] = a.shape() else {
        return Err(Error::Dimension(format!("adjacency must be square, got {:?}", a.shape())));
    };
    if n != m {
        return Err(Error::Dimension(format!("adjacency must be square, got {:?}", a.shape())));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::Contract(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if a.data().iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Contract("adjacency entries must be finite and >= 0".into()));
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.data()[i * n..(i + 1) * n].iter().sum::<f64>() + alpha;
            // an empty row with alpha = 0 stays empty instead of producing NaN
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(DenseArray::from_fn([n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        inv_sqrt[i] * a.data()[idx] * inv_sqrt[j]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> JointLayout {
        JointLayout::new(
            "chain",
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (1, 2)],
            1,
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn chain_partition_by_hand() {
        let [root, cp, cf] = partition(&chain()).unwrap();
        assert_eq!(root, DenseArray::identity(3));
        // a->b and c->b are centripetal; b->a and b->c centrifugal
        let mut want_cp = DenseArray::zeros([3, 3]);
        want_cp.set(&[0, 1], 1.0);
        want_cp.set(&[2, 1], 1.0);
        let mut want_cf = DenseArray::zeros([3, 3]);
        want_cf.set(&[1, 0], 1.0);
        want_cf.set(&[1, 2], 1.0);
        assert_eq!(cp, want_cp);
        assert_eq!(cf, want_cf);
    }

    #[test]
    fn single_bone() {
        let l = JointLayout::new("xy", vec!["x".into(), "y".into()], vec![(0, 1)], 0, vec![1]).unwrap();
        let [_, cp, cf] = partition(&l).unwrap();
        assert_eq!(cp.at(&[1, 0]), 1.0);
        assert_eq!(cf.at(&[0, 1]), 1.0);
        assert_eq!(cp.sum() + cf.sum(), 2.0);
    }

    #[test]
    fn ties_go_centripetal_from_both_ends() {
        // triangle with center 0: joints 1 and 2 are both one hop away
        let l = JointLayout::new(
            "tri",
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (0, 2), (1, 2)],
            0,
            vec![1],
        )
        .unwrap();
        let [_, cp, cf] = partition(&l).unwrap();
        assert_eq!(cp.at(&[1, 2]), 1.0);
        assert_eq!(cp.at(&[2, 1]), 1.0);
        assert_eq!(cf.at(&[1, 2]) + cf.at(&[2, 1]), 0.0);
    }

    #[test]
    fn disconnected_graph_is_a_construction_error() {
        let l = JointLayout::new(
            "split",
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1)],
            0,
            vec![1],
        )
        .unwrap();
        assert_eq!(partition(&l).unwrap_err().category(), "construction");
    }

    #[test]
    fn openpose_row_sums_are_degrees() {
        let l = JointLayout::openpose18();
        let [_, cp, cf] = partition(&l).unwrap();
        let both = cp.add(&cf).unwrap();
        let adj = l.neighbors();
        for i in 0..18 {
            let row: f64 = (0..18).map(|j| both.at(&[i, j])).sum();
            assert_eq!(row as usize, adj[i].len());
        }
    }

    #[test]
    fn normalize_identity_without_alpha() {
        assert_eq!(normalize_adjacency(&DenseArray::identity(2), 0.0).unwrap(), DenseArray::identity(2));
    }

    #[test]
    fn normalize_single_node_closed_form() {
        let out = normalize_adjacency(&DenseArray::identity(1), 0.001).unwrap();
        assert!((out.data()[0] - 1.0 / 1.001).abs() < 1e-15);
        assert!((out.data()[0] - 0.999001).abs() < 1e-6);
    }

    #[test]
    fn normalize_swap_is_unchanged() {
        let a = DenseArray::new([2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize_adjacency(&a, 0.0).unwrap(), a);
    }

    #[test]
    fn normalize_rejects_negative_entries() {
        let a = DenseArray::new([2, 2], vec![0.0, -1.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize_adjacency(&a, 0.0).unwrap_err().category(), "contract");
    }

    #[test]
    fn empty_row_with_zero_alpha_stays_finite() {
        let out = normalize_adjacency(&DenseArray::zeros([3, 3]), 0.0).unwrap();
        assert!(out.is_finite());
        assert_eq!(out.sum(), 0.0);
    }
}
