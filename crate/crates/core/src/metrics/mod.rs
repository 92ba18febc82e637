//! Binary masks, overlap metrics and the evaluation protocols.

mod eval;

pub use eval::{
    eval_accuracy, eval_consistency, eval_robustness, random_cameras, AccuracyOptions,
    EvalReport, MaterialScores, MeanCi, RobustnessOptions, CONSISTENCY_ATTEMPTS,
    DEFAULT_EVAL_CLICKS, DEFAULT_EVAL_VIEWS,
};

use crate::error::{Error, Result};
use crate::render::raster::encode_pgm;
use crate::render::ViewBundle;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    /// Row-major.
    pub data: Vec<bool>,
    pub view_id: String,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, view_id: impl Into<String>) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
            view_id: view_id.into(),
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            data,
            view_id: String::new(),
        }
    }

    /// Pixels of `view` showing material `id`.
    pub fn from_ids(view: &ViewBundle, id: i32) -> Self {
        Self {
            width: view.width(),
            height: view.height(),
            data: view.material_id.iter().map(|&m| m == id).collect(),
            view_id: view.id.clone(),
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let values: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_pgm(self.width, self.height, &values)
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Confusion counts of `pred` against `truth`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of(pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        pred.check_shape(truth)?;
        let mut c = Confusion::default();
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// Intersection over union, 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn precision_recall_f1(&self) -> (f64, f64, f64) {
        if self.tp + self.fp + self.fn_ == 0 {
            return (1.0, 1.0, 1.0);
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f1)
    }
}

pub fn miou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(Confusion::of(a, b)?.iou())
}

pub fn precision_recall_f1(pred: &BinaryMask, truth: &BinaryMask) -> Result<(f64, f64, f64)> {
    Ok(Confusion::of(pred, truth)?.precision_recall_f1())
}

/// Percentage of differing pixels.
pub fn hamming_pct(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_shape(b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let diff = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
    Ok(100.0 * diff as f64 / a.data.len() as f64)
}

/// Mean [`hamming_pct`] over all unordered pairs of mask sets, each set
/// compared view by view as one concatenated raster.
pub fn mean_pairwise_hamming(sets: &[Vec<BinaryMask>]) -> Result<f64> {
    if sets.len() < 2 {
        return Err(Error::invalid("need at least two mask sets"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if sets[i].len() != sets[j].len() {
                return Err(Error::ShapeMismatch("mask sets differ in view count".into()));
            }
            let (mut diff, mut n) = (0.0, 0usize);
            for (a, b) in sets[i].iter().zip(&sets[j]) {
                diff += hamming_pct(a, b)? * a.data.len() as f64;
                n += a.data.len();
            }
            total += if n == 0 { 0.0 } else { diff / n as f64 };
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(bits: &[u8]) -> BinaryMask {
        BinaryMask::from_fn(bits.len() as u32, 1, |x, _| bits[x as usize] == 1)
    }

    #[test]
    fn miou_hand_counts() {
        assert!((miou(&row(&[1, 1, 0, 0]), &row(&[1, 0, 1, 0])).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(miou(&row(&[1, 0, 1]), &row(&[1, 0, 1])).unwrap(), 1.0);
        assert_eq!(miou(&row(&[1, 1, 0]), &row(&[0, 0, 1])).unwrap(), 0.0);
        assert_eq!(miou(&row(&[0, 0]), &row(&[0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(miou(&row(&[1]), &row(&[1, 0])).is_err());
        assert!(hamming_pct(&row(&[1]), &row(&[1, 0])).is_err());
        assert!(precision_recall_f1(&row(&[1]), &row(&[1, 0])).is_err());
    }

    #[test]
    fn prf_hand_counts() {
        assert_eq!(precision_recall_f1(&row(&[1, 1, 0, 0]), &row(&[1, 0, 1, 0])).unwrap(), (0.5, 0.5, 0.5));
        assert_eq!(precision_recall_f1(&row(&[1, 0]), &row(&[1, 0])).unwrap(), (1.0, 1.0, 1.0));
        let (p, r, f) = precision_recall_f1(&row(&[1, 1, 1, 1]), &row(&[1, 1, 0, 0])).unwrap();
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(precision_recall_f1(&row(&[0, 0]), &row(&[0, 0])).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(precision_recall_f1(&row(&[0, 0]), &row(&[1, 0])).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hamming_cases() {
        let a = BinaryMask::from_fn(10, 10, |_, _| false);
        let mut b = a.clone();
        b.set(3, 3, true);
        b.set(7, 1, true);
        assert_eq!(hamming_pct(&a, &b).unwrap(), 2.0);
        assert_eq!(hamming_pct(&a, &a).unwrap(), 0.0);
        let c = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(hamming_pct(&a, &c).unwrap(), 100.0);
    }

    #[test]
    fn pairwise_hamming_of_complements() {
        let a = BinaryMask::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        let b = BinaryMask::from_fn(4, 4, |x, y| (x + y) % 2 == 1);
        assert_eq!(mean_pairwise_hamming(&[vec![a.clone()], vec![b]]).unwrap(), 100.0);
        let five = vec![vec![a]; 5];
        assert_eq!(mean_pairwise_hamming(&five).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn f1_matches_iou(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
            let ma = BinaryMask { width: 8, height: 8, data: a, view_id: String::new() };
            let mb = BinaryMask { width: 8, height: 8, data: b, view_id: String::new() };
            let iou = miou(&ma, &mb).unwrap();
            let (_, _, f1) = precision_recall_f1(&ma, &mb).unwrap();
            prop_assert!((f1 - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
            prop_assert_eq!(iou, miou(&mb, &ma).unwrap());
        }
    }
}
