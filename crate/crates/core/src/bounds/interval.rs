use ndarray::{Array2, Zip};

use super::BoundsError;
use crate::scalar::Scalar;

/// Element-wise interval `[lower, upper]` over a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix<T> {
    lower: Array2<T>,
    upper: Array2<T>,
}

impl<T: Scalar> IntervalMatrix<T> {
    pub fn new(lower: Array2<T>, upper: Array2<T>) -> Result<Self, BoundsError> {
        if lower.dim() != upper.dim() {
            return Err(BoundsError::DimensionMismatch(format!(
                "lower {:?} vs upper {:?}",
                lower.dim(),
                upper.dim()
            )));
        }
        if let Some(((i, j), _)) = lower
            .indexed_iter()
            .find(|&((i, j), l)| !(*l <= upper[[i, j]]))
        {
            return Err(BoundsError::InvalidInterval { row: i, col: j });
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate interval `[a, a]`.
    pub fn point(a: Array2<T>) -> Self {
        Self {
            lower: a.clone(),
            upper: a,
        }
    }

    pub(crate) fn from_parts_unchecked(lower: Array2<T>, upper: Array2<T>) -> Self {
        debug_assert_eq!(lower.dim(), upper.dim());
        Self { lower, upper }
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    pub fn upper(&self) -> &Array2<T> {
        &self.upper
    }

    pub fn dim(&self) -> (usize, usize) {
        self.lower.dim()
    }

    pub fn width(&self) -> Array2<T> {
        &self.upper - &self.lower
    }

    pub fn max_width(&self) -> T {
        self.width().iter().copied().fold(T::zero(), T::max)
    }

    /// Whether `a` lies inside the interval, with absolute slack `tol`.
    pub fn contains(&self, a: &Array2<T>, tol: T) -> bool {
        a.dim() == self.dim()
            && Zip::from(a)
                .and(&self.lower)
                .and(&self.upper)
                .all(|&v, &l, &u| v >= l - tol && v <= u + tol)
    }

    /// Interval sum.
    pub fn add(&self, other: &Self) -> Self {
        Self {
            lower: &self.lower + &other.lower,
            upper: &self.upper + &other.upper,
        }
    }

    pub fn shift(&self, c: T) -> Self {
        Self {
            lower: &self.lower + c,
            upper: &self.upper + c,
        }
    }

    /// Sub-block `rows x cols`.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let pick = |a: &Array2<T>| Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| a[[rows[i], cols[j]]]);
        Self {
            lower: pick(&self.lower),
            upper: pick(&self.upper),
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<T>, &mut Array2<T>) {
        (&mut self.lower, &mut self.upper)
    }

    /// Makes both endpoints symmetric, widening outward. Entries whose
    /// endpoints crossed by rounding are reordered.
    pub(crate) fn symmetrize_outward(&mut self) {
        let n = self.lower.nrows();
        for i in 0..n {
            for j in i..n {
                let (a, b) = (self.lower[[i, j]], self.lower[[j, i]]);
                let (c, d) = (self.upper[[i, j]], self.upper[[j, i]]);
                let l = a.min(b).min(c).min(d);
                let u = c.max(d).max(a).max(b);
                self.lower[[i, j]] = l;
                self.lower[[j, i]] = l;
                self.upper[[i, j]] = u;
                self.upper[[j, i]] = u;
            }
        }
    }
}

/// `[M L M^T, M U M^T]`, valid because every entry of `M` is non-negative.
pub fn sigma_interval_propagate<T: Scalar>(
    m: &Array2<T>,
    inner: &IntervalMatrix<T>,
) -> Result<IntervalMatrix<T>, BoundsError> {
    if m.ncols() != inner.dim().0 || inner.dim().0 != inner.dim().1 {
        return Err(BoundsError::DimensionMismatch(format!(
            "multiplier {:?} vs interval {:?}",
            m.dim(),
            inner.dim()
        )));
    }
    if let Some(((i, j), _)) = m.indexed_iter().find(|(_, v)| !(**v >= T::zero())) {
        return Err(BoundsError::PropagationInvalid { row: i, col: j });
    }
    let mt = m.t();
    Ok(IntervalMatrix {
        lower: m.dot(&inner.lower).dot(&mt),
        upper: m.dot(&inner.upper).dot(&mt),
    })
}

/// Entry-wise interval product: endpoints are the min and max of the four
/// endpoint products.
pub fn hadamard_interval<T: Scalar>(
    a: &IntervalMatrix<T>,
    b: &IntervalMatrix<T>,
) -> Result<IntervalMatrix<T>, BoundsError> {
    if a.dim() != b.dim() {
        return Err(BoundsError::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let mut lower = Array2::zeros(a.dim());
    let mut upper = Array2::zeros(a.dim());
    Zip::from(&mut lower)
        .and(&mut upper)
        .and(&a.lower)
        .and(&a.upper)
        .and(&b.lower)
        .and(&b.upper)
        .for_each(|lo, hi, &al, &au, &bl, &bu| {
            if al >= T::zero() && bl >= T::zero() {
                *lo = al * bl;
                *hi = au * bu;
            } else {
                let p = [al * bl, al * bu, au * bl, au * bu];
                *lo = p.iter().copied().fold(T::infinity(), T::min);
                *hi = p.iter().copied().fold(T::neg_infinity(), T::max);
            }
        });
    Ok(IntervalMatrix { lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hadamard_examples() {
        let a = IntervalMatrix::new(array![[1.0, -1.0]], array![[2.0, 2.0]]).unwrap();
        let b = IntervalMatrix::new(array![[3.0, 0.0]], array![[4.0, 1.0]]).unwrap();
        let c = hadamard_interval(&a, &b).unwrap();
        assert_eq!(c.lower(), &array![[3.0, -1.0]]);
        assert_eq!(c.upper(), &array![[8.0, 2.0]]);
    }

    #[test]
    fn propagate_identity_and_scaling() {
        let i = IntervalMatrix::new(array![[1.0, -2.0], [-2.0, 0.5]], array![[3.0, 1.0], [1.0, 4.0]]).unwrap();
        let eye = Array2::<f64>::eye(2);
        assert_eq!(sigma_interval_propagate(&eye, &i).unwrap(), i);
        let two = &eye * 2.0;
        let p = sigma_interval_propagate(&two, &i).unwrap();
        assert_eq!(p.lower(), &(i.lower() * 4.0));
        assert_eq!(p.upper(), &(i.upper() * 4.0));
    }

    #[test]
    fn negative_multiplier_rejected() {
        let i = IntervalMatrix::point(Array2::<f64>::eye(2));
        let m = array![[1.0, -0.1], [0.0, 1.0]];
        assert!(matches!(
            sigma_interval_propagate(&m, &i),
            Err(BoundsError::PropagationInvalid { row: 0, col: 1 })
        ));
    }

    #[test]
    fn inverted_interval_rejected() {
        assert!(matches!(
            IntervalMatrix::new(array![[1.0, 0.0]], array![[0.0, 0.0]]),
            Err(BoundsError::InvalidInterval { row: 0, col: 0 })
        ));
    }
}
