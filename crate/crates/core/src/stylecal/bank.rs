use crate::error::{Error, Result};
use crate::spectral::AmplitudeMap;
use crate::tensor::{lit, Real, Tensor};

/// A finalized prototype and the epoch whose statistics produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototype<T: Real> {
    pub map: AmplitudeMap<T>,
    pub epoch: usize,
}

/// Running mean of source amplitude maps.
///
/// Holds a sum and a count rather than every batch; the mean is the same.
/// Sums are kept in f64 regardless of the run precision.
#[derive(Clone, Debug)]
pub struct PrototypeBank<T: Real> {
    item_shape: Option<[usize; 3]>,
    sum: Vec<f64>,
    count: usize,
    prototype: Option<Prototype<T>>,
}

impl<T: Real> Default for PrototypeBank<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> PrototypeBank<T> {
    pub fn new() -> Self {
        PrototypeBank {
            item_shape: None,
            sum: Vec::new(),
            count: 0,
            prototype: None,
        }
    }

    /// Bank that already holds a persisted prototype (e.g. from a checkpoint).
    pub fn with_prototype(prototype: Prototype<T>) -> Self {
        let [_, c, h, w] = prototype.map.shape();
        PrototypeBank {
            item_shape: Some([c, h, w]),
            sum: vec![0.0; c * h * w],
            count: 0,
            prototype: Some(prototype),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn item_shape(&self) -> Option<[usize; 3]> {
        self.item_shape
    }

    /// Current accumulator contents, `(sum, count)`.
    pub fn running_sum(&self) -> (&[f64], usize) {
        (&self.sum, self.count)
    }

    /// The most recently finalized prototype.
    pub fn prototype(&self) -> Option<&Prototype<T>> {
        self.prototype.as_ref()
    }

    pub fn set_prototype(&mut self, prototype: Prototype<T>) -> Result<()> {
        let [n, c, h, w] = prototype.map.shape();
        if n != 1 {
            return Err(Error::shape("set_prototype", [1, c, h, w], prototype.map.shape()));
        }
        self.check_item_shape([c, h, w])?;
        self.prototype = Some(prototype);
        Ok(())
    }

    fn check_item_shape(&mut self, shape: [usize; 3]) -> Result<()> {
        match self.item_shape {
            Some(s) if s != shape => Err(Error::shape(
                "bank_update",
                [1, s[0], s[1], s[2]],
                [1, shape[0], shape[1], shape[2]],
            )),
            Some(_) => Ok(()),
            None => {
                self.item_shape = Some(shape);
                self.sum = vec![0.0; shape.iter().product()];
                Ok(())
            }
        }
    }

    /// Adds every map of the batch to the running sum.
    pub fn update(&mut self, amps: &AmplitudeMap<T>) -> Result<()> {
        let [n, c, h, w] = amps.shape();
        self.check_item_shape([c, h, w])?;
        let t = amps.tensor();
        for i in 0..n {
            for (s, &v) in self.sum.iter_mut().zip(t.item(i)) {
                *s += v.to_f64_lossy();
            }
        }
        self.count += n;
        Ok(())
    }

    /// Mean of everything seen since the last finalization. The result
    /// becomes the current prototype, tagged with `epoch`, and the
    /// accumulator is reset.
    pub fn finalize(&mut self, epoch: usize) -> Result<AmplitudeMap<T>> {
        let Some([c, h, w]) = self.item_shape else {
            return Err(Error::EmptyBank);
        };
        if self.count == 0 {
            return Err(Error::EmptyBank);
        }
        let inv = 1.0 / self.count as f64;
        let data = self.sum.iter().map(|&s| lit::<T>((s * inv).max(0.0))).collect();
        let map = AmplitudeMap(Tensor::from_vec([1, c, h, w], data)?);
        self.sum.fill(0.0);
        self.count = 0;
        self.prototype = Some(Prototype {
            map: map.clone(),
            epoch,
        });
        Ok(map)
    }
}
