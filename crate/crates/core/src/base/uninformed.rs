use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BaseSampler, Candidate, CompositionPool, Support, MAX_SAMPLE_ATTEMPTS};
use crate::crystal::Crystal;
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::geometry::{angle_to_unconstrained, unconstrained_to_angle};
use crate::real::Real;

/// Simple base without learned structure: uniform coordinates on the torus,
/// log-normal lengths and Gaussian unconstrained angles fitted per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UninformedBase {
    pub log_length_mean: [f64; 3],
    pub log_length_std: [f64; 3],
    pub angle_mean: [f64; 3],
    pub angle_std: [f64; 3],
    pub compositions: CompositionPool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    // a degenerate dataset still needs a proper distribution
    (mean, var.sqrt().max(1e-3))
}

impl UninformedBase {
    pub fn fit<T: Real>(dataset: &[Crystal<T>]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut log_length_mean = [0.0; 3];
        let mut log_length_std = [0.0; 3];
        let mut angle_mean = [0.0; 3];
        let mut angle_std = [0.0; 3];
        for k in 0..3 {
            let logs: Vec<f64> = dataset.iter().map(|c| c.lattice.lengths[k].to_f64_lossy().ln()).collect();
            (log_length_mean[k], log_length_std[k]) = mean_std(&logs);
            let us: Vec<f64> = dataset
                .iter()
                .filter_map(|c| angle_to_unconstrained(c.lattice.angles[k].to_f64_lossy()).ok())
                .collect();
            if us.is_empty() {
                return Err(Error::Empty("angles inside [60, 120]"));
            }
            (angle_mean[k], angle_std[k]) = mean_std(&us);
        }
        Ok(UninformedBase {
            log_length_mean,
            log_length_std,
            angle_mean,
            angle_std,
            compositions: CompositionPool::from_dataset(dataset),
        })
    }
}

impl<T: Real> BaseSampler<T> for UninformedBase {
    fn name(&self) -> String {
        "uninformed".into()
    }

    fn support(&self) -> Support {
        Support::Continuous
    }

    fn draw(&self, species: &[Element], mut rng: &mut dyn RngCore) -> Result<Candidate<T>> {
        let frac_coords = species.iter().map(|_| [0; 3].map(|_| T::lit(rng.random::<f64>()))).collect();
        let lengths = [0, 1, 2].map(|k| {
            let n = Normal::new(self.log_length_mean[k], self.log_length_std[k]).expect("finite fit");
            T::lit(n.sample(&mut rng).exp())
        });
        let mut angles = [T::zero(); 3];
        for k in 0..3 {
            let n = Normal::new(self.angle_mean[k], self.angle_std[k]).expect("finite fit");
            // the inverse map reaches (60, 180); redraw values above 120
            let mut value = None;
            for _ in 0..MAX_SAMPLE_ATTEMPTS {
                let a = unconstrained_to_angle(n.sample(&mut rng));
                if a <= 120.0 {
                    value = Some(a);
                    break;
                }
            }
            angles[k] = T::lit(value.ok_or_else(|| Error::Sampler("angle draws persistently above 120".into()))?);
        }
        Ok(Candidate { species: species.iter().map(|e| e.symbol().to_string()).collect(), frac_coords, lengths, angles })
    }
}
