use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DatagenError, GeneratorConfig, LATENT_DIM};
use crate::model::Lab;
use crate::scalar::softplus;

/// Frequency of the deterministic teacher noise.
const NOISE_FREQ: f64 = 5.0;

/// Fixed mixing maps shared by every patient generated from one `mixing_seed`.
#[derive(Debug, Clone)]
pub struct Mixing {
    /// `E × d_x`, orthogonal columns.
    pub physiology: DMatrix<f64>,
    /// `E × d_p`, range orthogonal to `physiology`.
    pub identity: DMatrix<f64>,
    /// One `d_p` centre per identity cluster.
    pub centres: Vec<Vec<f64>>,
    pub teachers: Teachers,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

impl Mixing {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self, DatagenError> {
        let e = cfg.embed_dim;
        let r = cfg.identity_rank;
        if e < LATENT_DIM + r {
            return Err(DatagenError::InvalidConfig(format!(
                "embed_dim {e} must be at least {} (latent) + {r} (identity rank)",
                LATENT_DIM
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.mixing_seed);
        let q = normal_matrix(&mut rng, e, LATENT_DIM + r).qr().q();
        let physiology = q.columns(0, LATENT_DIM).into_owned();
        let q_id = q.columns(LATENT_DIM, r).into_owned();
        let m = normal_matrix(&mut rng, r, cfg.pvector_dim) * cfg.identity_gain;
        let identity = q_id * m;
        let scale = 1.0 / (cfg.pvector_dim as f64).sqrt();
        let centres = (0..cfg.identity_clusters)
            .map(|_| {
                (0..cfg.pvector_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect()
            })
            .collect();
        let unmix = physiology
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| DatagenError::InvalidConfig(e.to_string()))?;
        let probes = std::array::from_fn(|_| {
            let v: Vec<f64> = (0..e).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        });
        let phases = std::array::from_fn(|i| 0.7 + 1.3 * i as f64);
        Ok(Self {
            physiology,
            identity,
            centres,
            teachers: Teachers {
                unmix,
                probes,
                phases,
                noise: cfg.teacher_noise,
            },
        })
    }

    /// `A_x x + A_p p`, noise-free.
    pub fn embed(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let e = self.physiology.nrows();
        (0..e)
            .map(|i| {
                let a: f64 = x.iter().enumerate().map(|(j, &v)| self.physiology[(i, j)] * v).sum();
                let b: f64 = p.iter().enumerate().map(|(j, &v)| self.identity[(i, j)] * v).sum();
                a + b
            })
            .collect()
    }
}

/// The four frozen lab teachers: a lab-specific nonlinearity of the unmixed
/// window-mean physiology plus a fixed pseudo-noise term.
#[derive(Debug, Clone)]
pub struct Teachers {
    unmix: DMatrix<f64>,
    probes: [Vec<f64>; 4],
    phases: [f64; 4],
    noise: f64,
}

/// Ground-truth lab response to latent physiology `(deterioration, clock, u, v)`.
pub fn lab_response(lab: Lab, x: &[f64]) -> f64 {
    let (d, c, u, v) = (x[0], x[1], x[2], x[3]);
    match lab {
        Lab::Lac => softplus(1.2 * d + 0.3 * u) - 0.7,
        Lab::Na => (u - 0.4 * d).tanh() + 0.15 * v * v,
        Lab::Trop => (0.5 * d - 0.2 * c).exp() - 1.2,
        Lab::K => (1.3 * v).sin() + 0.25 * d * u,
    }
}

impl Teachers {
    /// Estimated latent state from the mean embedding of a window.
    pub fn unmix(&self, window: &[Vec<f64>]) -> Result<Vec<f64>, DatagenError> {
        let mean = window_mean(window, self.unmix.ncols())?;
        Ok((0..self.unmix.nrows())
            .map(|i| (0..mean.len()).map(|j| self.unmix[(i, j)] * mean[j]).sum())
            .collect())
    }

    pub fn eval(&self, lab: Lab, window: &[Vec<f64>]) -> Result<f64, DatagenError> {
        let x = self.unmix(window)?;
        let mean = window_mean(window, self.unmix.ncols())?;
        let i = lab.index();
        let proj: f64 = self.probes[i].iter().zip(&mean).map(|(a, b)| a * b).sum();
        Ok(lab_response(lab, &x) + self.noise * (NOISE_FREQ * proj + self.phases[i]).sin())
    }

    pub fn eval_named(&self, lab: &str, window: &[Vec<f64>]) -> Result<f64, DatagenError> {
        let lab = Lab::parse(lab).ok_or_else(|| DatagenError::UnknownLab(lab.to_string()))?;
        self.eval(lab, window)
    }
}

fn window_mean(window: &[Vec<f64>], dim: usize) -> Result<Vec<f64>, DatagenError> {
    if window.is_empty() {
        return Err(DatagenError::InvalidConfig("empty teacher window".into()));
    }
    let mut mean = vec![0.0; dim];
    for row in window {
        if row.len() != dim {
            return Err(DatagenError::InvalidConfig(format!(
                "window row has width {}, expected {dim}",
                row.len()
            )));
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = window.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_invisible_to_teachers() {
        let cfg = GeneratorConfig::default();
        let mix = Mixing::new(&cfg).unwrap();
        let x = [0.4, -0.3, 1.1, 0.2];
        let with_id = mix.embed(&x, &mix.centres[1]);
        let without: Vec<f64> = mix.embed(&x, &vec![0.0; cfg.pvector_dim]);
        let a = mix.teachers.unmix(&[with_id]).unwrap();
        let b = mix.teachers.unmix(&[without]).unwrap();
        for ((ai, bi), xi) in a.iter().zip(&b).zip(&x) {
            assert!((ai - bi).abs() < 1e-10);
            assert!((ai - xi).abs() < 1e-10);
        }
    }

    #[test]
    fn teachers_are_frozen_and_distinct() {
        let mix = Mixing::new(&GeneratorConfig::default()).unwrap();
        let w = vec![mix.embed(&[0.8, 0.4, -0.5, 0.9], &mix.centres[0]); 3];
        let vals: Vec<f64> = Lab::ALL.iter().map(|&l| mix.teachers.eval(l, &w).unwrap()).collect();
        for (i, &l) in Lab::ALL.iter().enumerate() {
            assert_eq!(mix.teachers.eval(l, &w).unwrap().to_bits(), vals[i].to_bits());
            for j in 0..i {
                assert!((vals[i] - vals[j]).abs() > 1e-3);
            }
        }
        assert!(matches!(
            mix.teachers.eval_named("glucose", &w),
            Err(DatagenError::UnknownLab(_))
        ));
    }

    #[test]
    fn too_narrow_embedding_rejected() {
        let cfg = GeneratorConfig {
            embed_dim: 6,
            ..Default::default()
        };
        assert!(Mixing::new(&cfg).is_err());
    }
}
