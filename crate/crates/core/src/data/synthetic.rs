//! Linear-Gaussian stand-in for an annotated face-video corpus.
//!
//! Each video carries a smooth latent trajectory `z(t) ∈ ℝᴸ`. Observed
//! features are `A·z + ε`; labels are pointwise functions of `z`:
//! `VA = tanh(B·z)`, `Expr = argmax(C·z)`, `AU = 1[D·z > 0]`. Because all
//! matrices are kept, the Bayes-optimal predictor is available:
//! `ẑ = A⁺·f`, then the same label maps applied to `ẑ`.

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use super::{DataError, Dataset, VideoRecord};
use crate::labels::{Task, TaskLabels, NUM_AU, NUM_EXPR};
use crate::objectives::{argmax_rows, score_labels};
use crate::tensor::Tensor;
use crate::Rng;

/// AR(1) coefficient of the latent process.
pub const LATENT_DECAY: f64 = 0.95;
/// Weight of the innovation term in the AR(1) update.
pub const LATENT_STEP: f64 = 0.05;
/// Half-width of the centred moving average applied to the latent track.
pub const SMOOTHING_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_videos: 10,
            frames_per_video: 600,
            latent_dim: 4,
            feature_dim: 32,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_videos == 0 || self.frames_per_video < 2 || self.latent_dim == 0 || self.feature_dim == 0 {
            return Err(DataError::Config(format!(
                "synthetic spec needs videos >= 1, frames >= 2, positive dims: {self:?}"
            )));
        }
        if self.feature_dim < self.latent_dim {
            return Err(DataError::Config(format!(
                "feature_dim {} < latent_dim {}: the latent is not recoverable",
                self.feature_dim, self.latent_dim
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DataError::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Row-major generator matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrices {
    pub latent_dim: usize,
    pub feature_dim: usize,
    /// `A: [feature_dim×latent_dim]`
    pub mixing: Vec<f64>,
    /// `B: [2×latent_dim]`
    pub va: Vec<f64>,
    /// `C: [8×latent_dim]`
    pub expr: Vec<f64>,
    /// `D: [12×latent_dim]`
    pub au: Vec<f64>,
    /// `A⁺: [latent_dim×feature_dim]`
    pub unmixing: Vec<f64>,
}

/// `out[r] = M[r,:]·z` for row-major `M` with `z.len()` columns.
fn apply(m: &[f64], z: &[f64]) -> Vec<f64> {
    m.chunks(z.len()).map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
}

impl GeneratorMatrices {
    fn sample(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Self, DataError> {
        let l = spec.latent_dim;
        let mut gauss = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
        };
        let mixing = gauss(spec.feature_dim * l, 1.0);
        let row_scale = 1.0 / (l as f64).sqrt();
        let va = gauss(2 * l, row_scale);
        let au = gauss(NUM_AU * l, row_scale);
        let raw = gauss(l * l, 1.0);
        let expr = if l * 2 >= NUM_EXPR {
            // ± rows of an orthogonal basis: every class equally likely
            let q = DMatrix::from_row_slice(l, l, &raw).qr().q();
            (0..NUM_EXPR)
                .flat_map(|c| {
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    let row = c / 2;
                    (0..l).map(move |j| (row, j, sign))
                })
                .map(|(row, j, sign)| sign * q[(row, j)])
                .collect()
        } else {
            gauss(NUM_EXPR * l, row_scale)
        };
        let a = DMatrix::from_row_slice(spec.feature_dim, l, &mixing);
        let pinv = a
            .pseudo_inverse(1e-12)
            .map_err(|e| DataError::Config(format!("pseudo-inverse failed: {e}")))?;
        let unmixing = (0..l).flat_map(|r| (0..spec.feature_dim).map(move |c| (r, c))).map(|(r, c)| pinv[(r, c)]).collect();
        Ok(GeneratorMatrices {
            latent_dim: l,
            feature_dim: spec.feature_dim,
            mixing,
            va,
            expr,
            au,
            unmixing,
        })
    }

    /// Labels implied by one latent vector.
    pub fn labels_of(&self, z: &[f64]) -> ([f64; 2], i64, [i8; NUM_AU]) {
        let v = apply(&self.va, z);
        let class = argmax_rows(&apply(&self.expr, z), NUM_EXPR)[0] as i64;
        let mut au = [0i8; NUM_AU];
        for (slot, x) in au.iter_mut().zip(apply(&self.au, z)) {
            *slot = (x > 0.0) as i8;
        }
        ([v[0].tanh(), v[1].tanh()], class, au)
    }

    /// Least-squares latent estimate `A⁺·f` for each row of `[n×feature_dim]`.
    pub fn recover_latent(&self, features: &Tensor) -> Vec<Vec<f64>> {
        features
            .data()
            .chunks(self.feature_dim)
            .map(|f| apply(&self.unmixing, f))
            .collect()
    }
}

/// Bayes-optimal scores on a set of videos.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OracleScores {
    pub ccc_v: f64,
    pub ccc_a: f64,
    pub expr_f1: f64,
    pub au_f1: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub matrices: GeneratorMatrices,
    /// Per video, row-major `[frames×latent_dim]`.
    pub latents: Vec<Vec<f64>>,
    pub dataset: Dataset,
}

fn smooth(track: &[f64], n: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * l];
    for t in 0..n {
        let lo = t.saturating_sub(SMOOTHING_RADIUS);
        let hi = (t + SMOOTHING_RADIUS).min(n - 1);
        for d in 0..l {
            let s: f64 = (lo..=hi).map(|u| track[u * l + d]).sum();
            out[t * l + d] = s / (hi - lo + 1) as f64;
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let matrices = GeneratorMatrices::sample(spec, &mut rng)?;
    let (n, l) = (spec.frames_per_video, spec.latent_dim);
    // innovation scale that gives the AR(1) process unit stationary variance
    let innovation = (1.0 - LATENT_DECAY * LATENT_DECAY).sqrt() / LATENT_STEP;
    let mut latents: Vec<Vec<f64>> = (0..spec.num_videos)
        .map(|_| {
            let mut z: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
            let mut track = Vec::with_capacity(n * l);
            for _ in 0..n {
                track.extend_from_slice(&z);
                for zi in z.iter_mut() {
                    let noise = innovation * rng.sample::<f64, _>(StandardNormal);
                    *zi = LATENT_DECAY * *zi + LATENT_STEP * noise;
                }
            }
            smooth(&track, n, l)
        })
        .collect();
    // rescale each latent dimension to unit variance over the whole corpus
    for d in 0..l {
        let values = latents.iter().flat_map(|v| v.iter().skip(d).step_by(l));
        let count = (spec.num_videos * n) as f64;
        let (sum, sq) = values.fold((0.0, 0.0), |(s, q), &x| (s + x, q + x * x));
        let var = sq / count - (sum / count).powi(2);
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        for v in &mut latents {
            v.iter_mut().skip(d).step_by(l).for_each(|x| *x *= scale);
        }
    }
    let width = (spec.num_videos.max(1) as f64).log10().floor() as usize + 1;
    let videos = latents
        .iter()
        .enumerate()
        .map(|(i, track)| {
            let mut feats = Vec::with_capacity(n * spec.feature_dim);
            let (mut va, mut expr, mut au) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for z in track.chunks(l) {
                for x in apply(&matrices.mixing, z) {
                    feats.push(x + spec.noise_std * rng.sample::<f64, _>(StandardNormal));
                }
                let (v, e, a) = matrices.labels_of(z);
                va.push(v);
                expr.push(e);
                au.push(a);
            }
            Ok(VideoRecord {
                video_id: format!("video{:0width$}", i + 1),
                features: Tensor::new(feats, &[n, spec.feature_dim])?,
                va: Some(TaskLabels::Va(va)),
                expr: Some(TaskLabels::Expr(expr)),
                au: Some(TaskLabels::Au(au)),
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(SyntheticDataset {
        spec: *spec,
        matrices,
        latents,
        dataset: Dataset { videos },
    })
}

impl SyntheticDataset {
    /// Oracle label tracks for one video's features.
    pub fn oracle_labels(&self, features: &Tensor) -> [TaskLabels; 3] {
        let (mut va, mut expr, mut au) = (Vec::new(), Vec::new(), Vec::new());
        for z in self.matrices.recover_latent(features) {
            let (v, e, a) = self.matrices.labels_of(&z);
            va.push(v);
            expr.push(e);
            au.push(a);
        }
        [TaskLabels::Va(va), TaskLabels::Expr(expr), TaskLabels::Au(au)]
    }

    /// Oracle scores pooled over the videos whose index is in `videos`.
    pub fn oracle_scores_for(&self, videos: &[usize]) -> Result<OracleScores, DataError> {
        let preds: Vec<[TaskLabels; 3]> = videos
            .iter()
            .map(|&i| self.oracle_labels(&self.dataset.videos[i].features))
            .collect();
        let gold = |i: usize, k: usize| -> &TaskLabels {
            let v = &self.dataset.videos[i];
            [&v.va, &v.expr, &v.au][k].as_ref().expect("synthetic videos carry every task")
        };
        let score = |k: usize| {
            let pairs: Vec<(&TaskLabels, &TaskLabels)> =
                videos.iter().zip(&preds).map(|(&i, p)| (&p[k], gold(i, k))).collect();
            score_labels(Task::ALL[k], &pairs)
        };
        let va = score(0)?;
        Ok(OracleScores {
            ccc_v: va.ccc_v.unwrap_or(f64::NAN),
            ccc_a: va.ccc_a.unwrap_or(f64::NAN),
            expr_f1: score(1)?.macro_f1.unwrap_or(f64::NAN),
            au_f1: score(2)?.macro_f1.unwrap_or(f64::NAN),
        })
    }

    pub fn oracle_scores(&self) -> Result<OracleScores, DataError> {
        let all: Vec<usize> = (0..self.dataset.videos.len()).collect();
        self.oracle_scores_for(&all)
    }
}

/// Renders latent states as small grayscale frames: a fixed smooth basis
/// image per latent dimension, mixed by `z` around mid-grey.
#[derive(Debug, Clone)]
pub struct FrameRenderer {
    pub height: usize,
    pub width: usize,
    basis: Vec<Vec<f64>>,
}

impl FrameRenderer {
    pub fn new(latent_dim: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed ^ 0x5EED_F4A3);
        let basis = (0..latent_dim)
            .map(|_| {
                let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.random_range(0.0..height as f64),
                            rng.random_range(0.0..width as f64),
                            rng.random_range(0.15..0.35) * height.min(width) as f64,
                            if rng.random::<bool>() { 1.0 } else { -1.0 },
                        )
                    })
                    .collect();
                (0..height * width)
                    .map(|p| {
                        let (y, x) = ((p / width) as f64, (p % width) as f64);
                        blobs
                            .iter()
                            .map(|&(cy, cx, s, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        FrameRenderer { height, width, basis }
    }

    /// `[h×w×1]` frame with pixels in [0, 1].
    pub fn render(&self, z: &[f64]) -> Tensor {
        let data = (0..self.height * self.width)
            .map(|p| {
                let v: f64 = self.basis.iter().zip(z).map(|(b, zi)| b[p] * zi).sum();
                (0.5 + 0.12 * v).clamp(0.0, 1.0)
            })
            .collect();
        Tensor::new(data, &[self.height, self.width, 1]).expect("positive frame extents")
    }
}

impl SyntheticDataset {
    /// Frames for video `index`, one per annotated frame.
    pub fn render_video(&self, index: usize, renderer: &FrameRenderer) -> Vec<Tensor> {
        self.latents[index]
            .chunks(self.spec.latent_dim)
            .map(|z| renderer.render(z))
            .collect()
    }
}
