//! Planar navigation: a square agent translating among disc obstacles,
//! observed as binary images.
//!
//! Pixel `(row, col)` has its center at `(col + 0.5, row + 0.5)` in arena
//! coordinates, so the image row indexes `y` and the column indexes `x`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("arena size must be a positive whole number of pixels, got {0}")]
    Arena(f64),
    #[error("max_action must be positive, got {0}")]
    MaxAction(f64),
    #[error("noise sigma must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error("agent half-width {0} does not fit the arena")]
    Agent(f64),
    #[error("obstacle {0} does not fit inside the arena")]
    Obstacle(usize),
    #[error("no obstacle-free position exists")]
    NoFreeSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanarState {
    pub position: [f64; 2],
}

impl PlanarState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { position: [x, y] }
    }

    pub fn distance(&self, other: &PlanarState) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        crate::math::sqrt(dx * dx + dy * dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvConfig {
    pub arena_size: f64,
    pub obstacle_centers: Vec<[f64; 2]>,
    pub obstacle_radius: f64,
    pub agent_half_width: f64,
    /// Per-axis action bound.
    pub max_action: f64,
    /// Standard deviation of the isotropic transition noise.
    pub noise_sigma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::planar(0.0)
    }
}

impl EnvConfig {
    /// 40×40 arena with two columns of three obstacles.
    pub fn planar(noise_sigma: f64) -> Self {
        let mut obstacle_centers = Vec::with_capacity(6);
        for x in [13.5, 26.5] {
            for y in [8.0, 20.0, 32.0] {
                obstacle_centers.push([x, y]);
            }
        }
        Self {
            arena_size: 40.0,
            obstacle_centers,
            obstacle_radius: 2.5,
            agent_half_width: 2.0,
            max_action: 3.0,
            noise_sigma,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let a = self.arena_size;
        if !(a >= 1.0) || libm::trunc(a) != a {
            return Err(EnvError::Arena(a));
        }
        if !(self.max_action > 0.0) || !self.max_action.is_finite() {
            return Err(EnvError::MaxAction(self.max_action));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(EnvError::Noise(self.noise_sigma));
        }
        if !(self.agent_half_width > 0.0) || 2.0 * self.agent_half_width > a {
            return Err(EnvError::Agent(self.agent_half_width));
        }
        let r = self.obstacle_radius;
        for (i, c) in self.obstacle_centers.iter().enumerate() {
            if !(r >= 0.0) || c.iter().any(|&v| v - r < 0.0 || v + r > a) {
                return Err(EnvError::Obstacle(i));
            }
        }
        Ok(())
    }

    /// Image side in pixels.
    pub fn side(&self) -> usize {
        self.arena_size as usize
    }

    pub fn n_x(&self) -> usize {
        self.side() * self.side()
    }

    /// Lowest and highest admissible coordinate of the agent center.
    pub fn bounds(&self) -> (f64, f64) {
        (self.agent_half_width, self.arena_size - self.agent_half_width)
    }

    pub fn clip_action(&self, u: [f64; 2]) -> [f64; 2] {
        let m = self.max_action;
        [u[0].clamp(-m, m), u[1].clamp(-m, m)]
    }

    /// Whether the agent square centered at `p` overlaps any obstacle.
    pub fn collides(&self, p: [f64; 2]) -> bool {
        let hw = self.agent_half_width;
        let r2 = self.obstacle_radius * self.obstacle_radius;
        self.obstacle_centers.iter().any(|c| {
            let qx = c[0].clamp(p[0] - hw, p[0] + hw);
            let qy = c[1].clamp(p[1] - hw, p[1] + hw);
            let (dx, dy) = (qx - c[0], qy - c[1]);
            dx * dx + dy * dy < r2
        })
    }

    pub fn is_valid(&self, s: &PlanarState) -> bool {
        let (lo, hi) = self.bounds();
        s.position.iter().all(|v| (lo..=hi).contains(v)) && !self.collides(s.position)
    }

    pub fn noise_distribution(&self) -> Normal<f64> {
        Normal::new(0.0, self.noise_sigma).expect("validated sigma")
    }
}

/// `s + clip(u) + noise`, projected onto the arena; moves whose end point
/// collides with an obstacle are rejected and `s` is returned.
pub fn step(cfg: &EnvConfig, s: &PlanarState, u: [f64; 2], noise: [f64; 2]) -> PlanarState {
    let u = cfg.clip_action(u);
    let (lo, hi) = cfg.bounds();
    let mut p = [0.0; 2];
    for i in 0..2 {
        let v = s.position[i] + u[i] + noise[i];
        // NaN inputs fall back to the current position.
        p[i] = if v.is_nan() { s.position[i] } else { v.clamp(lo, hi) };
    }
    if cfg.collides(p) {
        *s
    } else {
        PlanarState { position: p }
    }
}

/// Draws `N(0, σ²I)` transition noise.
pub fn sample_noise<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> [f64; 2] {
    if cfg.noise_sigma == 0.0 {
        return [0.0; 2];
    }
    let d = cfg.noise_distribution();
    [d.sample(rng), d.sample(rng)]
}

pub fn sample_action<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> [f64; 2] {
    let m = cfg.max_action;
    [rng.random_range(-m..=m), rng.random_range(-m..=m)]
}

/// Uniform over valid states by rejection.
pub fn sample_state<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<PlanarState, EnvError> {
    sample_state_in(cfg, cfg.bounds(), cfg.bounds(), rng)
}

/// Uniform over valid states inside the box `x_range × y_range`.
pub fn sample_state_in<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    x_range: (f64, f64),
    y_range: (f64, f64),
    rng: &mut R,
) -> Result<PlanarState, EnvError> {
    for _ in 0..100_000 {
        let s = PlanarState::new(
            rng.random_range(x_range.0..=x_range.1),
            rng.random_range(y_range.0..=y_range.1),
        );
        if cfg.is_valid(&s) {
            return Ok(s);
        }
    }
    Err(EnvError::NoFreeSpace)
}

fn paint_obstacles(cfg: &EnvConfig, img: &mut [f64]) {
    let side = cfg.side();
    let r2 = cfg.obstacle_radius * cfg.obstacle_radius;
    for row in 0..side {
        let cy = row as f64 + 0.5;
        for col in 0..side {
            let cx = col as f64 + 0.5;
            let hit = cfg.obstacle_centers.iter().any(|c| {
                let (dx, dy) = (cx - c[0], cy - c[1]);
                dx * dx + dy * dy <= r2
            });
            if hit {
                img[row * side + col] = 1.0;
            }
        }
    }
}

/// Pixel indices `[first, first + width)` whose centers lie in `[p − hw, p + hw)`.
fn covered(p: f64, hw: f64, side: usize) -> core::ops::Range<usize> {
    let first = libm::ceil(p - hw - 0.5).max(0.0) as usize;
    let end = (libm::ceil(p + hw - 0.5).max(0.0) as usize).min(side);
    first.min(end)..end
}

/// Image containing only the obstacles.
pub fn render_background(cfg: &EnvConfig) -> Vec<f64> {
    let mut img = vec![0.0; cfg.n_x()];
    paint_obstacles(cfg, &mut img);
    img
}

/// Binary image of the obstacles and the agent square, row-major.
pub fn render(cfg: &EnvConfig, s: &PlanarState) -> Vec<f64> {
    let mut img = render_background(cfg);
    let side = cfg.side();
    let hw = cfg.agent_half_width;
    for row in covered(s.position[1], hw, side) {
        for col in covered(s.position[0], hw, side) {
            img[row * side + col] = 1.0;
        }
    }
    img
}

/// One training or evaluation sample. Ground-truth states are kept for
/// evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTriple {
    pub x_t: Vec<f64>,
    pub u_t: Vec<f64>,
    pub x_next: Vec<f64>,
    pub s_t: PlanarState,
    pub s_next: PlanarState,
}

/// Triple `i` uses its own stream of a ChaCha8 generator seeded by `seed`,
/// so any triple can be regenerated independently.
pub fn generate_triple(cfg: &EnvConfig, seed: u64, index: u64) -> Result<ObservationTriple, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s_t = sample_state(cfg, &mut rng)?;
    let u = sample_action(cfg, &mut rng);
    let noise = sample_noise(cfg, &mut rng);
    let s_next = step(cfg, &s_t, u, noise);
    Ok(ObservationTriple {
        x_t: render(cfg, &s_t),
        u_t: u.to_vec(),
        x_next: render(cfg, &s_next),
        s_t,
        s_next,
    })
}

pub fn generate_dataset(cfg: &EnvConfig, n: usize, seed: u64) -> Result<Vec<ObservationTriple>, EnvError> {
    cfg.validate()?;
    (0..n as u64).map(|i| generate_triple(cfg, seed, i)).collect()
}
