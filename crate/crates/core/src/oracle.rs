//! Brute-force time-bin collision simulator.
//!
//! The waveguide is a conveyor of time bins; bin `n` meets the emitter during
//! step `n` through the exact [`CollisionUnitary`]. The state is a sparse map
//! from occupied-bin lists to emitter amplitudes, truncated at `n_max`
//! photons.
//!
//! Entries whose emitter is in the ground manifold and whose photons are all
//! in other bins only precess. They are stored in a shared ground frame `F`
//! (true ground amplitude = `F * stored`), which is advanced by one 2×2
//! product per step instead of touching every entry.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use nalgebra::Matrix2;
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::amplitudes::{f_coefficient, lambda_all, InnerIntegral, SpinLabelPair, Wavepacket};
use crate::error::{Error, Result};
use crate::kraus::{collision_index, CollisionUnitary, EmitterOperator, MAX_GAMMA_DT};
use crate::params::{MagneticSample, Polarization, Spin, GAMMA};
use crate::C64;

pub const DEFAULT_N_MAX: usize = 2;
/// Largest excited population tolerated by the re-excitation swap.
pub const SWAP_TOLERANCE: f64 = 0.05;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Sorted `(bin, polarization)` list of occupied photon modes.
pub type PhotonKey = SmallVec<[(u32, Polarization); 2]>;

fn photons_in_bin(key: &PhotonKey, bin: u32) -> (usize, usize, PhotonKey) {
    let mut r = 0;
    let mut l = 0;
    let mut base = PhotonKey::new();
    for &(b, p) in key {
        if b == bin {
            match p {
                Polarization::R => r += 1,
                Polarization::L => l += 1,
            }
        } else {
            base.push((b, p));
        }
    }
    (r, l, base)
}

fn with_photons(base: &PhotonKey, bin: u32, r: usize, l: usize) -> PhotonKey {
    let mut key = base.clone();
    if r == 1 {
        key.push((bin, Polarization::R));
    }
    if l == 1 {
        key.push((bin, Polarization::L));
    }
    key.sort_unstable();
    key
}

fn first_bin_after(key: &PhotonKey, step: u32) -> Option<u32> {
    key.iter().map(|&(b, _)| b).filter(|&b| b >= step).min()
}

fn is_ground(amp: &[C64; 4]) -> bool {
    amp[2] == ZERO && amp[3] == ZERO
}

fn add4(dst: &mut [C64; 4], src: &[C64; 4]) {
    for i in 0..4 {
        dst[i] += src[i];
    }
}

/// Spin–photon wavefunction on the time-bin lattice.
#[derive(Debug, Clone)]
pub struct LatticeState {
    delta_t: f64,
    n_max: usize,
    step: u32,
    active: HashMap<PhotonKey, [C64; 4]>,
    passive: HashMap<PhotonKey, [C64; 2]>,
    frame: Matrix2<C64>,
    future: BTreeMap<u32, Vec<PhotonKey>>,
    leakage: f64,
}

impl LatticeState {
    /// Empty state positioned before bin `start_step`.
    pub fn new(delta_t: f64, start_step: u32) -> Result<Self> {
        if !(delta_t > 0.0) || GAMMA * delta_t > MAX_GAMMA_DT {
            return Err(Error::TruncationValidity {
                delta_t: GAMMA * delta_t,
            });
        }
        Ok(LatticeState {
            delta_t,
            n_max: DEFAULT_N_MAX,
            step: start_step,
            active: HashMap::new(),
            passive: HashMap::new(),
            frame: Matrix2::identity(),
            future: BTreeMap::new(),
            leakage: 0.0,
        })
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    /// Emitter state `emitter` with an empty waveguide.
    pub fn vacuum(delta_t: f64, emitter: [C64; 4]) -> Result<Self> {
        let mut s = Self::new(delta_t, 0)?;
        s.insert(PhotonKey::new(), emitter);
        Ok(s)
    }

    /// Emitter state times one incoming photon of polarization `pol` whose
    /// mode is sampled at bin centres over `n_bins` bins and renormalized.
    pub fn with_input_photon(
        delta_t: f64,
        emitter: [C64; 4],
        pol: Polarization,
        input: &Wavepacket,
        n_bins: u32,
    ) -> Result<Self> {
        let mut s = Self::new(delta_t, 0)?;
        let amps: Vec<C64> = (0..n_bins)
            .map(|k| input.eval((k as f64 + 0.5) * delta_t) * delta_t.sqrt())
            .collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Unnormalized { norm });
        }
        for (k, a) in amps.into_iter().enumerate() {
            if a == ZERO {
                continue;
            }
            let key: PhotonKey = smallvec::smallvec![(k as u32, pol)];
            s.insert(key, emitter.map(|e| e * a / norm));
        }
        Ok(s)
    }

    /// Adds `amp` to the amplitude of `key`.
    pub fn insert(&mut self, key: PhotonKey, amp: [C64; 4]) {
        let mut key = key;
        key.sort_unstable();
        add4(self.active.entry(key).or_insert([ZERO; 4]), &amp);
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    /// Index of the next bin to interact.
    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.delta_t
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Probability discarded because it would exceed `n_max` photons.
    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    pub fn amplitude(&self, key: &PhotonKey) -> [C64; 4] {
        let mut out = self.active.get(key).copied().unwrap_or([ZERO; 4]);
        if let Some(p) = self.passive.get(key) {
            let g = self.frame * nalgebra::Vector2::new(p[0], p[1]);
            out[0] += g[0];
            out[1] += g[1];
        }
        out
    }

    /// All nonzero entries with true amplitudes, sorted by key.
    pub fn entries(&self) -> Vec<(PhotonKey, [C64; 4])> {
        let mut merged: HashMap<PhotonKey, [C64; 4]> = self.active.clone();
        for (k, p) in &self.passive {
            let g = self.frame * nalgebra::Vector2::new(p[0], p[1]);
            add4(merged.entry(k.clone()).or_insert([ZERO; 4]), &[g[0], g[1], ZERO, ZERO]);
        }
        let mut v: Vec<_> = merged.into_iter().collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries()
            .iter()
            .map(|(_, a)| a.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    pub fn excited_population(&self) -> f64 {
        self.active.values().map(|a| a[2].norm_sqr() + a[3].norm_sqr()).sum()
    }

    /// Applies an instantaneous emitter operation to every entry.
    pub fn apply_emitter(&mut self, op: &EmitterOperator) {
        let entries = self.entries();
        self.active.clear();
        self.passive.clear();
        self.future.clear();
        self.frame = Matrix2::identity();
        for (k, a) in entries {
            self.active.insert(k, op.apply(&a));
        }
    }

    /// Instantaneous population swap `|s, g> <-> |s, e>` modelling the
    /// re-excitation pulse; the emitter must be (nearly) in its ground manifold.
    pub fn excitation_pulse(&mut self) -> Result<()> {
        let population = self.excited_population();
        if population > SWAP_TOLERANCE {
            return Err(Error::EmitterNotInGround { population });
        }
        let mut m = nalgebra::Matrix4::zeros();
        for (a, b) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
            m[(a, b)] = C64::new(1.0, 0.0);
        }
        self.apply_emitter(&EmitterOperator(m));
        Ok(())
    }

    fn park(&mut self, key: PhotonKey, ground: [C64; 2]) {
        let inv = self.frame.adjoint();
        let stored = inv * nalgebra::Vector2::new(ground[0], ground[1]);
        if let Some(bin) = first_bin_after(&key, self.step) {
            self.future.entry(bin).or_default().push(key.clone());
        }
        let e = self.passive.entry(key).or_insert([ZERO; 2]);
        e[0] += stored[0];
        e[1] += stored[1];
    }

    fn advance(&mut self, u: &CollisionUnitary) {
        let n = self.step;
        // Passive entries holding a photon in bin n must meet the emitter now.
        if let Some(keys) = self.future.remove(&n) {
            for key in keys {
                if let Some(p) = self.passive.remove(&key) {
                    let g = self.frame * nalgebra::Vector2::new(p[0], p[1]);
                    add4(self.active.entry(key).or_insert([ZERO; 4]), &[g[0], g[1], ZERO, ZERO]);
                }
            }
        }
        let mut groups: HashMap<PhotonKey, [C64; 16]> = HashMap::with_capacity(self.active.len());
        for (key, amp) in self.active.drain() {
            let (r, l, base) = photons_in_bin(&key, n);
            let v = groups.entry(base).or_insert([ZERO; 16]);
            for e in 0..4 {
                v[collision_index(e, r, l)] += amp[e];
            }
        }
        let m = u.matrix();
        let frame_step = u.emitter_block((0, 0), (0, 0)).ground_block();
        self.frame = frame_step * self.frame;
        self.step += 1;
        for (base, input) in groups {
            let mut out = [ZERO; 16];
            for (c, x) in input.iter().enumerate() {
                if *x == ZERO {
                    continue;
                }
                for (r, o) in out.iter_mut().enumerate() {
                    let coef = m[(r, c)];
                    if coef != ZERO {
                        *o += coef * x;
                    }
                }
            }
            for r in 0..2 {
                for l in 0..2 {
                    let amp = [
                        out[collision_index(0, r, l)],
                        out[collision_index(1, r, l)],
                        out[collision_index(2, r, l)],
                        out[collision_index(3, r, l)],
                    ];
                    if amp.iter().all(|z| *z == ZERO) {
                        continue;
                    }
                    let key = with_photons(&base, n, r, l);
                    if key.len() > self.n_max {
                        self.leakage += amp.iter().map(|z| z.norm_sqr()).sum::<f64>();
                        continue;
                    }
                    if is_ground(&amp) {
                        self.park(key, [amp[0], amp[1]]);
                    } else {
                        add4(self.active.entry(key).or_insert([ZERO; 4]), &amp);
                    }
                }
            }
        }
    }

    /// Text dump: `#`-header with `delta_t`, `n_bins`, `n_max`, then one row
    /// per nonzero amplitude: `emitter_index key re im`, where `key` is
    /// `bin:R|L` items joined by `;` (or `-` for the vacuum).
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# delta_t={:.17e}", self.delta_t)?;
        writeln!(out, "# n_bins={}", self.step)?;
        writeln!(out, "# n_max={}", self.n_max)?;
        writeln!(out, "# leakage={:.17e}", self.leakage)?;
        for (key, amp) in self.entries() {
            let label = if key.is_empty() {
                "-".to_string()
            } else {
                key.iter()
                    .map(|(b, p)| format!("{b}:{}", if *p == Polarization::R { 'R' } else { 'L' }))
                    .collect::<Vec<_>>()
                    .join(";")
            };
            for (e, z) in amp.iter().enumerate() {
                if *z != ZERO {
                    writeln!(out, "{e} {label} {:.17e} {:.17e}", z.re, z.im)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs `n_steps` collisions.
pub fn evolve(initial: LatticeState, sample: &MagneticSample, n_steps: u32) -> Result<LatticeState> {
    let u = CollisionUnitary::new(initial.delta_t, sample)?;
    let start = initial.norm_sqr();
    let mut state = initial;
    for _ in 0..n_steps {
        state.advance(&u);
    }
    let drift = (state.norm_sqr() + state.leakage - start).abs();
    let allowed = 1e-8 * (n_steps.max(1) as f64);
    if drift > allowed {
        return Err(Error::NormDrift { drift, allowed });
    }
    Ok(state)
}

/// Number of bins and the adjusted step so `n * delta_t` hits `t` exactly.
pub fn discretize(t: f64, delta_t: f64) -> Result<(u32, f64)> {
    if !(t > 0.0) || !(delta_t > 0.0) {
        return Err(Error::param("t, delta_t", "must be > 0"));
    }
    let n = (t / delta_t).round().max(1.0) as u32;
    let dt = t / n as f64;
    if GAMMA * dt > MAX_GAMMA_DT {
        return Err(Error::TruncationValidity { delta_t: GAMMA * dt });
    }
    Ok((n, dt))
}

fn excited(spin: Spin) -> [C64; 4] {
    let mut e = [ZERO; 4];
    e[2 + spin.index()] = C64::new(1.0, 0.0);
    e
}

fn ground(spin: Spin) -> [C64; 4] {
    let mut e = [ZERO; 4];
    e[spin.index()] = C64::new(1.0, 0.0);
    e
}

/// One-photon amplitudes indexed `[pol][bin][final spin]`.
#[derive(Debug, Clone)]
pub struct PhotonSector {
    pub delta_t: f64,
    /// Time of the first bin.
    pub t_start: f64,
    pub amplitudes: [Vec<[C64; 2]>; 2],
}

impl PhotonSector {
    fn from_state(state: &LatticeState, first_bin: u32, n_bins: u32) -> Self {
        let mut amplitudes = [vec![[ZERO; 2]; n_bins as usize], vec![[ZERO; 2]; n_bins as usize]];
        for (key, amp) in state.entries() {
            if key.len() == 1 {
                let (bin, pol) = key[0];
                if bin >= first_bin && bin < first_bin + n_bins {
                    amplitudes[pol.index()][(bin - first_bin) as usize] = [amp[0], amp[1]];
                }
            }
        }
        PhotonSector {
            delta_t: state.delta_t,
            t_start: first_bin as f64 * state.delta_t,
            amplitudes,
        }
    }

    /// Centre of bin `k` relative to the sector start.
    pub fn bin_centre(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.delta_t
    }

    pub fn len(&self) -> usize {
        self.amplitudes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes
            .iter()
            .flat_map(|v| v.iter())
            .map(|a| a[0].norm_sqr() + a[1].norm_sqr())
            .sum()
    }

    /// Largest `|amp / sqrt(dt) - density(pol, t_centre, mu)|` over all bins.
    pub fn max_density_error<F>(&self, density: F) -> f64
    where
        F: Fn(Polarization, f64, Spin) -> C64 + Sync,
    {
        let scale = 1.0 / self.delta_t.sqrt();
        Polarization::ALL
            .iter()
            .map(|&pol| {
                self.amplitudes[pol.index()]
                    .par_iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let t = self.bin_centre(k);
                        Spin::ALL
                            .iter()
                            .map(|&mu| (a[mu.index()] * scale - density(pol, t, mu)).norm())
                            .fold(0.0, f64::max)
                    })
                    .reduce(|| 0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct EmissionRun {
    pub state: LatticeState,
    pub photons: PhotonSector,
    /// Amplitude still in the trion manifold, `[up e, down e]`.
    pub excited: [C64; 2],
    pub t_final: f64,
}

/// Spontaneous emission from `|zeta, e>` until `t_final`.
pub fn simulate_emission(sample: &MagneticSample, zeta: Spin, t_final: f64, delta_t: f64) -> Result<EmissionRun> {
    let (n, dt) = discretize(t_final, delta_t)?;
    let state = evolve(LatticeState::vacuum(dt, excited(zeta))?, sample, n)?;
    let vac = state.amplitude(&PhotonKey::new());
    Ok(EmissionRun {
        photons: PhotonSector::from_state(&state, 0, n),
        excited: [vac[2], vac[3]],
        state,
        t_final,
    })
}

impl EmissionRun {
    /// Max bin-wise error against the closed-form emission coefficients.
    pub fn max_error(&self, sample: &MagneticSample, zeta: Spin) -> f64 {
        let t = self.t_final;
        self.photons.max_density_error(|pol, tp, mu| {
            f_coefficient(pol, SpinLabelPair::new(zeta, mu), t, tp, sample).unwrap_or(ZERO)
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScatteringRun {
    pub state: LatticeState,
    pub photons: PhotonSector,
    pub t_final: f64,
}

/// Scattering of one `R` photon in mode `input` off `|zeta, g>` until `t_final`.
pub fn simulate_scattering(
    sample: &MagneticSample,
    zeta: Spin,
    input: &Wavepacket,
    t_final: f64,
    delta_t: f64,
) -> Result<ScatteringRun> {
    let (n, dt) = discretize(t_final, delta_t)?;
    let initial = LatticeState::with_input_photon(dt, ground(zeta), Polarization::R, input, n)?;
    let state = evolve(initial, sample, n)?;
    Ok(ScatteringRun {
        photons: PhotonSector::from_state(&state, 0, n),
        state,
        t_final,
    })
}

impl ScatteringRun {
    pub fn max_error(&self, sample: &MagneticSample, zeta: Spin, input: &Wavepacket) -> Result<f64> {
        let t = self.t_final;
        let method = match input {
            Wavepacket::Sampled { .. } => InnerIntegral::Quadrature,
            _ => InnerIntegral::Exact,
        };
        let n = self.photons.len();
        let table: Vec<[[C64; 4]; 2]> = (0..n)
            .into_par_iter()
            .map(|k| lambda_all(method, t, self.photons.bin_centre(k), sample, input))
            .collect::<Result<_>>()?;
        let dt = self.photons.delta_t;
        let scale = 1.0 / dt.sqrt();
        let mut worst = 0.0f64;
        for (k, row) in table.iter().enumerate() {
            for pol in Polarization::ALL {
                for mu in Spin::ALL {
                    let a = self.photons.amplitudes[pol.index()][k][mu.index()] * scale;
                    let b = row[pol.index()][SpinLabelPair::new(zeta, mu).index()];
                    worst = worst.max((a - b).norm());
                }
            }
        }
        Ok(worst)
    }
}

/// Initial spin state of the LR protocol, `(|up> + i|down>)/sqrt(2)`.
pub fn lr_initial_spin() -> [C64; 2] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [C64::new(r, 0.0), C64::new(0.0, r)]
}

/// Ideal per-step amplitude `w[mu][zeta]` (quarter precession about x).
fn ideal_step() -> [[C64; 2]; 2] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [[C64::new(r, 0.0), C64::new(0.0, -r)], [C64::new(0.0, -r), C64::new(r, 0.0)]]
}

/// LR run. For two photons the second segment is propagated separately from
/// each emitter basis state and combined by linearity: bins of the first
/// segment never interact again, so this equals the joint evolution.
#[derive(Debug, Clone)]
pub struct LrRun {
    pub n_steps: usize,
    pub delta_t: f64,
    pub t1: f64,
    /// First segment after the emission window (and after the swap when `n_steps = 2`).
    pub first: LatticeState,
    /// Second segment propagated from each emitter basis state.
    pub second: Vec<LatticeState>,
    pub overlap: C64,
    pub fidelity: f64,
}

/// Ideal emission mode sampled on the lattice: `sqrt(dt gamma) e^{-gamma t_k / 2}`.
fn ideal_mode(n: u32, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|k| (dt * GAMMA).sqrt() * (-0.5 * GAMMA * (k as f64 + 0.5) * dt).exp())
        .collect()
}

// Spin indices address several tables at once.
#[allow(clippy::needless_range_loop)]
pub fn simulate_lr(sample: &MagneticSample, n_steps: usize, t1: f64, delta_t: f64) -> Result<LrRun> {
    if !(1..=2).contains(&n_steps) {
        return Err(Error::param("n_steps", format!("must be 1 or 2, got {n_steps}")));
    }
    let (n, dt) = discretize(t1, delta_t)?;
    let c = lr_initial_spin();
    let start = [ZERO, ZERO, c[0], c[1]];
    let mut first = evolve(LatticeState::vacuum(dt, start)?, sample, n)?;
    let mode = ideal_mode(n, dt);
    let w = ideal_step();
    let seg1 = PhotonSector::from_state(&first, 0, n);
    // p1[j][mu] = <1_j | segment-1 photon, spin mu>
    let project = |sector: &PhotonSector| {
        let mut p = [[ZERO; 2]; 2];
        for pol in Polarization::ALL {
            for (k, a) in sector.amplitudes[pol.index()].iter().enumerate() {
                for mu in 0..2 {
                    p[pol.index()][mu] += a[mu] * mode[k];
                }
            }
        }
        p
    };
    // Ideal amplitude of (first photon j(zeta'), spin mu') summed over zeta'.
    let ideal1 = |pol: Polarization, mu: usize| {
        let zeta = pol.spin().index();
        c[zeta] * w[mu][zeta]
    };
    if n_steps == 1 {
        let p1 = project(&seg1);
        let mut overlap = ZERO;
        for pol in Polarization::ALL {
            for mu in 0..2 {
                overlap += ideal1(pol, mu).conj() * p1[pol.index()][mu];
            }
        }
        return Ok(LrRun {
            n_steps,
            delta_t: dt,
            t1,
            first,
            second: Vec::new(),
            overlap,
            fidelity: overlap.norm_sqr(),
        });
    }
    first.excitation_pulse()?;
    let u = CollisionUnitary::new(dt, sample)?;
    let second: Vec<LatticeState> = (0..4)
        .into_par_iter()
        .map(|e| {
            let mut basis = [ZERO; 4];
            basis[e] = C64::new(1.0, 0.0);
            let mut s = LatticeState::new(dt, n)?;
            s.insert(PhotonKey::new(), basis);
            for _ in 0..n {
                s.advance(&u);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    // After the swap a segment-1 photon entry carries the emitter in e(mu1).
    let seg1 = PhotonSector::from_state(&first, 0, n);
    let p1_swapped = {
        let mut p = [[ZERO; 2]; 2];
        for pol in Polarization::ALL {
            for (k, _) in seg1.amplitudes[pol.index()].iter().enumerate() {
                let key: PhotonKey = smallvec::smallvec![(k as u32, pol)];
                let a = first.amplitude(&key);
                for mu in 0..2 {
                    p[pol.index()][mu] += a[2 + mu] * mode[k];
                }
            }
        }
        p
    };
    let p2: Vec<[[C64; 2]; 2]> = second
        .iter()
        .map(|s| project(&PhotonSector::from_state(s, n, n)))
        .collect();
    let mut overlap = ZERO;
    for j1 in Polarization::ALL {
        for mu1 in 0..2 {
            let a1 = ideal1(j1, mu1);
            let j2 = if mu1 == 0 { Polarization::R } else { Polarization::L };
            for mu2 in 0..2 {
                let ideal = a1 * w[mu2][mu1];
                let mut real = ZERO;
                for m in 0..2 {
                    real += p1_swapped[j1.index()][m] * p2[2 + m][j2.index()][mu2];
                }
                overlap += ideal.conj() * real;
            }
        }
    }
    Ok(LrRun {
        n_steps,
        delta_t: dt,
        t1,
        first,
        second,
        overlap,
        fidelity: overlap.norm_sqr(),
    })
}

impl LrRun {
    /// Max bin-wise error of photon densities against products of emission
    /// coefficients (one photon: `f`; two photons: `sum_mu1 f f`).
    pub fn max_error(&self, sample: &MagneticSample) -> f64 {
        let c = lr_initial_spin();
        let t1 = self.t1;
        let n = (t1 / self.delta_t).round() as u32;
        let f1 = |pol: Polarization, t: f64, mu1: Spin| -> C64 {
            Spin::ALL
                .iter()
                .map(|&z| c[z.index()] * f_coefficient(pol, SpinLabelPair::new(z, mu1), t1, t, sample).unwrap_or(ZERO))
                .sum()
        };
        if self.n_steps == 1 {
            return PhotonSector::from_state(&self.first, 0, n).max_density_error(f1);
        }
        let dt = self.delta_t;
        let scale = 1.0 / dt.sqrt();
        // Segment-1 factors: oracle a[pol][k][mu1] (excited after swap) and analytic.
        let mut a1 = [vec![[ZERO; 2]; n as usize], vec![[ZERO; 2]; n as usize]];
        let mut g1 = a1.clone();
        for pol in Polarization::ALL {
            for k in 0..n as usize {
                let key: PhotonKey = smallvec::smallvec![(k as u32, pol)];
                let a = self.first.amplitude(&key);
                let t = (k as f64 + 0.5) * dt;
                for mu in Spin::ALL {
                    a1[pol.index()][k][mu.index()] = a[2 + mu.index()] * scale;
                    g1[pol.index()][k][mu.index()] = f1(pol, t, mu);
                }
            }
        }
        // Segment-2 factors indexed [mu1][pol][k][mu].
        let mut a2 = vec![[vec![[ZERO; 2]; n as usize], vec![[ZERO; 2]; n as usize]]; 2];
        let mut g2 = a2.clone();
        for mu1 in Spin::ALL {
            let sector = PhotonSector::from_state(&self.second[2 + mu1.index()], n, n);
            for pol in Polarization::ALL {
                for k in 0..n as usize {
                    let t = sector.bin_centre(k);
                    for mu in Spin::ALL {
                        a2[mu1.index()][pol.index()][k][mu.index()] = sector.amplitudes[pol.index()][k][mu.index()] * scale;
                        g2[mu1.index()][pol.index()][k][mu.index()] =
                            f_coefficient(pol, SpinLabelPair::new(mu1, mu), t1, t, sample).unwrap_or(ZERO);
                    }
                }
            }
        }
        let pairs: Vec<(usize, usize)> = (0..2).flat_map(|p| (0..n as usize).map(move |k| (p, k))).collect();
        pairs
            .par_iter()
            .map(|&(p1, k1)| {
                let mut worst = 0.0f64;
                for p2 in 0..2 {
                    for k2 in 0..n as usize {
                        for mu in 0..2 {
                            let mut d = ZERO;
                            for mu1 in 0..2 {
                                d += a1[p1][k1][mu1] * a2[mu1][p2][k2][mu]
                                    - g1[p1][k1][mu1] * g2[mu1][p2][k2][mu];
                            }
                            worst = worst.max(d.norm());
                        }
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub delta_t: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log delta_t`.
    pub order: Option<f64>,
    /// Errors did not decrease monotonically, or the order is undefined.
    pub flagged: bool,
}

/// Runs `runner` on a geometric ladder of steps and estimates the order.
pub fn convergence_study<F>(mut runner: F, delta_ts: &[f64]) -> Result<ConvergenceReport>
where
    F: FnMut(f64) -> Result<f64>,
{
    if delta_ts.len() < 3 {
        return Err(Error::param("delta_t", "need at least three steps"));
    }
    let ratio = delta_ts[1] / delta_ts[0];
    if delta_ts
        .windows(2)
        .any(|w| ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-9)
    {
        return Err(Error::param("delta_t", "steps must form a geometric progression"));
    }
    let errors: Vec<f64> = delta_ts.iter().map(|&dt| runner(dt)).collect::<Result<_>>()?;
    let usable = errors.iter().all(|&e| e > 0.0 && e.is_finite());
    let order = if usable {
        let xs: Vec<f64> = delta_ts.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        // Equal errors give a zero slope: no convergence to measure.
        let spread = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
        (spread > 1e-12).then_some(slope)
    } else {
        None
    };
    let shrinking = delta_ts[1] < delta_ts[0];
    let monotone = errors
        .windows(2)
        .all(|w| if shrinking { w[1] < w[0] } else { w[1] > w[0] });
    Ok(ConvergenceReport {
        delta_t: delta_ts.to_vec(),
        errors,
        order,
        flagged: order.is_none() || !monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn ground_state_does_not_radiate() {
        let s = MagneticSample::new(0.4, 0.2, Vector3::new(0.2, 0.3, 0.9).normalize()).unwrap();
        let state = evolve(LatticeState::vacuum(1e-3, ground(Spin::Up)).unwrap(), &s, 2000).unwrap();
        let entries = state.entries();
        assert_eq!(entries.len(), 1);
        assert!(entries[0].0.is_empty());
        let expected = crate::kraus::ground_propagator(&s, 2.0);
        let a = entries[0].1;
        assert!((a[0] - expected[(0, 0)]).norm() < 1e-12);
        assert!((a[1] - expected[(1, 0)]).norm() < 1e-12);
    }

    #[test]
    fn excited_survival_decays_exponentially() {
        let s = MagneticSample::along_x(0.0, 0.0);
        let run = simulate_emission(&s, Spin::Up, 1.0, 1e-3).unwrap();
        assert!((run.excited[0].norm() - (-0.5f64).exp()).abs() < 1e-3);
        let total = run.photons.norm_sqr() + run.excited[0].norm_sqr() + run.excited[1].norm_sqr();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn uncoupled_spin_passes_photon_through() {
        let s = MagneticSample::along_x(0.0, 0.0);
        let input = Wavepacket::exponential(1.0).unwrap();
        let run = simulate_scattering(&s, Spin::Down, &input, 20.0, 1e-3).unwrap();
        let l: f64 = run.photons.amplitudes[1].iter().map(|a| a[0].norm_sqr() + a[1].norm_sqr()).sum();
        assert!(l < 1e-24, "{l}");
        // Transmitted mode equals the discretized input.
        let (n, dt) = discretize(20.0, 1e-3).unwrap();
        let direct: Vec<C64> = (0..n).map(|k| input.eval((k as f64 + 0.5) * dt) * dt.sqrt()).collect();
        let norm: f64 = direct.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for k in (0..n as usize).step_by(997) {
            assert!((run.photons.amplitudes[0][k][1] - direct[k] / norm).norm() < 1e-14);
        }
    }

    #[test]
    fn matched_bandwidth_reflects_everything() {
        let s = MagneticSample::along_x(0.0, 0.0);
        let input = Wavepacket::exponential(1.0).unwrap();
        let run = simulate_scattering(&s, Spin::Up, &input, 30.0, 1e-3).unwrap();
        let dt = run.photons.delta_t;
        let overlap: C64 = run.photons.amplitudes[0]
            .iter()
            .enumerate()
            .map(|(k, a)| a[0] * input.eval((k as f64 + 0.5) * dt).conj() * dt.sqrt())
            .sum();
        assert!(overlap.norm() < 2e-2, "{overlap}");
    }

    #[test]
    fn swap_requires_ground_manifold() {
        let mut state = LatticeState::vacuum(1e-3, excited(Spin::Up)).unwrap();
        assert!(matches!(state.excitation_pulse(), Err(Error::EmitterNotInGround { .. })));
        let mut state = LatticeState::vacuum(1e-3, ground(Spin::Down)).unwrap();
        state.excitation_pulse().unwrap();
        assert_eq!(state.amplitude(&PhotonKey::new())[3], C64::new(1.0, 0.0));
    }

    #[test]
    fn emission_norm_and_oracle_match_at_zero_field() {
        let s = MagneticSample::along_x(0.0, 0.0);
        let run = simulate_emission(&s, Spin::Up, 8.0, 1e-3).unwrap();
        assert!(run.max_error(&s, Spin::Up) < 1e-3);
    }

    #[test]
    fn dump_has_header_and_rows() {
        let s = MagneticSample::along_x(0.1, 0.1);
        let run = simulate_emission(&s, Spin::Up, 0.01, 1e-3).unwrap();
        let mut buf = Vec::new();
        run.state.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# delta_t="));
        assert!(text.contains("# n_bins=10"));
        assert!(text.lines().any(|l| l.starts_with("0 3:R ")));
    }

    #[test]
    fn convergence_study_orders() {
        let ladder = [4e-3, 2e-3, 1e-3, 5e-4];
        let s = MagneticSample::along_x(0.0, 0.0);
        let report = convergence_study(
            |dt| {
                let run = simulate_emission(&s, Spin::Up, 1.0, dt)?;
                Ok((run.excited[0].norm() - (-0.5f64).exp()).abs())
            },
            &ladder,
        )
        .unwrap();
        let order = report.order.unwrap();
        assert!((order - 1.0).abs() < 0.1, "{report:?}");
        let constant = convergence_study(|_| Ok(0.5), &ladder).unwrap();
        assert!(constant.order.is_none() && constant.flagged);
        assert!(convergence_study(|_| Ok(1.0), &[1e-3, 2e-3]).is_err());
        assert!(convergence_study(|_| Ok(1.0), &[1e-3, 2e-3, 5e-3]).is_err());
    }
}
