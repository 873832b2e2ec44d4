//! Time-tagged click streams: synthesis from a squeezed state, CSV I/O and
//! coincidence histograms.
//!
//! File format, UTF-8 with LF line ends:
//!
//! ```text
//! # pulses=1000000
//! pulse,channel,time_ps
//! 0,1,2480
//! ```
//!
//! `time_ps` is measured from the pump trigger. Pulses without clicks have no
//! lines, so the pulse count travels in the comment header.

use crate::error::{Error, Result};
use crate::model::{DetectionModel, TimeGrid};
use crate::multiphoton::{rn_from_schmidt, sample_joint, JointSamples, McmcConfig};
use crate::schmidt::{JointTemporalAmplitude, SchmidtDecomposition};
use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeTag {
    pub pulse: u64,
    pub channel: u32,
    pub time_ps: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeTagStream {
    pub records: Vec<TimeTag>,
    pub n_pulses: u64,
    /// Lines skipped while reading.
    pub malformed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Signal,
    Idler,
}

/// Channel id to (species, detector index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleMap(pub BTreeMap<u32, (Role, usize)>);

impl RoleMap {
    /// Signal ports on channels 0..P_s, idler ports on the following P_i channels.
    pub fn from_model(model: &DetectionModel) -> Self {
        let ps = model.eta_s.len();
        let mut m = BTreeMap::new();
        for k in 0..ps {
            m.insert(k as u32, (Role::Signal, k));
        }
        for k in 0..model.eta_i.len() {
            m.insert((ps + k) as u32, (Role::Idler, k));
        }
        RoleMap(m)
    }

    pub fn channels(&self, role: Role) -> Vec<u32> {
        self.0.iter().filter(|(_, (r, _))| *r == role).map(|(c, _)| *c).collect()
    }
}

/// Which photon's time a threshold click reports when several reach one port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClickTime {
    /// A photon chosen uniformly among those arriving.
    Uniform,
    Earliest,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Pair numbers up to this use exact joint samples; larger ones draw
    /// photon times independently from the marginals.
    pub n_exact: usize,
    /// Joint samples stored per pair number.
    pub pool: usize,
    pub mcmc: McmcConfig,
    pub click: ClickTime,
    /// Largest tolerated probability of pair numbers beyond the table.
    pub max_tail: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_exact: 8,
            pool: 4000,
            mcmc: McmcConfig { samples: 4000, burn_in: 1000, thinning: 50, seed: 0, chains: 1 },
            click: ClickTime::Uniform,
            max_tail: 1e-4,
        }
    }
}

pub const N_TABLE_MAX: usize = 30;

enum Pool {
    Exact(WeightedIndex<f64>, usize),
    Joint(JointSamples),
}

/// Per pulse: n ~ r_n, 2n emission bins from the joint |Perm|² law, each
/// photon routed to a port or lost, one click per port that receives light.
pub fn synthesize(
    decomp: &SchmidtDecomposition,
    jta: &JointTemporalAmplitude,
    model: &DetectionModel,
    n_pulses: u64,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<TimeTagStream> {
    model.validate()?;
    let rn = rn_from_schmidt(decomp, N_TABLE_MAX);
    let mut n_max = 0;
    let mut cum = 0.0;
    for (n, r) in rn.r.iter().enumerate() {
        cum += r;
        n_max = n;
        if 1.0 - cum < cfg.max_tail {
            break;
        }
    }
    if 1.0 - cum >= cfg.max_tail {
        return Err(Error::InvalidParameter(format!("pair-number tail {:.2e} beyond n = {N_TABLE_MAX}", 1.0 - cum)));
    }
    let grid = jta.grid;
    let nb = grid.n_points;
    let jti = jta.jti();
    let n_exact = cfg.n_exact.clamp(1, n_max.max(1));
    let mut pools: Vec<Pool> = Vec::with_capacity(n_exact + 1);
    if n_max >= 1 {
        pools.push(Pool::Exact(WeightedIndex::new(jti.transpose().iter().cloned()).map_err(|e| Error::Numerical(e.to_string()))?, nb));
        for n in 2..=n_exact {
            let mc = McmcConfig { samples: cfg.pool, seed: cfg.mcmc.seed ^ seed.rotate_left(17) ^ n as u64, ..cfg.mcmc };
            pools.push(Pool::Joint(sample_joint(jta, n, &mc)?));
        }
    }
    // marginals for the independent-photon regime
    let (ms, mi) = match pools.last() {
        Some(Pool::Joint(s)) => {
            let mut hs = vec![0.0; nb];
            let mut hi = vec![0.0; nb];
            s.signal.iter().for_each(|b| hs[*b as usize] += 1.0);
            s.idler.iter().for_each(|b| hi[*b as usize] += 1.0);
            (hs, hi)
        }
        _ => (jti.row_iter().map(|r| r.sum()).collect(), jti.column_iter().map(|c| c.sum()).collect()),
    };
    let ws = WeightedIndex::new(&ms).map_err(|e| Error::Numerical(e.to_string()))?;
    let wi = WeightedIndex::new(&mi).map_err(|e| Error::Numerical(e.to_string()))?;
    let wn = WeightedIndex::new(&rn.r[..=n_max]).map_err(|e| Error::Numerical(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = model.eta_s.len();
    let mut out = TimeTagStream { records: Vec::new(), n_pulses, malformed: 0 };
    let mut s_bins = Vec::new();
    let mut i_bins = Vec::new();
    for pulse in 0..n_pulses {
        let n = wn.sample(&mut rng);
        if n == 0 {
            continue;
        }
        s_bins.clear();
        i_bins.clear();
        if n <= n_exact {
            match &pools[n - 1] {
                Pool::Exact(w, nb) => {
                    let k = w.sample(&mut rng);
                    s_bins.push(k / nb);
                    i_bins.push(k % nb);
                }
                Pool::Joint(j) => {
                    let (s, i) = j.sample(rng.gen_range(0..j.len()));
                    s_bins.extend(s.iter().map(|b| *b as usize));
                    i_bins.extend(i.iter().map(|b| *b as usize));
                }
            }
        } else {
            for _ in 0..n {
                s_bins.push(ws.sample(&mut rng));
                i_bins.push(wi.sample(&mut rng));
            }
        }
        for (bins, etas, offset) in [(&s_bins, &model.eta_s, 0usize), (&i_bins, &model.eta_i, ps)] {
            for (port, bin) in route(bins, etas, cfg.click, &mut rng) {
                out.records.push(TimeTag { pulse, channel: (offset + port) as u32, time_ps: grid.t(bin) });
            }
        }
    }
    Ok(out)
}

/// Route photons multinomially and return one (port, bin) per port hit.
fn route(bins: &[usize], etas: &[f64], click: ClickTime, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut hits: Vec<(usize, usize, u32)> = Vec::new();
    for &b in bins {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (port, e) in etas.iter().enumerate() {
            acc += e;
            if u < acc {
                match hits.iter_mut().find(|h| h.0 == port) {
                    None => hits.push((port, b, 1)),
                    Some(h) => {
                        h.2 += 1;
                        let replace = match click {
                            ClickTime::Uniform => rng.gen_range(0..h.2) == 0,
                            ClickTime::Earliest => b < h.1,
                        };
                        if replace {
                            h.1 = b;
                        }
                    }
                }
                break;
            }
        }
    }
    hits.sort_by_key(|h| h.0);
    hits.into_iter().map(|(p, b, _)| (p, b)).collect()
}

pub const CSV_HEADER: &str = "pulse,channel,time_ps";

pub fn write_stream<W: Write>(stream: &TimeTagStream, mut w: W) -> Result<()> {
    writeln!(w, "# pulses={}", stream.n_pulses)?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in &stream.records {
        writeln!(w, "{},{},{}", r.pulse, r.channel, r.time_ps)?;
    }
    Ok(())
}

pub fn write_stream_file(stream: &TimeTagStream, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stream(stream, f)
}

pub const MALFORMED_LIMIT: f64 = 1e-3;

pub fn read_stream<R: BufRead>(r: R) -> Result<TimeTagStream> {
    let mut out = TimeTagStream::default();
    let mut declared: Option<u64> = None;
    let mut lines = 0usize;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            if let Some(v) = c.trim().strip_prefix("pulses=") {
                declared = Some(v.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad pulse count", lineno + 1)))?);
            }
            continue;
        }
        if t == CSV_HEADER {
            continue;
        }
        lines += 1;
        let f: Vec<&str> = t.split(',').collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].trim().parse::<u64>().ok()?, f[1].trim().parse::<u32>().ok()?, f[2].trim().parse::<f64>().ok()?)))
            .flatten()
            .filter(|(_, _, tp)| tp.is_finite() && *tp >= 0.0);
        match parsed {
            Some((pulse, channel, time_ps)) => {
                if out.records.last().is_some_and(|prev| prev.pulse > pulse) {
                    return Err(Error::Format(format!("line {}: pulse index {pulse} decreases", lineno + 1)));
                }
                out.records.push(TimeTag { pulse, channel, time_ps });
            }
            None => out.malformed += 1,
        }
    }
    if out.malformed as f64 > MALFORMED_LIMIT * lines.max(1) as f64 {
        return Err(Error::Parse(format!("{} of {lines} records malformed", out.malformed)));
    }
    let seen = out.records.last().map_or(0, |r| r.pulse + 1);
    out.n_pulses = match declared {
        Some(d) if d < seen => return Err(Error::Format(format!("header declares {d} pulses but index {} appears", seen - 1))),
        Some(d) => d,
        None => seen,
    };
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<TimeTagStream> {
    read_stream(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceHistograms {
    pub grid: TimeGrid,
    pub n_pulses: u64,
    /// (signal bin, idler bin), every signal/idler click pairing of a pulse.
    pub h2: DMatrix<f64>,
    /// Four-fold marginal: each unordered pair of signal clicks times each
    /// unordered pair of idler clicks adds its four (q,p) combinations.
    pub h4m: DMatrix<f64>,
    pub h6m: DMatrix<f64>,
    pub singles: BTreeMap<u32, Vec<f64>>,
    /// Clicks per channel, including those outside the grid.
    pub clicks: BTreeMap<u32, u64>,
    /// Pulses in which both channels clicked, keyed with the lower id first.
    pub channel_coincidences: BTreeMap<(u32, u32), u64>,
    pub out_of_grid: u64,
}

impl CoincidenceHistograms {
    pub fn empty(grid: &TimeGrid, roles: &RoleMap) -> Self {
        let n = grid.n_points;
        let chans: Vec<u32> = roles.0.keys().cloned().collect();
        let mut pairs = BTreeMap::new();
        for (k, a) in chans.iter().enumerate() {
            for b in &chans[k + 1..] {
                pairs.insert((*a, *b), 0);
            }
        }
        CoincidenceHistograms {
            grid: *grid,
            n_pulses: 0,
            h2: DMatrix::zeros(n, n),
            h4m: DMatrix::zeros(n, n),
            h6m: DMatrix::zeros(n, n),
            singles: chans.iter().map(|c| (*c, vec![0.0; n])).collect(),
            clicks: chans.iter().map(|c| (*c, 0)).collect(),
            channel_coincidences: pairs,
            out_of_grid: 0,
        }
    }

    pub fn merge(&mut self, other: &CoincidenceHistograms) -> Result<()> {
        if !self.grid.same_as(&other.grid) || self.singles.len() != other.singles.len() {
            return Err(Error::GridMismatch("histograms on different grids or channel sets".into()));
        }
        self.n_pulses += other.n_pulses;
        self.h2 += &other.h2;
        self.h4m += &other.h4m;
        self.h6m += &other.h6m;
        for (c, v) in &other.singles {
            let mine = self.singles.get_mut(c).ok_or_else(|| Error::Config(format!("channel {c} missing")))?;
            mine.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        for (c, v) in &other.clicks {
            *self.clicks.entry(*c).or_default() += v;
        }
        for (k, v) in &other.channel_coincidences {
            *self.channel_coincidences.entry(*k).or_default() += v;
        }
        self.out_of_grid += other.out_of_grid;
        Ok(())
    }

    fn add_pulse(&mut self, tags: &[TimeTag], roles: &RoleMap) -> Result<()> {
        let mut s = Vec::new();
        let mut i = Vec::new();
        let mut chans: Vec<u32> = Vec::new();
        for t in tags {
            let (role, _) = roles.0.get(&t.channel).ok_or_else(|| Error::Config(format!("channel {} has no role", t.channel)))?;
            *self.clicks.get_mut(&t.channel).expect("mapped") += 1;
            if !chans.contains(&t.channel) {
                chans.push(t.channel);
            }
            let Some(b) = self.grid.bin_of(t.time_ps) else {
                self.out_of_grid += 1;
                continue;
            };
            self.singles.get_mut(&t.channel).expect("mapped")[b] += 1.0;
            match role {
                Role::Signal => s.push(b),
                Role::Idler => i.push(b),
            }
        }
        chans.sort_unstable();
        for (k, a) in chans.iter().enumerate() {
            for b in &chans[k + 1..] {
                *self.channel_coincidences.get_mut(&(*a, *b)).expect("mapped") += 1;
            }
        }
        for q in &s {
            for p in &i {
                self.h2[(*q, *p)] += 1.0;
            }
        }
        for ss in subsets(&s, 2) {
            for ii in subsets(&i, 2) {
                for q in &ss {
                    for p in &ii {
                        self.h4m[(*q, *p)] += 1.0;
                    }
                }
            }
        }
        for ss in subsets(&s, 3) {
            for ii in subsets(&i, 3) {
                for q in &ss {
                    for p in &ii {
                        self.h6m[(*q, *p)] += 1.0;
                    }
                }
            }
        }
        Ok(())
    }

    fn per_pulse(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m / (self.n_pulses.max(1) as f64)
    }

    pub fn p2(&self) -> DMatrix<f64> {
        self.per_pulse(&self.h2)
    }

    pub fn p4m(&self) -> DMatrix<f64> {
        self.per_pulse(&self.h4m)
    }

    pub fn p6m(&self) -> DMatrix<f64> {
        self.per_pulse(&self.h6m)
    }

    pub fn click_probability(&self, channel: u32) -> f64 {
        self.clicks.get(&channel).copied().unwrap_or(0) as f64 / self.n_pulses.max(1) as f64
    }

    /// Second-order correlation between two channels, N·N₁₂/(N₁N₂), with its
    /// Poisson standard error from the coincidence count.
    pub fn channel_g2(&self, a: u32, b: u32) -> Result<(f64, f64)> {
        let key = if a < b { (a, b) } else { (b, a) };
        let n12 = *self.channel_coincidences.get(&key).ok_or_else(|| Error::Config(format!("channels {a},{b} not mapped")))? as f64;
        let (n1, n2) = (self.clicks[&a] as f64, self.clicks[&b] as f64);
        if n1 == 0.0 || n2 == 0.0 || n12 == 0.0 {
            return Err(Error::UndefinedG2);
        }
        let g2 = self.n_pulses as f64 * n12 / (n1 * n2);
        Ok((g2, g2 / n12.sqrt()))
    }
}

fn subsets(v: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn go(v: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..v.len() {
            cur.push(v[j]);
            go(v, k, j + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if v.len() >= k {
        go(v, k, 0, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

const SHARD_PULSES: u64 = 1 << 16;

/// Histograms over pulse-index shards, merged afterwards.
pub fn histogram(stream: &TimeTagStream, grid: &TimeGrid, roles: &RoleMap) -> Result<CoincidenceHistograms> {
    let recs = &stream.records;
    let mut cuts = vec![0usize];
    for k in 1..recs.len() {
        if recs[k].pulse / SHARD_PULSES != recs[k - 1].pulse / SHARD_PULSES {
            cuts.push(k);
        }
    }
    cuts.push(recs.len());
    let parts: Vec<Result<CoincidenceHistograms>> = cuts
        .par_windows(2)
        .map(|w| {
            let mut h = CoincidenceHistograms::empty(grid, roles);
            let shard = &recs[w[0]..w[1]];
            let mut a = 0;
            while a < shard.len() {
                let mut b = a + 1;
                while b < shard.len() && shard[b].pulse == shard[a].pulse {
                    b += 1;
                }
                h.add_pulse(&shard[a..b], roles)?;
                a = b;
            }
            Ok(h)
        })
        .collect();
    let mut total = CoincidenceHistograms::empty(grid, roles);
    for p in parts {
        total.merge(&p?)?;
    }
    total.n_pulses = stream.n_pulses;
    Ok(total)
}

/// Matrix as CSV rows.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("line {}: '{v}' is not a number", k + 1))))
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|f| f.len() != row.len()) {
            return Err(Error::Format(format!("line {}: ragged row", k + 1)));
        }
        rows.push(row);
    }
    let nc = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}
