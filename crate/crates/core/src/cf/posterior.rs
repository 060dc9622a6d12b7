//! Parameter posteriors for the human (hybrid) and automated (HL) laws, and
//! their particle-file format: comma-delimited, a header row, a `model`
//! column, and one column per parameter name (blank where a model does not
//! use that parameter).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, RngCore};

use super::spec::{CfKind, CfSpec};
use crate::error::{Error, Result};

/// Human models in share order.
pub const HDV_KINDS: [CfKind; 4] = [CfKind::Idm, CfKind::Fvdm, CfKind::Gfm, CfKind::Ovm];

pub const DEFAULT_SHARES: [f64; 4] = [0.1, 0.1, 0.7, 0.1];

const DEFAULT_HDV_CSV: &str = include_str!("../../data/hdv_posterior.csv");
const DEFAULT_AV_CSV: &str = include_str!("../../data/hl_posterior.csv");

/// Mixture over the four human laws with per-model particle sets.
#[derive(Debug, Clone, PartialEq)]
pub struct HdvPosterior {
    shares: [f64; 4],
    particles: [Vec<CfSpec>; 4],
}

impl HdvPosterior {
    pub fn new(shares: [f64; 4], particles: [Vec<CfSpec>; 4]) -> Result<Self> {
        if shares.iter().any(|s| !(*s >= 0.0)) || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("model shares must be a probability vector, got {shares:?}")));
        }
        for (kind, set) in HDV_KINDS.iter().zip(&particles) {
            for spec in set {
                if spec.kind() != *kind {
                    return Err(Error::InvalidInput(format!("{} particle filed under {kind}", spec.kind())));
                }
                spec.validate()?;
            }
        }
        Ok(Self { shares, particles })
    }

    /// Packaged default: plausible highway parameter ranges per model and
    /// the 0.1/0.1/0.7/0.1 model shares.
    pub fn packaged() -> Self {
        let specs = read_specs(DEFAULT_HDV_CSV.as_bytes(), Path::new("<packaged hdv_posterior.csv>"))
            .expect("packaged HDV posterior parses");
        Self::from_specs(DEFAULT_SHARES, specs).expect("packaged HDV posterior is valid")
    }

    pub fn from_specs(shares: [f64; 4], specs: Vec<CfSpec>) -> Result<Self> {
        let mut particles: [Vec<CfSpec>; 4] = Default::default();
        for spec in specs {
            let slot = HDV_KINDS
                .iter()
                .position(|k| *k == spec.kind())
                .ok_or_else(|| Error::InvalidInput(format!("{} is not a human-driver model", spec.kind())))?;
            particles[slot].push(spec);
        }
        Self::new(shares, particles)
    }

    pub fn load(path: &Path, shares: [f64; 4]) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_specs(shares, read_specs(file, path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_specs(file, path, self.particles.iter().flatten())
    }

    pub fn shares(&self) -> [f64; 4] {
        self.shares
    }

    pub fn with_shares(mut self, shares: [f64; 4]) -> Result<Self> {
        self.shares = shares;
        Self::new(self.shares, self.particles)
    }

    pub fn particles(&self, kind: CfKind) -> &[CfSpec] {
        HDV_KINDS
            .iter()
            .position(|k| *k == kind)
            .map(|i| self.particles[i].as_slice())
            .unwrap_or(&[])
    }

    /// Partition every per-model particle set `train_frac : 1 - train_frac`.
    pub fn split<R: RngCore + ?Sized>(&self, train_frac: f64, rng: &mut R) -> Result<(Self, Self)> {
        let mut train: [Vec<CfSpec>; 4] = Default::default();
        let mut test: [Vec<CfSpec>; 4] = Default::default();
        for i in 0..4 {
            let (a, b) = crate::rng::train_test_split(&self.particles[i], train_frac, rng);
            train[i] = a;
            test[i] = b;
        }
        Ok((Self::new(self.shares, train)?, Self::new(self.shares, test)?))
    }
}

/// Draw a human law: model kind by share, then a parameter vector uniformly
/// from that model's particle set.
pub fn sample_hybrid<R: RngCore + ?Sized>(rng: &mut R, post: &HdvPosterior) -> Result<CfSpec> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut slot = 3;
    for (i, share) in post.shares.iter().enumerate() {
        acc += share;
        if u < acc {
            slot = i;
            break;
        }
    }
    // Guard against rounding in the cumulative sum landing on a zero share.
    while post.shares[slot] == 0.0 && slot > 0 {
        slot -= 1;
    }
    let set = &post.particles[slot];
    if set.is_empty() {
        return Err(Error::InvalidInput(format!("no particles for drawn model {}", HDV_KINDS[slot])));
    }
    Ok(set[rng.random_range(0..set.len())].clone())
}

/// Particle set for the automated HL baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AvPosterior {
    particles: Vec<CfSpec>,
}

impl AvPosterior {
    pub fn new(particles: Vec<CfSpec>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Empty("AV posterior"));
        }
        for p in &particles {
            if p.kind() != CfKind::Hl {
                return Err(Error::InvalidInput(format!("AV posterior holds {} particle", p.kind())));
            }
            p.validate()?;
        }
        Ok(Self { particles })
    }

    pub fn packaged() -> Self {
        let specs = read_specs(DEFAULT_AV_CSV.as_bytes(), Path::new("<packaged hl_posterior.csv>"))
            .expect("packaged HL posterior parses");
        Self::new(specs).expect("packaged HL posterior is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(read_specs(file, path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_specs(file, path, self.particles.iter())
    }

    pub fn particles(&self) -> &[CfSpec] {
        &self.particles
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> CfSpec {
        self.particles[rng.random_range(0..self.particles.len())].clone()
    }

    pub fn split<R: RngCore + ?Sized>(&self, train_frac: f64, rng: &mut R) -> Result<(Self, Self)> {
        let (a, b) = crate::rng::train_test_split(&self.particles, train_frac, rng);
        Ok((Self::new(a)?, Self::new(b)?))
    }
}

pub(crate) fn read_specs<R: Read>(reader: R, path: &Path) -> Result<Vec<CfSpec>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let model_col = headers
        .iter()
        .position(|h| h == "model")
        .ok_or_else(|| Error::parse(path, 0, "missing `model` column"))?;
    let mut specs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let kind: CfKind = record
            .get(model_col)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| Error::parse(path, row, e.to_string()))?;
        let mut values = BTreeMap::new();
        for (name, cell) in headers.iter().zip(record.iter()) {
            if name == "model" || cell.is_empty() {
                continue;
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, row, format!("column `{name}`: `{cell}` is not a number")))?;
            values.insert(name.to_string(), value);
        }
        let spec = CfSpec::from_named(kind, &values).map_err(|e| Error::parse(path, row, e.to_string()))?;
        specs.push(spec);
    }
    Ok(specs)
}

pub(crate) fn write_specs<'a, W: Write>(
    writer: W,
    path: &Path,
    specs: impl Iterator<Item = &'a CfSpec> + Clone,
) -> Result<()> {
    let mut columns: Vec<String> = Vec::new();
    for spec in specs.clone() {
        for (name, _) in spec.to_named() {
            if !columns.contains(&name) {
                columns.push(name);
            }
        }
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string()];
    header.extend(columns.iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for spec in specs {
        let named: BTreeMap<String, f64> = spec.to_named().into_iter().collect();
        let mut row = vec![spec.kind().to_string()];
        row.extend(columns.iter().map(|c| named.get(c).map(|v| v.to_string()).unwrap_or_default()));
        wtr.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{equilibrium_gap, IdmParams};
    use crate::rng::RngStream;

    #[test]
    fn packaged_posteriors_load_and_reach_highway_equilibrium() {
        let hdv = HdvPosterior::packaged();
        assert_eq!(hdv.shares(), DEFAULT_SHARES);
        for kind in HDV_KINDS {
            assert!(!hdv.particles(kind).is_empty(), "{kind}");
            for spec in hdv.particles(kind) {
                equilibrium_gap(spec, 26.2).unwrap();
            }
        }
        let av = AvPosterior::packaged();
        for spec in av.particles() {
            equilibrium_gap(spec, 26.2).unwrap();
        }
    }

    #[test]
    fn degenerate_shares_always_pick_idm() {
        let post = HdvPosterior::packaged().with_shares([1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..1000 {
            assert_eq!(sample_hybrid(&mut rng, &post).unwrap().kind(), CfKind::Idm);
        }
    }

    #[test]
    fn single_particle_set_returns_that_particle() {
        let spec = CfSpec::Idm(IdmParams::default());
        let post = HdvPosterior::from_specs([1.0, 0.0, 0.0, 0.0], vec![spec.clone()]).unwrap();
        let mut rng = RngStream::new(5, 0);
        for _ in 0..100 {
            assert_eq!(sample_hybrid(&mut rng, &post).unwrap(), spec);
        }
    }

    #[test]
    fn empty_drawn_set_is_an_error() {
        let spec = CfSpec::Idm(IdmParams::default());
        let post = HdvPosterior::from_specs([0.0, 0.0, 1.0, 0.0], vec![spec]).unwrap();
        let mut rng = RngStream::new(5, 0);
        assert!(sample_hybrid(&mut rng, &post).is_err());
    }

    #[test]
    fn shares_must_sum_to_one() {
        let r = HdvPosterior::packaged().with_shares([0.5, 0.5, 0.5, 0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdv.csv");
        let post = HdvPosterior::packaged();
        post.save(&path).unwrap();
        let back = HdvPosterior::load(&path, DEFAULT_SHARES).unwrap();
        assert_eq!(back, post);

        let path = dir.path().join("hl.csv");
        let av = AvPosterior::packaged();
        av.save(&path).unwrap();
        assert_eq!(AvPosterior::load(&path).unwrap(), av);
    }

    #[test]
    fn bad_cell_reports_row() {
        let text = "model,v0,T,s0,a,b,delta\nIDM,33,1.6,2,1.5,2,4\nIDM,33,x,2,1.5,2,4\n";
        let err = read_specs(text.as_bytes(), Path::new("p.csv")).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("`T`"), "{err}");
    }
}
