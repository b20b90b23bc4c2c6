//! Planar molecules, datasets, fold assignment and the nuclear repulsion term.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// kcal/mol per Hartree.
pub const HARTREE_TO_KCAL_PER_MOL: f64 = 627.509;

pub const NUM_FOLDS: usize = 5;

/// Minimum separation below which two atoms count as coincident (Bohr).
const COINCIDENT_BOHR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub charge: u32,
    /// Bohr.
    pub position: [f64; 2],
}

impl Atom {
    pub fn new(charge: u32, x: f64, y: f64) -> Self {
        Atom {
            charge,
            position: [x, y],
        }
    }

    fn distance(&self, other: &Atom) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub id: String,
    atoms: Vec<Atom>,
    /// Atomization energy, kcal/mol.
    pub energy: Option<f64>,
}

impl Molecule {
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>, energy: Option<f64>) -> Result<Self> {
        let id = id.into();
        if atoms.is_empty() {
            return Err(Error::Domain(format!("molecule {id} has no atoms")));
        }
        for a in &atoms {
            if a.charge < 1 {
                return Err(Error::Domain(format!("molecule {id}: charge must be >= 1")));
            }
            if !a.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Domain(format!("molecule {id}: non-finite position")));
            }
        }
        for (k, a) in atoms.iter().enumerate() {
            for b in &atoms[k + 1..] {
                if a.distance(b) < COINCIDENT_BOHR {
                    return Err(Error::Domain(format!(
                        "molecule {id}: coincident atoms at ({}, {})",
                        a.position[0], a.position[1]
                    )));
                }
            }
        }
        if let Some(e) = energy {
            if !e.is_finite() {
                return Err(Error::Domain(format!("molecule {id}: non-finite energy")));
            }
        }
        Ok(Molecule { id, atoms, energy })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_charge(&self) -> u32 {
        self.atoms.iter().map(|a| a.charge).sum()
    }

    /// Atoms in a canonical order (charge, then x, then y). Every accumulation
    /// over atoms in this crate goes through this order so that results are
    /// bit-identical under permutation of the input list.
    pub fn canonical_atoms(&self) -> Vec<Atom> {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(|a, b| {
            a.charge
                .cmp(&b.charge)
                .then(a.position[0].total_cmp(&b.position[0]))
                .then(a.position[1].total_cmp(&b.position[1]))
        });
        atoms
    }

    /// Unweighted geometric centroid, accumulated in canonical order.
    pub fn centroid(&self) -> [f64; 2] {
        let atoms = self.canonical_atoms();
        let n = atoms.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for a in &atoms {
            sx += a.position[0];
            sy += a.position[1];
        }
        [sx / n, sy / n]
    }

    /// Largest atom distance from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.atoms
            .iter()
            .map(|a| (a.position[0] - c[0]).hypot(a.position[1] - c[1]))
            .fold(0.0, f64::max)
    }

    /// Applies `f` to every atom position, keeping id, charges and energy.
    pub fn map_positions(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Molecule> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                charge: a.charge,
                position: f(a.position),
            })
            .collect();
        Molecule::new(self.id.clone(), atoms, self.energy)
    }

    /// Reorders the atom list; `order[i]` is the source index of atom `i`.
    pub fn permuted(&self, order: &[usize]) -> Molecule {
        assert_eq!(order.len(), self.atoms.len());
        Molecule {
            id: self.id.clone(),
            atoms: order.iter().map(|&i| self.atoms[i]).collect(),
            energy: self.energy,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Molecule> {
        self.map_positions(|p| [p[0] + dx, p[1] + dy])
    }

    /// Rotation by `angle` radians about `center`.
    pub fn rotated(&self, angle: f64, center: [f64; 2]) -> Result<Molecule> {
        let (s, c) = angle.sin_cos();
        self.map_positions(|p| {
            let x = p[0] - center[0];
            let y = p[1] - center[1];
            [center[0] + c * x - s * y, center[1] + s * x + c * y]
        })
    }

    /// Uniform dilation by `factor` about the centroid.
    pub fn dilated(&self, factor: f64) -> Result<Molecule> {
        let c = self.centroid();
        self.map_positions(|p| [c[0] + factor * (p[0] - c[0]), c[1] + factor * (p[1] - c[1])])
    }
}

/// Nuclear repulsion `1/2 sum_{k != l} z_k z_l / |r_k - r_l|` in Hartree (positions in Bohr).
///
/// Pairs are accumulated over the canonical atom order, so the value is
/// bit-identical under any permutation of the atom list.
pub fn nuclear_repulsion(m: &Molecule) -> Result<f64> {
    let atoms = m.canonical_atoms();
    let mut total = 0.0;
    for (k, a) in atoms.iter().enumerate() {
        for b in &atoms[k + 1..] {
            let d = a.distance(b);
            if d < COINCIDENT_BOHR {
                return Err(Error::Domain(format!("molecule {}: coincident atoms", m.id)));
            }
            total += (a.charge * b.charge) as f64 / d;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Json,
}

impl DatasetFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => DatasetFormat::Json,
            _ => DatasetFormat::Csv,
        }
    }
}

/// How folds are assigned when the input file carries none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldOptions {
    pub seed: u64,
    /// Round-robin over molecules sorted by atom count instead of a plain shuffle.
    pub stratify_by_size: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        FoldOptions {
            seed: 0,
            stratify_by_size: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub molecules: Vec<Molecule>,
    pub fold_of: BTreeMap<String, usize>,
}

impl Dataset {
    /// Builds a dataset. `folds` must be given for every molecule or for none;
    /// in the latter case folds are assigned from `opts`.
    pub fn new(molecules: Vec<Molecule>, folds: Option<Vec<usize>>, opts: &FoldOptions) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (i, m) in molecules.iter().enumerate() {
            if seen.insert(m.id.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate molecule id {}", m.id)));
            }
        }
        let folds = match folds {
            Some(f) => {
                if f.len() != molecules.len() {
                    return Err(Error::SizeMismatch {
                        expected: molecules.len(),
                        got: f.len(),
                    });
                }
                if let Some(bad) = f.iter().find(|&&k| k >= NUM_FOLDS) {
                    return Err(Error::Domain(format!("fold index {bad} outside 0..{NUM_FOLDS}")));
                }
                f
            }
            None => assign_folds(&molecules, opts),
        };
        let fold_of = molecules
            .iter()
            .zip(&folds)
            .map(|(m, &f)| (m.id.clone(), f))
            .collect();
        Ok(Dataset { molecules, fold_of })
    }

    pub fn load(path: &Path, format: DatasetFormat, opts: &FoldOptions) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let (molecules, folds) = match format {
            DatasetFormat::Csv => parse_csv(path, &text)?,
            DatasetFormat::Json => parse_json(path, &text)?,
        };
        Dataset::new(molecules, folds, opts)
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn fold(&self, i: usize) -> usize {
        self.fold_of[&self.molecules[i].id]
    }

    pub fn folds(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.fold(i)).collect()
    }

    /// (training indices, test indices) for the given test fold.
    pub fn split(&self, test_fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.fold(i) != test_fold)
    }

    /// Target energies, or [`Error::MissingEnergy`] for the first molecule without one.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.molecules
            .iter()
            .map(|m| m.energy.ok_or_else(|| Error::MissingEnergy(m.id.clone())))
            .collect()
    }

    pub fn write(&self, path: &Path, format: DatasetFormat) -> Result<()> {
        let text = match format {
            DatasetFormat::Csv => self.to_csv(),
            DatasetFormat::Json => serde_json::to_string_pretty(&self.to_json())?,
        };
        fs::write(path, text)?;
        Ok(())
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("# id,n_atoms,z_1..z_n,x_1,y_1..x_n,y_n,energy,fold\n");
        for (i, m) in self.molecules.iter().enumerate() {
            let mut fields = vec![m.id.clone(), m.len().to_string()];
            fields.extend(m.atoms.iter().map(|a| a.charge.to_string()));
            for a in &m.atoms {
                fields.push(a.position[0].to_string());
                fields.push(a.position[1].to_string());
            }
            fields.push(m.energy.map(|e| e.to_string()).unwrap_or_default());
            fields.push(self.fold(i).to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    fn to_json(&self) -> JsonDataset {
        JsonDataset {
            molecules: self
                .molecules
                .iter()
                .enumerate()
                .map(|(i, m)| JsonMolecule {
                    id: m.id.clone(),
                    charges: m.atoms.iter().map(|a| a.charge as f64).collect(),
                    positions: m.atoms.iter().map(|a| a.position.to_vec()).collect(),
                    energy: m.energy,
                    fold: Some(self.fold(i)),
                })
                .collect(),
        }
    }
}

fn assign_folds(molecules: &[Molecule], opts: &FoldOptions) -> Vec<usize> {
    let mut order: Vec<usize> = (0..molecules.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    order.shuffle(&mut rng);
    if opts.stratify_by_size {
        // stable sort keeps the shuffled order among equal sizes
        order.sort_by_key(|&i| molecules[i].len());
    }
    let mut folds = vec![0; molecules.len()];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % NUM_FOLDS;
    }
    folds
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonDataset {
    molecules: Vec<JsonMolecule>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonMolecule {
    id: String,
    charges: Vec<f64>,
    positions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fold: Option<usize>,
}

fn parse_charge(v: f64, path: &Path, line: usize) -> Result<u32> {
    if !v.is_finite() || v.fract() != 0.0 {
        return Err(Error::Parse {
            path: path.into(),
            line,
            msg: format!("charge {v} is not an integer"),
        });
    }
    if v < 1.0 {
        return Err(Error::Domain(format!("line {line}: charge {v} < 1")));
    }
    Ok(v as u32)
}

type Parsed = (Vec<Molecule>, Option<Vec<usize>>);

fn collect_folds(folds: Vec<Option<usize>>, path: &Path) -> Result<Option<Vec<usize>>> {
    let given = folds.iter().filter(|f| f.is_some()).count();
    if given == 0 {
        Ok(None)
    } else if given == folds.len() {
        Ok(Some(folds.into_iter().flatten().collect()))
    } else {
        Err(Error::Parse {
            path: path.into(),
            line: 0,
            msg: "fold indices must be given for every molecule or for none".into(),
        })
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut molecules = Vec::new();
    let mut folds = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let err = |msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        if record[0].eq_ignore_ascii_case("id") {
            continue;
        }
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| err(format!("missing field {i}")))?
                .parse::<f64>()
                .map_err(|e| err(format!("field {i}: {e}")))
        };
        let n_atoms: usize = record
            .get(1)
            .ok_or_else(|| err("missing n_atoms".into()))?
            .parse()
            .map_err(|e| err(format!("n_atoms: {e}")))?;
        let base = 2 + 3 * n_atoms;
        if !(base..=base + 2).contains(&record.len()) {
            return Err(err(format!(
                "expected {} to {} fields for {n_atoms} atoms, found {}",
                base,
                base + 2,
                record.len()
            )));
        }
        let mut atoms = Vec::with_capacity(n_atoms);
        for k in 0..n_atoms {
            let z = parse_charge(num(2 + k)?, path, line)?;
            let x = num(2 + n_atoms + 2 * k)?;
            let y = num(3 + n_atoms + 2 * k)?;
            atoms.push(Atom::new(z, x, y));
        }
        let energy = match record.get(base) {
            Some(s) if !s.is_empty() => Some(num(base)?),
            _ => None,
        };
        let fold = match record.get(base + 1) {
            Some(s) if !s.is_empty() => Some(s.parse::<usize>().map_err(|e| err(format!("fold: {e}")))?),
            _ => None,
        };
        molecules.push(Molecule::new(&record[0], atoms, energy)?);
        folds.push(fold);
    }
    Ok((molecules, collect_folds(folds, path)?))
}

fn parse_json(path: &Path, text: &str) -> Result<Parsed> {
    let doc: JsonDataset = serde_json::from_str(text)?;
    let mut molecules = Vec::with_capacity(doc.molecules.len());
    let mut folds = Vec::with_capacity(doc.molecules.len());
    for (i, jm) in doc.molecules.into_iter().enumerate() {
        let err = |msg: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg,
        };
        if jm.charges.len() != jm.positions.len() {
            return Err(err(format!(
                "{} charges but {} positions",
                jm.charges.len(),
                jm.positions.len()
            )));
        }
        let mut atoms = Vec::with_capacity(jm.charges.len());
        for (z, p) in jm.charges.iter().zip(&jm.positions) {
            if p.len() != 2 {
                return Err(err(format!("position must be 2D, got {} components", p.len())));
            }
            atoms.push(Atom::new(parse_charge(*z, path, i + 1)?, p[0], p[1]));
        }
        molecules.push(Molecule::new(jm.id, atoms, jm.energy)?);
        folds.push(jm.fold);
    }
    Ok((molecules, collect_folds(folds, path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h2() -> Molecule {
        Molecule::new("h2", vec![Atom::new(1, 0.0, 0.0), Atom::new(1, 1.4, 0.0)], Some(-104.2)).unwrap()
    }

    #[test]
    fn two_unit_charges_at_unit_distance() {
        let m = Molecule::new("a", vec![Atom::new(1, 0.0, 0.0), Atom::new(1, 1.0, 0.0)], None).unwrap();
        assert_eq!(nuclear_repulsion(&m).unwrap(), 1.0);
    }

    #[test]
    fn equilateral_triangle() {
        let s = 2.0;
        let m = Molecule::new(
            "tri",
            vec![
                Atom::new(1, 0.0, 0.0),
                Atom::new(1, s, 0.0),
                Atom::new(1, s / 2.0, s * 3f64.sqrt() / 2.0),
            ],
            None,
        )
        .unwrap();
        assert!((nuclear_repulsion(&m).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn zero_charge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "m0,2,0,1,0.0,0.0,1.0,0.0,-1.0\n").unwrap();
        let err = Dataset::load(&p, DatasetFormat::Csv, &FoldOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn coincident_atoms_are_rejected() {
        let err = Molecule::new("x", vec![Atom::new(1, 0.5, 0.5), Atom::new(6, 0.5, 0.5)], None).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn single_molecule_file_lands_in_fold_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h2.csv");
        fs::write(&p, "id,n_atoms,z...\nh2,2,1,1,0,0,1.4,0,-104.2\n").unwrap();
        let ds = Dataset::load(&p, DatasetFormat::Csv, &FoldOptions::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.fold(0), 0);
        assert_eq!(ds.molecules[0], h2());
    }

    #[test]
    fn malformed_row_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "m0,2,1,1,0.0,0.0,1.0\n").unwrap();
        let err = Dataset::load(&p, DatasetFormat::Csv, &FoldOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        fs::write(&p, "m0,1,1.5,0.0,0.0,-3\n").unwrap();
        let err = Dataset::load(&p, DatasetFormat::Csv, &FoldOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn missing_energy_only_matters_for_targets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("noe.csv");
        fs::write(&p, "m0,1,6,0.0,0.0\nm1,1,1,0,0,-2.5\n").unwrap();
        let ds = Dataset::load(&p, DatasetFormat::Csv, &FoldOptions::default()).unwrap();
        assert!(matches!(ds.targets(), Err(Error::MissingEnergy(id)) if id == "m0"));
    }

    #[test]
    fn partial_fold_column_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "a,1,1,0,0,-1,3\nb,1,1,0,0,-1\n").unwrap();
        assert!(Dataset::load(&p, DatasetFormat::Csv, &FoldOptions::default()).is_err());
    }

    #[test]
    fn json_matches_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        fs::write(
            &p,
            r#"{"molecules":[{"id":"h2","charges":[1,1],"positions":[[0,0],[1.4,0]],"energy":-104.2}]}"#,
        )
        .unwrap();
        let ds = Dataset::load(&p, DatasetFormat::Json, &FoldOptions::default()).unwrap();
        assert_eq!(ds.molecules[0], h2());
    }

    #[test]
    fn stratified_folds_balance_sizes() {
        let mols: Vec<Molecule> = (0..50)
            .map(|i| {
                let n = 1 + i % 5;
                let atoms = (0..n).map(|k| Atom::new(1, k as f64, 0.0)).collect();
                Molecule::new(format!("m{i}"), atoms, None).unwrap()
            })
            .collect();
        let ds = Dataset::new(
            mols,
            None,
            &FoldOptions {
                seed: 3,
                stratify_by_size: true,
            },
        )
        .unwrap();
        for f in 0..NUM_FOLDS {
            let mut sizes: Vec<usize> = (0..ds.len())
                .filter(|&i| ds.fold(i) == f)
                .map(|i| ds.molecules[i].len())
                .collect();
            sizes.sort();
            assert_eq!(sizes, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        }
    }
}
