//! Causal representation of a coupled ODE system: one mechanism per
//! variable, each naming its parents explicitly.
//!
//! Two mechanism kinds are supported: the damped linear second-order family
//! `m ẍ + b ẋ + a x = Σ_j w_j x_j + c + forcing(t)`, and clamps that pin a
//! variable to a prescribed trajectory. Clamping is exactly how a perfect
//! intervention is realised: the targeted variable's mechanism is replaced,
//! everything else is left untouched.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::trajectory::{QuasiPeriodicSignal, TrajectoryBundle};

/// `mass · ẍ + damping · ẋ + stiffness · x = Σ_j parent_weights[j] · x_j +
/// constant + forcing(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMechanism {
    pub mass: f64,
    pub damping: f64,
    /// Coefficient of the variable's own position (restoring term).
    pub stiffness: f64,
    pub parent_weights: BTreeMap<usize, f64>,
    pub constant: f64,
    /// Intrinsic time-dependent drive; zero signal when absent.
    pub forcing: QuasiPeriodicSignal,
}

impl LinearMechanism {
    pub fn new(mass: f64, damping: f64, stiffness: f64) -> Self {
        Self {
            mass,
            damping,
            stiffness,
            parent_weights: BTreeMap::new(),
            constant: 0.0,
            forcing: QuasiPeriodicSignal::zero(),
        }
    }

    pub fn with_parent(mut self, label: usize, weight: f64) -> Self {
        self.parent_weights.insert(label, weight);
        self
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn with_forcing(mut self, forcing: QuasiPeriodicSignal) -> Self {
        self.forcing = forcing;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Linear(LinearMechanism),
    /// The variable follows the signal exactly; it has no parents and no
    /// initial conditions (the signal fixes them at t = 0).
    Clamped(QuasiPeriodicSignal),
}

impl Mechanism {
    pub fn parents(&self) -> Vec<usize> {
        match self {
            Mechanism::Linear(m) => m.parent_weights.keys().copied().collect(),
            Mechanism::Clamped(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OdeError {
    #[error("system must have at least one variable")]
    Empty,
    #[error("expected {expected} values for {what}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("mass of variable {label} must be positive, got {value}")]
    NonPositiveMass { label: usize, value: f64 },
    #[error("damping of variable {label} must be non-negative, got {value}")]
    NegativeDamping { label: usize, value: f64 },
    #[error("spring constant k{index} must be non-negative, got {value}")]
    NegativeSpringConstant { index: usize, value: f64 },
    #[error("variable {label} lists itself as a parent")]
    SelfParent { label: usize },
    #[error("variable {label} references unknown parent {parent}")]
    UnknownParent { label: usize, parent: usize },
    #[error("unknown variable label {0}")]
    UnknownLabel(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Variable {
    mechanism: Mechanism,
    /// (position, velocity) at t = 0; `None` for clamped variables and for
    /// linear variables whose conditions will be supplied at simulation time.
    initial: Option<(f64, f64)>,
}

/// A system of `D` coupled variables, labelled `1..=D`.
///
/// Immutable in practice: [`CausalOde::intervene`] returns a new system.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalOde {
    variables: Vec<Variable>,
}

impl CausalOde {
    /// Builds a system from mechanisms given in label order (label `i` is
    /// `mechanisms[i - 1]`). Linear variables start with initial conditions
    /// `(0, 0)`.
    pub fn from_mechanisms(mechanisms: Vec<Mechanism>) -> Result<Self, OdeError> {
        if mechanisms.is_empty() {
            return Err(OdeError::Empty);
        }
        let dimension = mechanisms.len();
        for (idx, mech) in mechanisms.iter().enumerate() {
            let label = idx + 1;
            if let Mechanism::Linear(m) = mech {
                if !(m.mass > 0.0) {
                    return Err(OdeError::NonPositiveMass { label, value: m.mass });
                }
                if m.damping < 0.0 {
                    return Err(OdeError::NegativeDamping { label, value: m.damping });
                }
                if m.parent_weights.contains_key(&label) {
                    return Err(OdeError::SelfParent { label });
                }
                for &parent in m.parent_weights.keys() {
                    if parent == 0 || parent > dimension {
                        return Err(OdeError::UnknownParent { label, parent });
                    }
                }
            }
        }
        let variables = mechanisms
            .into_iter()
            .map(|mechanism| {
                let initial = match &mechanism {
                    Mechanism::Linear(_) => Some((0.0, 0.0)),
                    Mechanism::Clamped(_) => None,
                };
                Variable { mechanism, initial }
            })
            .collect();
        Ok(Self { variables })
    }

    /// Number of variables `D`.
    pub fn dimension(&self) -> usize {
        self.variables.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> {
        1..=self.dimension()
    }

    pub fn mechanism(&self, label: usize) -> Result<&Mechanism, OdeError> {
        self.variables
            .get(label.wrapping_sub(1))
            .map(|v| &v.mechanism)
            .ok_or(OdeError::UnknownLabel(label))
    }

    pub fn initial_condition(&self, label: usize) -> Option<(f64, f64)> {
        self.variables.get(label.wrapping_sub(1)).and_then(|v| v.initial)
    }

    pub fn set_initial_condition(
        &mut self,
        label: usize,
        position: f64,
        velocity: f64,
    ) -> Result<(), OdeError> {
        let var = self
            .variables
            .get_mut(label.wrapping_sub(1))
            .ok_or(OdeError::UnknownLabel(label))?;
        if matches!(var.mechanism, Mechanism::Linear(_)) {
            var.initial = Some((position, velocity));
        }
        Ok(())
    }

    /// Labels whose mechanism is linear (the state-carrying variables).
    pub fn free_labels(&self) -> Vec<usize> {
        self.labels()
            .filter(|&l| matches!(self.variables[l - 1].mechanism, Mechanism::Linear(_)))
            .collect()
    }

    pub fn clamped_labels(&self) -> Vec<usize> {
        self.labels()
            .filter(|&l| matches!(self.variables[l - 1].mechanism, Mechanism::Clamped(_)))
            .collect()
    }

    /// Perfect intervention: replaces each targeted variable's mechanism
    /// with a clamp to the given trajectory. Idempotent for identical
    /// targets; a later intervention on the same variable overwrites an
    /// earlier one. All other mechanisms and initial conditions are
    /// unchanged.
    pub fn intervene(&self, targets: &TrajectoryBundle) -> Result<Self, OdeError> {
        for label in targets.labels() {
            if label == 0 || label > self.dimension() {
                return Err(OdeError::UnknownLabel(label));
            }
        }
        let mut out = self.clone();
        for (label, signal) in targets.iter() {
            out.variables[label - 1] =
                Variable { mechanism: Mechanism::Clamped(signal.clone()), initial: None };
        }
        Ok(out)
    }

    /// The causal graph implied by the mechanisms: an edge `j -> i` for each
    /// parent `j` of `i`, and a self-loop on every linear variable (its
    /// position enters its own mechanism at several derivative orders).
    /// Clamped variables have no incoming edges.
    pub fn causal_graph(&self) -> CausalGraph {
        let mut edges = std::collections::BTreeSet::new();
        for (idx, var) in self.variables.iter().enumerate() {
            let label = idx + 1;
            if let Mechanism::Linear(m) = &var.mechanism {
                edges.insert((label, label));
                for &parent in m.parent_weights.keys() {
                    edges.insert((parent, label));
                }
            }
        }
        CausalGraph { nodes: self.labels().collect(), edges }
    }

    /// All angular frequencies driving the system: components of clamp
    /// signals and of intrinsic forcings, canonical and deduplicated.
    pub fn active_frequencies(&self) -> Vec<f64> {
        let mut freqs: Vec<f64> = Vec::new();
        for var in &self.variables {
            let signal = match &var.mechanism {
                Mechanism::Linear(m) => &m.forcing,
                Mechanism::Clamped(s) => s,
            };
            freqs.extend(signal.frequencies());
        }
        freqs.sort_by(f64::total_cmp);
        freqs.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
        freqs
    }

    /// The constant configuration solving the system with all derivatives
    /// zero: `stiffness_i · x_i = Σ_j w_ij · x_j + c_i + DC(forcing_i)`,
    /// with clamped variables contributing their signal offsets. `None`
    /// when the linear part is singular.
    pub fn rest_configuration(&self) -> Option<BTreeMap<usize, f64>> {
        let free = self.free_labels();
        let mut rest = BTreeMap::new();
        for &label in &self.clamped_labels() {
            if let Mechanism::Clamped(s) = &self.variables[label - 1].mechanism {
                rest.insert(label, s.canonicalize().offset);
            }
        }
        if free.is_empty() {
            return Some(rest);
        }
        let index: BTreeMap<usize, usize> =
            free.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let n = free.len();
        let mut matrix = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (row, &label) in free.iter().enumerate() {
            let Mechanism::Linear(m) = &self.variables[label - 1].mechanism else {
                unreachable!()
            };
            matrix[(row, row)] = m.stiffness;
            rhs[row] = m.constant + m.forcing.canonicalize().offset;
            for (&parent, &weight) in &m.parent_weights {
                match index.get(&parent) {
                    Some(&col) => matrix[(row, col)] -= weight,
                    None => rhs[row] += weight * rest[&parent],
                }
            }
        }
        let svd = matrix.svd(true, true);
        let sv = &svd.singular_values;
        if !(sv.min() > 1e-12 * sv.max() && sv.min() > 0.0) {
            return None;
        }
        let solution = svd.solve(&rhs, 0.0).ok()?;
        for (i, &label) in free.iter().enumerate() {
            rest.insert(label, solution[i]);
        }
        Some(rest)
    }
}

/// Builds the chain of `masses.len()` masses coupled by springs, with fixed
/// walls at positions `0` (left) and `wall_position` (right).
///
/// Spring `i` (constant `spring_constants[i]`, natural length
/// `natural_lengths[i]`) connects mass `i` to mass `i + 1`; springs `0` and
/// `D` attach the outer masses to the walls. Variable `i` gets stiffness
/// `k_{i-1} + k_i`, parent weights `k_{i-1}` and `k_i` towards its
/// neighbours, and constant `k_{i-1} l_{i-1} - k_i l_i` (plus `k_D · L` for
/// the last mass; the left wall sits at zero and contributes nothing).
pub fn build_mass_spring(
    masses: &[f64],
    dampings: &[f64],
    spring_constants: &[f64],
    natural_lengths: &[f64],
    wall_position: f64,
) -> Result<CausalOde, OdeError> {
    let d = masses.len();
    if d == 0 {
        return Err(OdeError::Empty);
    }
    if dampings.len() != d {
        return Err(OdeError::DimensionMismatch { what: "dampings", expected: d, got: dampings.len() });
    }
    if spring_constants.len() != d + 1 {
        return Err(OdeError::DimensionMismatch {
            what: "spring constants",
            expected: d + 1,
            got: spring_constants.len(),
        });
    }
    if natural_lengths.len() != d + 1 {
        return Err(OdeError::DimensionMismatch {
            what: "natural lengths",
            expected: d + 1,
            got: natural_lengths.len(),
        });
    }
    for (i, &k) in spring_constants.iter().enumerate() {
        if k < 0.0 {
            return Err(OdeError::NegativeSpringConstant { index: i, value: k });
        }
    }

    let mut mechanisms = Vec::with_capacity(d);
    for i in 1..=d {
        let (k_left, k_right) = (spring_constants[i - 1], spring_constants[i]);
        let (l_left, l_right) = (natural_lengths[i - 1], natural_lengths[i]);
        let mut constant = k_left * l_left - k_right * l_right;
        if i == d {
            constant += k_right * wall_position;
        }
        let mut mech = LinearMechanism::new(masses[i - 1], dampings[i - 1], k_left + k_right)
            .with_constant(constant);
        if i > 1 && k_left != 0.0 {
            mech = mech.with_parent(i - 1, k_left);
        }
        if i < d && k_right != 0.0 {
            mech = mech.with_parent(i + 1, k_right);
        }
        mechanisms.push(Mechanism::Linear(mech));
    }
    CausalOde::from_mechanisms(mechanisms)
}

/// Directed graph over variable labels, self-loops included.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CausalGraph {
    pub nodes: Vec<usize>,
    /// Edges as `(from, to)` pairs in lexicographic order.
    pub edges: std::collections::BTreeSet<(usize, usize)>,
}

impl CausalGraph {
    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }
}

impl fmt::Display for CausalGraph {
    /// Space-separated `from->to` pairs, e.g. `1->1 1->2 2->1 2->2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (from, to) in &self.edges {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{from}->{to}")?;
            first = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_chain() -> CausalOde {
        build_mass_spring(&[1.0, 1.0], &[0.1, 0.1], &[1.0; 3], &[1.0; 3], 3.0).unwrap()
    }

    #[test]
    fn mass_spring_first_variable_coefficients() {
        let ode = symmetric_chain();
        let Mechanism::Linear(m) = ode.mechanism(1).unwrap() else { panic!() };
        assert_eq!(m.stiffness, 2.0);
        assert_eq!(m.parent_weights, BTreeMap::from([(2, 1.0)]));
        assert_eq!(m.constant, 0.0);
    }

    #[test]
    fn mass_spring_last_variable_picks_up_wall_term() {
        let ode = symmetric_chain();
        let Mechanism::Linear(m) = ode.mechanism(2).unwrap() else { panic!() };
        // k1·l1 - k2·l2 + k2·L = 1 - 1 + 3.
        assert_eq!(m.constant, 3.0);
        assert_eq!(m.parent_weights, BTreeMap::from([(1, 1.0)]));
    }

    #[test]
    fn single_mass_has_no_parents() {
        let ode = build_mass_spring(&[2.0], &[0.5], &[1.0, 3.0], &[1.0, 1.0], 2.0).unwrap();
        let Mechanism::Linear(m) = ode.mechanism(1).unwrap() else { panic!() };
        assert!(m.parent_weights.is_empty());
        assert_eq!(m.stiffness, 4.0);
        // k0·l0 - k1·l1 + k1·L = 1 - 3 + 6.
        assert_eq!(m.constant, 4.0);
    }

    #[test]
    fn mass_spring_validates_dimensions() {
        assert!(matches!(
            build_mass_spring(&[1.0, 1.0], &[0.1], &[1.0; 3], &[1.0; 3], 3.0),
            Err(OdeError::DimensionMismatch { what: "dampings", .. })
        ));
        assert!(matches!(
            build_mass_spring(&[1.0], &[0.1], &[1.0; 3], &[1.0; 2], 3.0),
            Err(OdeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_springs_decouple_the_chain() {
        let ode = build_mass_spring(&[1.0, 1.0, 1.0], &[0.1; 3], &[0.0; 4], &[1.0; 4], 3.0).unwrap();
        for label in ode.labels() {
            assert!(ode.mechanism(label).unwrap().parents().is_empty());
        }
        let g = ode.causal_graph();
        assert_eq!(g.edges.len(), 3, "only self-loops remain");
    }

    #[test]
    fn empty_intervention_is_identity() {
        let ode = symmetric_chain();
        assert_eq!(ode.intervene(&TrajectoryBundle::new()).unwrap(), ode);
    }

    #[test]
    fn intervention_clamps_target_and_preserves_the_rest() {
        let ode = symmetric_chain();
        let clamp = QuasiPeriodicSignal::constant(1.0).with_component(0.5, 2.0, 0.0);
        let targets = TrajectoryBundle::new().with(1, clamp.clone());
        let intervened = ode.intervene(&targets).unwrap();
        assert_eq!(intervened.mechanism(1).unwrap(), &Mechanism::Clamped(clamp));
        assert_eq!(intervened.mechanism(2).unwrap(), ode.mechanism(2).unwrap());
        assert_eq!(intervened.initial_condition(1), None);
        assert_eq!(intervened.initial_condition(2), ode.initial_condition(2));
        // Idempotent for identical targets.
        assert_eq!(intervened.intervene(&targets).unwrap(), intervened);
    }

    #[test]
    fn intervention_rejects_unknown_label() {
        let ode = symmetric_chain();
        let targets = TrajectoryBundle::new().with(7, QuasiPeriodicSignal::zero());
        assert_eq!(ode.intervene(&targets), Err(OdeError::UnknownLabel(7)));
    }

    #[test]
    fn observational_graph_is_fully_coupled() {
        let g = symmetric_chain().causal_graph();
        let expected: std::collections::BTreeSet<_> =
            [(1, 1), (1, 2), (2, 1), (2, 2)].into_iter().collect();
        assert_eq!(g.edges, expected);
        assert_eq!(g.to_string(), "1->1 1->2 2->1 2->2");
    }

    #[test]
    fn intervention_removes_in_edges_and_self_loop() {
        let ode = symmetric_chain();
        let targets = TrajectoryBundle::new().with(1, QuasiPeriodicSignal::constant(1.0));
        let g = ode.intervene(&targets).unwrap().causal_graph();
        let expected: std::collections::BTreeSet<_> = [(1, 2), (2, 2)].into_iter().collect();
        assert_eq!(g.edges, expected);
    }

    #[test]
    fn fully_clamped_graph_has_no_edges() {
        let ode = symmetric_chain();
        let targets = TrajectoryBundle::new()
            .with(1, QuasiPeriodicSignal::constant(1.0))
            .with(2, QuasiPeriodicSignal::constant(2.0));
        let g = ode.intervene(&targets).unwrap().causal_graph();
        assert!(g.edges.is_empty());
        assert_eq!(g.to_string(), "");
    }

    #[test]
    fn graph_surgery_matches_intervention_for_every_target_subset() {
        let ode = symmetric_chain();
        let subsets: [&[usize]; 4] = [&[], &[1], &[2], &[1, 2]];
        for subset in subsets {
            let mut targets = TrajectoryBundle::new();
            for &label in subset {
                targets.insert(label, QuasiPeriodicSignal::constant(1.0));
            }
            let intervened_graph = ode.intervene(&targets).unwrap().causal_graph();
            // Surgery on the observational graph: drop edges into targets.
            let surgery: std::collections::BTreeSet<_> = ode
                .causal_graph()
                .edges
                .into_iter()
                .filter(|&(_, to)| !subset.contains(&to))
                .collect();
            assert_eq!(intervened_graph.edges, surgery, "targets {subset:?}");
        }
    }

    #[test]
    fn disjoint_interventions_compose() {
        let ode = build_mass_spring(&[1.0; 3], &[0.1; 3], &[1.0; 4], &[1.0; 4], 4.0).unwrap();
        let a = TrajectoryBundle::new().with(1, QuasiPeriodicSignal::constant(1.0));
        let b = TrajectoryBundle::new().with(3, QuasiPeriodicSignal::cosine(1.0, 2.0, 0.0));
        let sequential = ode.intervene(&a).unwrap().intervene(&b).unwrap();
        let joint = ode.intervene(&a.merge(&b)).unwrap();
        assert_eq!(sequential, joint);
    }

    #[test]
    fn rest_configuration_of_symmetric_chain() {
        let rest = symmetric_chain().rest_configuration().unwrap();
        assert!((rest[&1] - 1.0).abs() < 1e-12);
        assert!((rest[&2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rest_configuration_uses_clamp_offsets() {
        let ode = symmetric_chain();
        let targets =
            TrajectoryBundle::new().with(2, QuasiPeriodicSignal::constant(4.0).with_component(1.0, 3.0, 0.0));
        let rest = ode.intervene(&targets).unwrap().rest_configuration().unwrap();
        // stiffness 2, parent weight 1: x1 = (0 + 1·4)/2.
        assert!((rest[&1] - 2.0).abs() < 1e-12);
        assert_eq!(rest[&2], 4.0);
    }
}
