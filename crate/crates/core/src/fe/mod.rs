//! Explicit small-strain dynamics on hex8 meshes with a network state at
//! every quadrature point.

pub mod element;
pub mod mesh;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mandel::{components_to_mandel, symmetric_eigenvalues, MandelVector6};
use crate::material::{Constitutive, MaterialSpec};
use crate::network::CompiledNetwork;
use crate::online::{NetworkState, StateSnapshot, StepOptions};
use crate::transfer::{instantiate_network, AnchorSet, OrientationTensor};

use element::{element_quadrature, shape_functions, ElementVector, QuadPoint, CORNERS};
pub use mesh::Mesh;

/// Trace deviation accepted (and corrected) when reading orientation tensors.
pub const TRACE_RENORMALIZE_TOL: f64 = 1e-3;

/// Fiber orientation and volume fraction of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Microstructure {
    pub orientation: OrientationTensor,
    pub vf: f64,
}

/// Reads `elem,axx,ayy,azz,axy,ayz,azx,vf` rows, one per element of `mesh`.
pub fn parse_microstructure_field<R: std::io::Read>(reader: R, path: &str, mesh: &Mesh) -> Result<Vec<Microstructure>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = ["elem", "axx", "ayy", "azz", "axy", "ayz", "azx", "vf"];
    if header != expected {
        return Err(perr(1, format!("expected header '{}', got '{}'", expected.join(","), header.join(","))));
    }
    let index: HashMap<u64, usize> = mesh.elem_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut field: Vec<Option<Microstructure>> = vec![None; mesh.n_elems()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 8 {
            return Err(perr(line, format!("expected 8 fields, got {}", rec.len())));
        }
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| perr(line, format!("invalid element id '{}'", &rec[0])))?;
        let mut v = [0.0; 7];
        for (k, x) in v.iter_mut().enumerate() {
            *x = rec[k + 1]
                .parse()
                .map_err(|_| perr(line, format!("invalid number '{}'", &rec[k + 1])))?;
        }
        let e = *index
            .get(&id)
            .ok_or_else(|| perr(line, format!("element {id} is not in the mesh")))?;
        let orientation = OrientationTensor::from_components_renormalized(
            [v[0], v[1], v[2], v[3], v[4], v[5]],
            TRACE_RENORMALIZE_TOL,
        )
        .map_err(|err| perr(line, err.to_string()))?;
        let vf = v[6];
        if !(vf > 0.0 && vf < 1.0) {
            return Err(perr(line, format!("volume fraction {vf} outside (0, 1)")));
        }
        if field[e].replace(Microstructure { orientation, vf }).is_some() {
            return Err(perr(line, format!("element {id} listed twice")));
        }
    }
    field
        .into_iter()
        .enumerate()
        .map(|(e, m)| m.ok_or_else(|| Error::Mesh(format!("{path}: no microstructure for element {}", mesh.elem_ids[e]))))
        .collect()
}

pub fn load_microstructure_field(path: &Path, mesh: &Mesh) -> Result<Vec<Microstructure>> {
    let f = std::fs::File::open(path)?;
    parse_microstructure_field(f, &path.display().to_string(), mesh)
}

/// Networks of every element, with identical microstructures sharing one
/// instance.
#[derive(Debug, Clone)]
pub struct ElementNetworks {
    pub networks: Vec<Arc<CompiledNetwork>>,
    pub per_element: Vec<Arc<CompiledNetwork>>,
    pub vf: Vec<f64>,
    pub extrapolated: usize,
}

pub fn instantiate_field(anchors: &AnchorSet, field: &[Microstructure]) -> Result<ElementNetworks> {
    let mut cache: HashMap<[u64; 7], Arc<CompiledNetwork>> = HashMap::new();
    let mut networks = Vec::new();
    let mut per_element = Vec::with_capacity(field.len());
    let mut extrapolated = 0;
    for m in field {
        let c = m.orientation.components();
        let key = [c[0], c[1], c[2], c[3], c[4], c[5], m.vf].map(f64::to_bits);
        let net = match cache.get(&key) {
            Some(n) => n.clone(),
            None => {
                let inst = instantiate_network(anchors, &m.orientation, m.vf)?;
                extrapolated += usize::from(inst.extrapolated);
                let n = Arc::new(inst.network.compile()?);
                cache.insert(key, n.clone());
                networks.push(n.clone());
                n
            }
        };
        per_element.push(net);
    }
    Ok(ElementNetworks {
        networks,
        per_element,
        vf: field.iter().map(|m| m.vf).collect(),
        extrapolated,
    })
}

/// Prescribed motion of a node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Constant velocity on the listed components (0 = fixed).
    Velocity { components: Vec<usize>, value: f64 },
    /// `u = t·ε̇·x` on all components, `ε̇` given as tensor components
    /// `(11, 22, 33, 12, 23, 31)`.
    Affine { strain_rate: [f64; 6] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub set: String,
    #[serde(flatten)]
    pub kind: BoundaryKind,
}

/// Constant force on every node of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalLoad {
    pub set: String,
    pub component: usize,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Run with `dt` above the stability estimate.
    pub allow_unstable_dt: bool,
    /// Steps between history and field outputs.
    pub output_every: usize,
    pub boundary: Vec<BoundaryCondition>,
    pub loads: Vec<NodalLoad>,
    pub initial_velocity: [f64; 3],
    pub density_fiber: f64,
    pub density_matrix: f64,
    pub fiber: MaterialSpec,
    pub matrix: MaterialSpec,
    pub step: StepOptions,
    /// Node sets whose summed reaction forces are recorded.
    pub reaction_sets: Vec<String>,
    /// Keep per-quadrature-point stress fields at every output.
    pub write_fields: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-7,
            t_end: 1e-5,
            allow_unstable_dt: false,
            output_every: 10,
            boundary: Vec::new(),
            loads: Vec::new(),
            initial_velocity: [0.0; 3],
            density_fiber: 2.54e-9,
            density_matrix: 1.0e-9,
            fiber: MaterialSpec::part_fiber(),
            matrix: MaterialSpec::part_matrix(),
            step: StepOptions::default(),
            reaction_sets: Vec::new(),
            write_fields: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub time: f64,
    /// Summed reaction of each reaction set.
    pub reactions: Vec<[f64; 3]>,
    pub kinetic: f64,
    pub internal_work: f64,
    pub external_work: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub step: usize,
    pub time: f64,
    /// `(element id, qp, stress tensor components, homogenized EPS)`.
    pub stress: Vec<(u64, usize, [f64; 6], f64)>,
    pub displacement: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOutput {
    pub history: Vec<HistoryRecord>,
    pub fields: Vec<FieldSnapshot>,
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSnapshot {
    pub step: usize,
    pub time: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub f_int: Vec<f64>,
    pub internal_work: f64,
    pub external_work: f64,
    pub states: Vec<StateSnapshot>,
}

/// Prescribed displacement `u(t) = rate·t` of one degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Prescribed {
    rate: f64,
}

pub struct Simulation {
    mesh: Mesh,
    config: SimConfig,
    quad: Vec<[QuadPoint; 8]>,
    /// Eight states per element, element-major.
    states: Vec<NetworkState>,
    mass: Vec<f64>,
    prescribed: Vec<Option<Prescribed>>,
    f_ext: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    f_int: Vec<f64>,
    step: usize,
    time: f64,
    internal_work: f64,
    external_work: f64,
    reaction_sets: Vec<Vec<usize>>,
    dt_critical: f64,
}

fn min_edge(x: &[Vector3<f64>; 8]) -> f64 {
    const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 0),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 4),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];
    EDGES.iter().map(|&(a, b)| (x[a] - x[b]).norm()).fold(f64::INFINITY, f64::min)
}

impl Simulation {
    /// Binds `networks[e]` (with fiber fraction `vf[e]`) to all quadrature
    /// points of element `e`.
    pub fn new(mesh: Mesh, config: SimConfig, networks: &[Arc<CompiledNetwork>], vf: &[f64]) -> Result<Self> {
        let ne = mesh.n_elems();
        if networks.len() != ne || vf.len() != ne {
            return Err(Error::Mesh(format!(
                "{} networks and {} volume fractions for {ne} elements",
                networks.len(),
                vf.len()
            )));
        }
        if !(config.dt > 0.0) || !(config.t_end >= 0.0) {
            return Err(Error::Parameter("dt must be positive and t_end non-negative".into()));
        }
        if !(config.density_fiber > 0.0 && config.density_matrix > 0.0) {
            return Err(Error::Parameter("densities must be positive".into()));
        }
        let fiber: Arc<Constitutive> = config.fiber.build()?;
        let matrix: Arc<Constitutive> = config.matrix.build()?;
        let quad = (0..ne)
            .map(|e| element_quadrature(&mesh.elem_coords(e), mesh.elem_ids[e] as usize))
            .collect::<Result<Vec<_>>>()?;

        let mut states = Vec::with_capacity(8 * ne);
        for net in networks {
            let s = NetworkState::from_compiled(net.clone(), fiber.clone(), matrix.clone())?;
            for _ in 0..8 {
                states.push(s.clone());
            }
        }

        let nd = 3 * mesh.n_nodes();
        let gp = element::gauss_points();
        let mut mass = vec![0.0; nd];
        let mut stiffest: HashMap<*const CompiledNetwork, f64> = HashMap::new();
        let mut dt_critical = f64::INFINITY;
        for e in 0..ne {
            let rho = (1.0 - vf[e]) * config.density_matrix + vf[e] * config.density_fiber;
            for (q, xi) in quad[e].iter().zip(&gp) {
                let n = shape_functions(xi);
                for a in 0..8 {
                    let m = rho * n[a] * q.weight;
                    for k in 0..3 {
                        mass[3 * mesh.elems[e][a] + k] += m;
                    }
                }
            }
            let key = Arc::as_ptr(&networks[e]);
            let modulus = match stiffest.get(&key) {
                Some(m) => *m,
                None => {
                    let c = networks[e].forward_stiffness(&fiber.stiffness, &matrix.stiffness)?;
                    let m = symmetric_eigenvalues(&c).max();
                    stiffest.insert(key, m);
                    m
                }
            };
            let wave = (modulus / rho).sqrt();
            dt_critical = dt_critical.min(min_edge(&mesh.elem_coords(e)) / wave);
        }
        log::info!("stable time step estimate {dt_critical:.4e} (dt = {:.4e})", config.dt);
        if config.dt > dt_critical && !config.allow_unstable_dt {
            return Err(Error::Parameter(format!(
                "dt = {:.4e} exceeds the stability estimate {dt_critical:.4e}; set allow_unstable_dt to override",
                config.dt
            )));
        }

        let mut prescribed = vec![None; nd];
        let mut v = vec![0.0; nd];
        for n in 0..mesh.n_nodes() {
            for k in 0..3 {
                v[3 * n + k] = config.initial_velocity[k];
            }
        }
        for bc in &config.boundary {
            let set = mesh.node_set(&bc.set)?.to_vec();
            match &bc.kind {
                BoundaryKind::Velocity { components, value } => {
                    if let Some(c) = components.iter().find(|&&c| c > 2) {
                        return Err(Error::Parameter(format!("boundary component {c} out of range")));
                    }
                    for &n in &set {
                        for &c in components {
                            prescribed[3 * n + c] = Some(Prescribed { rate: *value });
                        }
                    }
                }
                BoundaryKind::Affine { strain_rate } => {
                    let m = crate::mandel::mandel_to_tensor(&components_to_mandel(strain_rate));
                    for &n in &set {
                        let rate = m * mesh.coords[n];
                        for c in 0..3 {
                            prescribed[3 * n + c] = Some(Prescribed { rate: rate[c] });
                        }
                    }
                }
            }
        }
        for (i, p) in prescribed.iter().enumerate() {
            if let Some(p) = p {
                v[i] = p.rate;
            } else if !(mass[i] > 0.0) {
                return Err(Error::Mesh(format!("free degree of freedom {i} has no mass")));
            }
        }
        let mut f_ext = vec![0.0; nd];
        for load in &config.loads {
            if load.component > 2 {
                return Err(Error::Parameter(format!("load component {} out of range", load.component)));
            }
            for &n in mesh.node_set(&load.set)? {
                f_ext[3 * n + load.component] += load.force;
            }
        }
        let reaction_sets = config
            .reaction_sets
            .iter()
            .map(|s| mesh.node_set(s).map(<[usize]>::to_vec))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            quad,
            states,
            mass,
            prescribed,
            f_ext,
            u: vec![0.0; nd],
            v,
            f_int: vec![0.0; nd],
            step: 0,
            time: 0.0,
            internal_work: 0.0,
            external_work: 0.0,
            reaction_sets,
            dt_critical,
            mesh,
            config,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn dt_critical(&self) -> f64 {
        self.dt_critical
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn displacement(&self) -> &[f64] {
        &self.u
    }

    pub fn internal_force(&self) -> &[f64] {
        &self.f_int
    }

    pub fn state(&self, element: usize, qp: usize) -> &NetworkState {
        &self.states[8 * element + qp]
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.mass
    }

    /// Steps every quadrature point by the strain of the displacement
    /// increment `du` and returns the assembled internal force at the new
    /// stresses. States are committed.
    pub fn assemble_internal_force(&mut self, du: &[f64]) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let opts = self.config.step;
        let per_element: Vec<ElementVector> = self
            .states
            .par_chunks_mut(8)
            .zip(self.quad.par_iter())
            .enumerate()
            .map(|(e, (states, quad))| {
                let nodes = &mesh.elems[e];
                let due = ElementVector::from_fn(|i, _| du[3 * nodes[i / 3] + i % 3]);
                let mut f = ElementVector::zeros();
                for (qp, (state, q)) in states.iter_mut().zip(quad.iter()).enumerate() {
                    let deps: MandelVector6 = q.b * due;
                    let out = state.step(&deps, &opts).map_err(|err| Error::QuadraturePoint {
                        element: mesh.elem_ids[e] as usize,
                        qp,
                        source: Box::new(err),
                    })?;
                    state.commit(&out);
                    f += q.b.transpose() * state.stress() * q.weight;
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut f_int = vec![0.0; self.u.len()];
        for (e, f) in per_element.iter().enumerate() {
            for (a, &n) in mesh.elems[e].iter().enumerate() {
                for k in 0..3 {
                    f_int[3 * n + k] += f[3 * a + k];
                }
            }
        }
        Ok(f_int)
    }

    /// Summed reaction `F_int − F_ext` over the constrained dofs of a set.
    fn reaction(&self, set: &[usize]) -> [f64; 3] {
        let mut r = [0.0; 3];
        for &n in set {
            for (k, rk) in r.iter_mut().enumerate() {
                let i = 3 * n + k;
                if self.prescribed[i].is_some() {
                    *rk += self.f_int[i] - self.f_ext[i];
                }
            }
        }
        r
    }

    fn kinetic(&self) -> f64 {
        0.5 * self.mass.iter().zip(&self.v).map(|(m, v)| m * v * v).sum::<f64>()
    }

    pub fn history_record(&self) -> HistoryRecord {
        HistoryRecord {
            step: self.step,
            time: self.time,
            reactions: self.reaction_sets.iter().map(|s| self.reaction(s)).collect(),
            kinetic: self.kinetic(),
            internal_work: self.internal_work,
            external_work: self.external_work,
        }
    }

    pub fn field_snapshot(&self) -> FieldSnapshot {
        let mut stress = Vec::with_capacity(self.states.len());
        for (i, s) in self.states.iter().enumerate() {
            stress.push((
                self.mesh.elem_ids[i / 8],
                i % 8,
                crate::mandel::mandel_to_components(s.stress()),
                s.homogenized_eps(),
            ));
        }
        FieldSnapshot {
            step: self.step,
            time: self.time,
            stress,
            displacement: self.u.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }

    /// One central-difference step.
    pub fn advance(&mut self) -> Result<()> {
        let dt = self.config.dt;
        let t_new = self.time + dt;
        let mut du = vec![0.0; self.u.len()];
        for i in 0..self.u.len() {
            let u_new = match self.prescribed[i] {
                Some(p) => {
                    self.v[i] = p.rate;
                    p.rate * t_new
                }
                None => {
                    let a = (self.f_ext[i] - self.f_int[i]) / self.mass[i];
                    self.v[i] += a * dt;
                    self.u[i] + self.v[i] * dt
                }
            };
            du[i] = u_new - self.u[i];
        }
        if du.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::BlowUp {
                time: t_new,
                last_stable: self.time,
            });
        }
        let f_new = self.assemble_internal_force(&du)?;
        if f_new.iter().any(|x| !x.is_finite()) {
            return Err(Error::BlowUp {
                time: t_new,
                last_stable: self.time,
            });
        }
        for i in 0..self.u.len() {
            let f_mid = 0.5 * (self.f_int[i] + f_new[i]);
            self.internal_work += f_mid * du[i];
            self.external_work += self.f_ext[i] * du[i];
            if self.prescribed[i].is_some() {
                self.external_work += (f_mid - self.f_ext[i]) * du[i];
            }
            self.u[i] += du[i];
        }
        self.f_int = f_new;
        self.time = t_new;
        self.step += 1;
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.config.t_end / self.config.dt).round() as usize
    }

    /// Advances to `t_end`, recording outputs at the configured cadence
    /// (and at the current and the final step).
    pub fn run(&mut self) -> Result<SimOutput> {
        let mut out = SimOutput::default();
        let total = self.n_steps();
        let every = self.config.output_every.max(1);
        let record = |sim: &Simulation, out: &mut SimOutput| {
            out.history.push(sim.history_record());
            if sim.config.write_fields {
                out.fields.push(sim.field_snapshot());
            }
        };
        record(self, &mut out);
        while self.step < total {
            self.advance()?;
            if self.step.is_multiple_of(every) || self.step == total {
                record(self, &mut out);
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> SimSnapshot {
        SimSnapshot {
            step: self.step,
            time: self.time,
            u: self.u.clone(),
            v: self.v.clone(),
            f_int: self.f_int.clone(),
            internal_work: self.internal_work,
            external_work: self.external_work,
            states: self.states.iter().map(NetworkState::snapshot).collect(),
        }
    }

    pub fn restore(&mut self, s: &SimSnapshot) -> Result<()> {
        if s.u.len() != self.u.len() || s.states.len() != self.states.len() {
            return Err(Error::Format("snapshot does not match the model".into()));
        }
        for (state, snap) in self.states.iter_mut().zip(&s.states) {
            state.restore(snap)?;
        }
        self.step = s.step;
        self.time = s.time;
        self.u.clone_from(&s.u);
        self.v.clone_from(&s.v);
        self.f_int.clone_from(&s.f_int);
        self.internal_work = s.internal_work;
        self.external_work = s.external_work;
        Ok(())
    }
}

/// Corner ordering shared with the mesh format, exposed for mesh writers.
pub fn hex_corners() -> [[f64; 3]; 8] {
    CORNERS
}
