//! Probe campaign simulator.
//!
//! Draw order for a campaign: flows in id order, repeats inner, per-link
//! jitter innermost, then the end-to-end noise draw for that probe. Every
//! draw happens even when its sigma is zero, so changing one sigma never
//! shifts the stream seen by the other.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowplan::{FlowPlan, MonitoringFlow};
use crate::topology::{LinkId, Topology, TopologyError};

/// Name of the random generator used for every seeded stream.
pub const GENERATOR: &str = "chacha8";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("link {0} has no delay configured")]
    MissingDelay(String),
    #[error("flow {flow} uses link {link}, which is not in the topology")]
    UnknownLink { flow: usize, link: String },
    #[error("invalid delay model: {0}")]
    Config(String),
    #[error("campaign has {campaign} flows but the plan has {plan}")]
    Cardinality { plan: usize, campaign: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Median,
    Mean,
}

impl Aggregator {
    pub fn apply(self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    (v[m - 1] + v[m]) / 2.0
                }
            }
        }
    }
}

/// Noise model on top of the per-link base delays stored in the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    /// Per-traversal queuing jitter, ms.
    pub jitter_sigma_ms: f64,
    /// Per-probe end-to-end noise, ms.
    pub noise_sigma_ms: f64,
    pub seed: u64,
    pub aggregator: Aggregator,
    pub generator: String,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            jitter_sigma_ms: 0.0,
            noise_sigma_ms: 0.0,
            seed: 0,
            aggregator: Aggregator::Median,
            generator: GENERATOR.to_string(),
        }
    }
}

impl DelayModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        for (name, s) in [
            ("jitter_sigma_ms", self.jitter_sigma_ms),
            ("noise_sigma_ms", self.noise_sigma_ms),
        ] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(ProbeError::Config(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        if self.generator != GENERATOR {
            return Err(ProbeError::Config(format!(
                "unsupported generator {:?}, only {GENERATOR} is available",
                self.generator
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Per-link delays over an ordered link list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDelayVector {
    pub links: Vec<LinkId>,
    pub delays_ms: Vec<f64>,
}

impl LinkDelayVector {
    pub fn len(&self) -> usize {
        self.delays_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays_ms.is_empty()
    }

    pub fn get(&self, link: LinkId) -> Option<f64> {
        self.links
            .iter()
            .position(|&l| l == link)
            .map(|k| self.delays_ms[k])
    }
}

/// Base delays of the targeted links, in link-index order.
pub fn ground_truth_ldv(topo: &Topology) -> Result<LinkDelayVector, ProbeError> {
    let links = topo.targeted_links().to_vec();
    let delays_ms = links
        .iter()
        .map(|&l| {
            topo.link(l)
                .and_then(|d| d.true_delay_ms)
                .ok_or_else(|| ProbeError::MissingDelay(topo.link_label(l)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinkDelayVector { links, delays_ms })
}

/// Copy of `topo` with every link delay drawn uniformly from `[lo, hi]` ms.
///
/// Links are visited in sorted order.
pub fn plant_uniform_delays(
    topo: &Topology,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<Topology, ProbeError> {
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(ProbeError::Config(format!("bad delay range {lo}:{hi}")));
    }
    let mut ids: Vec<LinkId> = topo.links().iter().map(|l| l.id()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi);
    let delays: HashMap<LinkId, f64> = ids.into_iter().map(|l| (l, rng.sample(dist))).collect();
    Ok(topo.with_delays(&delays)?)
}

/// One probe of `flow`: jittered per-link delays plus end-to-end noise.
pub fn measure_flow(
    flow: &MonitoringFlow,
    topo: &Topology,
    model: &DelayModel,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ProbeError> {
    let mut total = 0.0;
    for &l in &flow.path {
        let link = topo.link(l).ok_or_else(|| ProbeError::UnknownLink {
            flow: flow.id,
            link: format!("{}->{}", l.from, l.to),
        })?;
        let base = link
            .true_delay_ms
            .ok_or_else(|| ProbeError::MissingDelay(topo.link_label(l)))?;
        let z: f64 = rng.sample(StandardNormal);
        total += (base + model.jitter_sigma_ms * z).max(0.0);
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok((total + model.noise_sigma_ms * z).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub seq: usize,
    pub flow_id: usize,
    pub repeat: usize,
    pub eed_ms: f64,
}

/// Campaign row as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub flow_id: usize,
    pub tos: u8,
    pub source: String,
    pub destination: String,
    pub eed_ms: f64,
    pub repeats: usize,
}

/// Aggregated end-to-end delays, one per plan flow in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub rows: Vec<CampaignRow>,
    pub probes: Vec<ProbeRecord>,
}

impl Campaign {
    pub fn eed(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eed_ms).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProbeError> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(["flow_id", "tos", "source", "destination", "eed_ms", "repeats"])?;
        }
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ProbeError> {
        let mut rows: Vec<CampaignRow> = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<_, _>>()?;
        rows.sort_by_key(|r| r.flow_id);
        Ok(Self {
            rows,
            probes: Vec::new(),
        })
    }
}

/// Measures every plan flow `repeats` times and aggregates per flow.
pub fn run_campaign(
    plan: &FlowPlan,
    topo: &Topology,
    model: &DelayModel,
    repeats: usize,
) -> Result<Campaign, ProbeError> {
    model.validate()?;
    if repeats == 0 {
        return Err(ProbeError::Config("repeats must be >= 1".into()));
    }
    let mut rng = model.rng();
    let mut flows: Vec<&MonitoringFlow> = plan.flows().iter().collect();
    flows.sort_by_key(|f| f.id);
    let mut rows = Vec::with_capacity(flows.len());
    let mut probes = Vec::with_capacity(flows.len() * repeats);
    let mut samples = Vec::with_capacity(repeats);
    for f in flows {
        samples.clear();
        for repeat in 0..repeats {
            let eed_ms = measure_flow(f, topo, model, &mut rng)?;
            samples.push(eed_ms);
            probes.push(ProbeRecord {
                seq: probes.len(),
                flow_id: f.id,
                repeat,
                eed_ms,
            });
        }
        rows.push(CampaignRow {
            flow_id: f.id,
            tos: f.tos,
            source: topo.label(f.source).to_string(),
            destination: topo.label(f.destination).to_string(),
            eed_ms: model.aggregator.apply(&samples),
            repeats,
        });
    }
    Ok(Campaign { rows, probes })
}
