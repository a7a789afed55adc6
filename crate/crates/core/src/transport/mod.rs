//! End-host routing schemes that plug into the simulator: Spider's windowed
//! multipath transport, waterfilling, shortest path, landmark routing, an
//! LND-style retrying sender and a price-probing rate controller.

mod baselines;
mod price_probe;
mod spider;
mod waterfilling;

pub use baselines::{landmark_partition, landmark_route, select_landmarks, Landmark, Lnd, ShortestPath};
pub use price_probe::{price_probe_step, PriceProbe, PriceProbeParams};
pub use spider::{spider_window_update, Spider, SpiderParams, WindowSet};
pub use waterfilling::{waterfilling_select, Waterfilling};

use crate::graph::{NodeId, PathKind, Topology};
use crate::sim::{tokens, Amount, Route, Scheme};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::rc::Rc;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Spider,
    Waterfilling,
    Shortest,
    Landmark,
    Lnd,
    PriceProbe,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::Spider,
        SchemeKind::Waterfilling,
        SchemeKind::Shortest,
        SchemeKind::Landmark,
        SchemeKind::Lnd,
        SchemeKind::PriceProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Spider => "spider",
            SchemeKind::Waterfilling => "waterfilling",
            SchemeKind::Shortest => "shortest",
            SchemeKind::Landmark => "landmark",
            SchemeKind::Lnd => "lnd",
            SchemeKind::PriceProbe => "priceprobe",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters shared by the schemes; each scheme reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeParams {
    /// Largest transaction-unit, tokens.
    pub mtu: f64,
    pub k: usize,
    pub path_kind: PathKind,
    pub alpha: f64,
    pub beta: f64,
    /// Initial window per path, tokens.
    pub initial_window: f64,
    /// Blacklist duration after a channel failure, seconds.
    pub blacklist: f64,
    pub price_probe: PriceProbeParams,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            mtu: 1.0,
            k: 4,
            path_kind: PathKind::EdgeDisjointWidest,
            alpha: 10.0,
            beta: 0.1,
            initial_window: 10.0,
            blacklist: 5.0,
            price_probe: PriceProbeParams::default(),
        }
    }
}

impl SchemeParams {
    pub fn mtu_amount(&self) -> Amount {
        tokens(self.mtu)
    }
}

pub fn build_scheme(kind: SchemeKind, params: &SchemeParams, topo: &Topology) -> Box<dyn Scheme> {
    match kind {
        SchemeKind::Spider => Box::new(Spider::new(SpiderParams::from(params), topo.clone())),
        SchemeKind::Waterfilling => {
            Box::new(Waterfilling::new(params.mtu_amount(), params.k, params.path_kind, topo.clone()))
        }
        SchemeKind::Shortest => Box::new(ShortestPath::new(topo.clone())),
        SchemeKind::Landmark => Box::new(Landmark::new(params.k, topo.clone())),
        SchemeKind::Lnd => Box::new(Lnd::new(crate::sim::secs(params.blacklist))),
        SchemeKind::PriceProbe => Box::new(PriceProbe::new(
            params.mtu_amount(),
            params.k,
            params.path_kind,
            params.price_probe.clone(),
            topo.clone(),
        )),
    }
}

/// Lazily computed candidate routes per (source, destination).
pub(crate) struct RouteCache {
    kind: PathKind,
    k: usize,
    topo: Topology,
    map: HashMap<(NodeId, NodeId), Rc<Vec<Rc<Route>>>>,
}

impl RouteCache {
    pub(crate) fn new(kind: PathKind, k: usize, topo: Topology) -> Self {
        RouteCache { kind, k, topo, map: HashMap::new() }
    }

    pub(crate) fn get(&mut self, src: NodeId, dst: NodeId) -> Rc<Vec<Rc<Route>>> {
        let (kind, k, topo) = (self.kind, self.k, &self.topo);
        self.map
            .entry((src, dst))
            .or_insert_with(|| {
                let paths = kind.compute(topo, src, dst, k).unwrap_or_default();
                Rc::new(paths.iter().filter_map(|p| Route::new(topo, p).ok()).map(Rc::new).collect())
            })
            .clone()
    }
}

pub(crate) fn rtt(core: &crate::sim::Core, route: &Route) -> u64 {
    (2 * core.route_delay(route)).max(1)
}
