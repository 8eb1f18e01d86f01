//! Declarative system descriptions: components, regions, queues, channels,
//! cost model and workload, loadable from TOML (unknown keys rejected) or
//! assembled by the builder functions, then validated and turned into a
//! runnable [`RuntimeInstance`].
//!
//! The file schema mirrors the sections a static system description needs:
//!
//! ```toml
//! [sim]           # cores, seed, duration, warmup, sampling
//! [costs]         # cost model (defaults apply per field)
//! [nic]           # optional Ethernet device
//! [disk]          # optional block device
//! [[regions]]     # data regions with slot geometry and sub-regions
//! [[queues]]      # queues with declared producer/consumer components
//! [[channels]]    # signalling channels (components or @nic/@disk/@timer)
//! [[components]]  # behaviour instances with placement and priority
//! [workload]      # offered load programs / storage mix
//! [[actions]]     # scripted migrations and restarts
//! ```

use crate::net::{
    self, ArpResponder, BroadcastScheme, Copier, EchoClient, Mac, MacTable, NetDriver, NicConfig,
    NicModel, NullForwarder, Probe, QueueAudit, RateProgram, RxMux, RxMuxClient, TxMux,
    TxMuxClient, TxPolicySpec,
};
use crate::swap::{BandwidthMonitor, Swapper};
use crate::queue::{BufferDescriptor, QueueId, ReqQueueId, RespQueueId, SpscQueue};
use crate::region::{Access, DataRegion, RegionId, RegionView, SubRegion, ViewId};
use crate::rng::Rng;
use crate::runtime::{
    ActionKind, ChannelId, CompClass, CompId, Component, CostModel, Endpoint, RuntimeInstance,
    ScriptedAction, World, DEFAULT_SWAP_COST_NS,
};
use crate::storage::{BlkClient, BlkDriver, BlkMux, BlkMuxClient, DiskConfig, DiskModel, Partition};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

const MS: u64 = 1_000_000;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub cores: usize,
    pub seed: u64,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    /// 0 disables periodic sampling.
    pub sample_window_ms: u64,
    /// Run the buffer-conservation audit at every sample boundary.
    pub audit_each_sample: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 1,
            seed: 1,
            duration_ms: 1000,
            warmup_ms: 100,
            sample_window_ms: 0,
            audit_each_sample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    pub slot_size: u32,
    pub slot_count: u32,
    /// Per-client sub-region sizes in slots, allocated contiguously.
    #[serde(default)]
    pub subregions: Vec<u32>,
    /// Participates in the buffer-conservation audit.
    #[serde(default = "default_true")]
    pub pooled: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueKind {
    Desc,
    BlockRequest,
    BlockResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSpec {
    pub name: String,
    pub capacity: u64,
    #[serde(default = "default_queue_kind")]
    pub kind: QueueKind,
    pub producer: String,
    pub consumer: String,
    /// Region whose slots the descriptors address (audit + prefill).
    #[serde(default)]
    pub region: Option<String>,
    /// Offsets are relative to this sub-region of `region`.
    #[serde(default)]
    pub subregion: Option<usize>,
    /// Fill with every slot of the window at build time (free pools).
    #[serde(default)]
    pub prefill: bool,
    /// Carries queued transmit work (in-flight packet accounting).
    #[serde(default)]
    pub tx_work: bool,
    /// Carries received frames awaiting delivery.
    #[serde(default)]
    pub rx_work: bool,
}

fn default_queue_kind() -> QueueKind {
    QueueKind::Desc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    /// Component name, or `@nic` / `@disk` / `@timer`.
    pub a: String,
    pub b: String,
}

// No deny_unknown_fields here: it cannot coexist with the flattened kind
// (serde limitation); stray keys still land in the flatten and are
// rejected by the variant's own deny_unknown_fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub core: usize,
    pub priority: i32,
    #[serde(flatten)]
    pub kind: CompKindSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompKindSpec {
    NetDriver {
        tx_avail: String,
        tx_free: String,
        rx_avail: String,
        rx_free: String,
        irq_ch: String,
        tx_mux_ch: String,
        rx_mux_ch: String,
    },
    TxMux {
        region: String,
        drv_tx_avail: String,
        drv_tx_free: String,
        drv_ch: String,
        clients: Vec<TxClientSpec>,
        policy: TxPolicySpec,
        #[serde(default)]
        monitor: Option<MonitorSpec>,
        #[serde(default)]
        swapper_ch: Option<String>,
        #[serde(default)]
        timer_ch: Option<String>,
    },
    RxMux {
        region: String,
        drv_rx_avail: String,
        drv_rx_free: String,
        drv_ch: String,
        clients: Vec<RxClientSpec>,
        broadcast: BroadcastScheme,
        #[serde(default)]
        arp_client: Option<usize>,
    },
    Copier {
        src_region: String,
        dst_region: String,
        up_rx_avail: String,
        up_rx_free: String,
        up_ch: String,
        down_rx_avail: String,
        down_rx_free: String,
        down_ch: String,
    },
    NullForwarder {
        up_rx_avail: String,
        up_rx_free: String,
        up_ch: String,
        down_rx_avail: String,
        down_rx_free: String,
        down_ch: String,
    },
    EchoClient {
        index: usize,
        rx_region: String,
        tx_region: String,
        tx_subregion: usize,
        rx_avail: String,
        rx_free: String,
        rx_ch: String,
        tx_avail: String,
        tx_free: String,
        tx_ch: String,
    },
    ArpResponder {
        index: usize,
        rx_region: String,
        tx_region: String,
        tx_subregion: usize,
        rx_avail: String,
        rx_free: String,
        rx_ch: String,
        tx_avail: String,
        tx_free: String,
        tx_ch: String,
    },
    BlkDriver {
        requests: String,
        responses: String,
        irq_ch: String,
        mux_ch: String,
    },
    BlkMux {
        drv_requests: String,
        drv_responses: String,
        drv_ch: String,
        clients: Vec<BlkClientQueues>,
        partitions: Vec<Partition>,
    },
    BlkClient {
        index: usize,
        data_region: String,
        requests: String,
        responses: String,
        mux_ch: String,
        timer_ch: String,
        queue_depth: u32,
        total_requests: u64,
        barrier_every: u64,
        blocks_per_request: u32,
    },
    Swapper {
        trigger_ch: String,
        target: String,
        replacement: TxPolicySpec,
        #[serde(default = "default_swap_cost_us")]
        swap_cost_us: u64,
    },
}

fn default_swap_cost_us() -> u64 {
    DEFAULT_SWAP_COST_NS / 1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxClientSpec {
    pub tx_avail: String,
    pub tx_free: String,
    pub ch: String,
    pub subregion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxClientSpec {
    pub mac: String,
    pub rx_avail: String,
    pub rx_free: String,
    pub ch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlkClientQueues {
    pub requests: String,
    pub responses: String,
    pub ch: String,
    pub data_region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSpec {
    pub window_ms: u64,
    pub watched_client: usize,
    pub threshold_mbps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum WorkloadSpec {
    #[default]
    Idle,
    Echo {
        frame_bytes: u32,
        programs: Vec<ClientLoad>,
        #[serde(default)]
        jitter_ppm: u32,
        #[serde(default)]
        arp_probes: Vec<ArpProbeSpec>,
        #[serde(default)]
        broadcasts: Vec<BroadcastProbeSpec>,
        #[serde(default)]
        unknown_unicasts: Vec<UnknownUnicastSpec>,
    },
    Storage,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientLoad {
    pub client: usize,
    pub program: RateProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArpProbeSpec {
    pub at_ms: u64,
    pub target_client: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BroadcastProbeSpec {
    pub at_ms: u64,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnknownUnicastSpec {
    pub at_ms: u64,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: ActionSpecKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSpecKind {
    Migrate { comp: String, core: usize },
    Restart { comp: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub sim: SimConfig,
    pub costs: CostModel,
    pub nic: Option<NicConfig>,
    pub disk: Option<DiskConfig>,
    pub regions: Vec<RegionSpec>,
    pub queues: Vec<QueueSpec>,
    pub channels: Vec<ChannelSpec>,
    pub components: Vec<ComponentSpec>,
    pub workload: WorkloadSpec,
    pub actions: Vec<ActionSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, BuildError> {
        toml::from_str(text).map_err(|e| BuildError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialises")
    }
}

// ---------------------------------------------------------------------------
// Validation and build
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("unknown region {0}")]
    UnknownRegion(String),
    #[error("unknown queue {0}")]
    UnknownQueue(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("unknown component {0}")]
    UnknownComponent(String),
    #[error("queue {queue}: component {comp} is not its declared {role} ({declared} is)")]
    QueueRoleMismatch { queue: String, comp: String, role: &'static str, declared: String },
    #[error("queue {queue} has kind {actual:?}, expected {expected:?}")]
    QueueKindMismatch { queue: String, expected: QueueKind, actual: QueueKind },
    #[error("queue {0}: {1}")]
    QueueConfig(String, crate::queue::QueueConfigError),
    #[error("region {0}: {1}")]
    RegionConfig(String, crate::region::RegionConfigError),
    #[error("channel {name} endpoint {endpoint} does not exist")]
    BadChannelEndpoint { name: String, endpoint: String },
    #[error("channel {0} is not connected to component {1}")]
    ChannelNotBound(String, String),
    #[error("component {comp}: sub-region {index} missing in region {region}")]
    MissingSubregion { comp: String, region: String, index: usize },
    #[error("scenario needs a [nic] section for network components")]
    MissingNic,
    #[error("scenario needs a [disk] section for storage components")]
    MissingDisk,
    #[error("invalid core {core} for component {comp} ({cores} cores configured)")]
    BadCore { comp: String, core: usize, cores: usize },
    #[error("duplicate client MAC {0}")]
    DuplicateMac(String),
    #[error("bad MAC address {0}")]
    BadMac(String),
    #[error("{0}")]
    Other(String),
}

/// Region geometry needed during component construction (window lookups),
/// cheap to keep around for restarts.
#[derive(Debug, Clone)]
struct RegionGeometry {
    subregions: Vec<SubRegion>,
    size: u64,
    slot_count: u32,
    slot_size: u32,
}

impl RegionGeometry {
    fn of(spec: &RegionSpec) -> Self {
        let mut subregions = Vec::with_capacity(spec.subregions.len());
        let mut next = 0u64;
        for &slots in &spec.subregions {
            let len = slots as u64 * spec.slot_size as u64;
            subregions.push(SubRegion { base: next, len });
            next += len;
        }
        RegionGeometry {
            subregions,
            size: spec.slot_size as u64 * spec.slot_count as u64,
            slot_count: spec.slot_count,
            slot_size: spec.slot_size,
        }
    }

    fn subregion(&self, i: usize) -> Option<SubRegion> {
        self.subregions.get(i).copied()
    }
}

/// View allocation: live during the first build, lookup-only on restarts
/// (restarting a component never creates new mappings).
enum Views<'a> {
    Alloc(&'a mut Vec<RegionView>),
    Find(&'a [RegionView]),
}

impl Views<'_> {
    fn ensure(
        &mut self,
        region: RegionId,
        base: u64,
        len: u64,
        access: Access,
        max_read_len: Option<u32>,
    ) -> ViewId {
        let matches = |v: &RegionView| {
            v.region == region
                && v.base == base
                && v.len == len
                && v.access == access
                && v.max_read_len == max_read_len
        };
        match self {
            Views::Alloc(table) => {
                if let Some(v) = table.iter().find(|v| matches(v)) {
                    return v.id;
                }
                let id = ViewId(table.len());
                table.push(RegionView {
                    id,
                    region,
                    base,
                    len,
                    access,
                    max_read_len,
                    reads: 0,
                    writes: 0,
                });
                id
            }
            Views::Find(table) => {
                table.iter().find(|v| matches(v)).map(|v| v.id).expect("view created at build")
            }
        }
    }
}

#[derive(Clone)]
struct Resolver {
    regions: BTreeMap<String, RegionId>,
    queues: BTreeMap<String, (QueueKind, usize)>,
    channels: BTreeMap<String, ChannelId>,
    comps: BTreeMap<String, CompId>,
    /// queue name -> (declared producer, declared consumer)
    queue_specs: BTreeMap<String, (String, String)>,
}

impl Resolver {
    fn region(&self, name: &str) -> Result<RegionId, BuildError> {
        self.regions.get(name).copied().ok_or_else(|| BuildError::UnknownRegion(name.into()))
    }

    /// Resolve a queue while checking the caller really is its declared
    /// producer or consumer; miswired queues are named in the error.
    fn queue_as(
        &self,
        name: &str,
        kind: QueueKind,
        comp: &str,
        producer: bool,
    ) -> Result<usize, BuildError> {
        let (k, idx) =
            self.queues.get(name).copied().ok_or_else(|| BuildError::UnknownQueue(name.into()))?;
        if k != kind {
            return Err(BuildError::QueueKindMismatch {
                queue: name.into(),
                expected: kind,
                actual: k,
            });
        }
        let (p, c) = self.queue_specs.get(name).cloned().unwrap();
        let (declared, role) = if producer { (p, "producer") } else { (c, "consumer") };
        if declared != comp {
            return Err(BuildError::QueueRoleMismatch {
                queue: name.into(),
                comp: comp.into(),
                role,
                declared,
            });
        }
        Ok(idx)
    }

    fn desc_queue(&self, name: &str, comp: &str, producer: bool) -> Result<QueueId, BuildError> {
        self.queue_as(name, QueueKind::Desc, comp, producer).map(QueueId)
    }

    fn req_queue(&self, name: &str, comp: &str, producer: bool) -> Result<ReqQueueId, BuildError> {
        self.queue_as(name, QueueKind::BlockRequest, comp, producer).map(ReqQueueId)
    }

    fn resp_queue(&self, name: &str, comp: &str, producer: bool) -> Result<RespQueueId, BuildError> {
        self.queue_as(name, QueueKind::BlockResponse, comp, producer).map(RespQueueId)
    }

    fn channel_of(
        &self,
        name: &str,
        comp: CompId,
        channels: &[(String, Endpoint, Endpoint)],
    ) -> Result<ChannelId, BuildError> {
        let id = self
            .channels
            .get(name)
            .copied()
            .ok_or_else(|| BuildError::UnknownChannel(name.into()))?;
        let (n, a, b) = &channels[id.0];
        if *a != Endpoint::Comp(comp) && *b != Endpoint::Comp(comp) {
            return Err(BuildError::ChannelNotBound(n.clone(), format!("component #{}", comp.0)));
        }
        Ok(id)
    }
}

/// Validate the wiring and construct a runnable instance: regions and
/// queues allocated (with pool prefills), devices attached, components
/// built, every init run in declaration order.
pub fn build(scenario: &Scenario) -> Result<RuntimeInstance, BuildError> {
    let sim = &scenario.sim;
    let mut world = World::new(Rng::new(sim.seed));
    world.stats.warmup_ns = sim.warmup_ms * MS;
    world.stats.t_end_ns = sim.duration_ms * MS;

    let mut resolver = Resolver {
        regions: BTreeMap::new(),
        queues: BTreeMap::new(),
        channels: BTreeMap::new(),
        comps: BTreeMap::new(),
        queue_specs: BTreeMap::new(),
    };

    // Regions.
    let mut geometry: Vec<RegionGeometry> = Vec::new();
    for (i, spec) in scenario.regions.iter().enumerate() {
        if resolver.regions.insert(spec.name.clone(), RegionId(i)).is_some() {
            return Err(BuildError::DuplicateName(spec.name.clone()));
        }
        let region = DataRegion::new(
            RegionId(i),
            &spec.name,
            spec.slot_size,
            spec.slot_count,
            &spec.subregions,
            spec.pooled,
        )
        .map_err(|e| BuildError::RegionConfig(spec.name.clone(), e))?;
        world.regions.push(region);
        geometry.push(RegionGeometry::of(spec));
    }

    // Component name table first: queues and channels refer to them.
    for (i, c) in scenario.components.iter().enumerate() {
        if resolver.comps.insert(c.name.clone(), CompId(i)).is_some() {
            return Err(BuildError::DuplicateName(c.name.clone()));
        }
        if c.core >= sim.cores {
            return Err(BuildError::BadCore {
                comp: c.name.clone(),
                core: c.core,
                cores: sim.cores,
            });
        }
    }

    // Queues (three typed pools) with audit tags and prefills.
    for spec in &scenario.queues {
        if resolver.queues.contains_key(&spec.name) {
            return Err(BuildError::DuplicateName(spec.name.clone()));
        }
        for endpoint in [&spec.producer, &spec.consumer] {
            if !resolver.comps.contains_key(endpoint) {
                return Err(BuildError::UnknownComponent(endpoint.clone()));
            }
        }
        let audit = match &spec.region {
            Some(rname) => {
                let rid = resolver.region(rname)?;
                let base = match spec.subregion {
                    Some(si) => {
                        geometry[rid.0]
                            .subregion(si)
                            .ok_or_else(|| BuildError::MissingSubregion {
                                comp: spec.name.clone(),
                                region: rname.clone(),
                                index: si,
                            })?
                            .base
                    }
                    None => 0,
                };
                QueueAudit { region: Some(rid), base, is_tx_work: spec.tx_work, is_rx_work: spec.rx_work }
            }
            None => QueueAudit { region: None, base: 0, is_tx_work: spec.tx_work, is_rx_work: spec.rx_work },
        };
        let idx = match spec.kind {
            QueueKind::Desc => {
                let mut q = SpscQueue::<BufferDescriptor>::new(spec.capacity)
                    .map_err(|e| BuildError::QueueConfig(spec.name.clone(), e))?;
                if spec.prefill {
                    let rid = audit.region.ok_or_else(|| {
                        BuildError::Other(format!("queue {} prefill needs a region", spec.name))
                    })?;
                    let geo = &geometry[rid.0];
                    let slots = match spec.subregion {
                        Some(si) => (geo.subregion(si).unwrap().len / geo.slot_size as u64) as u32,
                        None => geo.slot_count,
                    };
                    for s in 0..slots {
                        q.enqueue(BufferDescriptor::new(s as u64 * geo.slot_size as u64, 0))
                            .map_err(|_| {
                                BuildError::Other(format!(
                                    "queue {} too small for its prefill",
                                    spec.name
                                ))
                            })?;
                    }
                }
                let idx = world.queues.len();
                world.queues.push(q);
                world.queue_audit.push(audit);
                idx
            }
            QueueKind::BlockRequest => {
                let q = SpscQueue::new(spec.capacity)
                    .map_err(|e| BuildError::QueueConfig(spec.name.clone(), e))?;
                let idx = world.req_queues.len();
                world.req_queues.push(q);
                idx
            }
            QueueKind::BlockResponse => {
                let q = SpscQueue::new(spec.capacity)
                    .map_err(|e| BuildError::QueueConfig(spec.name.clone(), e))?;
                let idx = world.resp_queues.len();
                world.resp_queues.push(q);
                idx
            }
        };
        resolver.queues.insert(spec.name.clone(), (spec.kind, idx));
        resolver
            .queue_specs
            .insert(spec.name.clone(), (spec.producer.clone(), spec.consumer.clone()));
    }

    // Channels.
    let mut channel_table: Vec<(String, Endpoint, Endpoint)> = Vec::new();
    for spec in &scenario.channels {
        if resolver.channels.contains_key(&spec.name) {
            return Err(BuildError::DuplicateName(spec.name.clone()));
        }
        let resolve_ep = |name: &str| -> Result<Endpoint, BuildError> {
            match name {
                "@nic" => {
                    if scenario.nic.is_none() {
                        return Err(BuildError::MissingNic);
                    }
                    Ok(Endpoint::Nic)
                }
                "@disk" => {
                    if scenario.disk.is_none() {
                        return Err(BuildError::MissingDisk);
                    }
                    Ok(Endpoint::Disk)
                }
                "@timer" => Ok(Endpoint::Timer),
                other => resolver
                    .comps
                    .get(other)
                    .map(|id| Endpoint::Comp(*id))
                    .ok_or_else(|| BuildError::BadChannelEndpoint {
                        name: spec.name.clone(),
                        endpoint: other.to_string(),
                    }),
            }
        };
        let a = resolve_ep(&spec.a)?;
        let b = resolve_ep(&spec.b)?;
        let id = ChannelId(channel_table.len());
        channel_table.push((spec.name.clone(), a, b));
        resolver.channels.insert(spec.name.clone(), id);
    }

    // Client MAC table comes from the Rx mux declaration.
    let mut macs: Vec<Mac> = Vec::new();
    for c in &scenario.components {
        if let CompKindSpec::RxMux { clients, .. } = &c.kind {
            for rc in clients {
                let mac = Mac::parse(&rc.mac).ok_or_else(|| BuildError::BadMac(rc.mac.clone()))?;
                if macs.contains(&mac) {
                    return Err(BuildError::DuplicateMac(rc.mac.clone()));
                }
                macs.push(mac);
            }
        }
    }
    let mac_table = MacTable::new(macs);
    world.stats.per_client = vec![Default::default(); mac_table.len()];

    // Devices.
    if let Some(nic_cfg) = &scenario.nic {
        let rx_rid = resolver.region("rx_data")?;
        let tx_rid = resolver.region("tx_data")?;
        world.nic = Some(NicModel::new(nic_cfg.clone(), rx_rid, tx_rid, mac_table.clone()));
    }
    if let Some(disk_cfg) = &scenario.disk {
        world.disk = Some(DiskModel::new(disk_cfg.clone(), Rng::new(sim.seed).fork(0xD15C)));
    }

    // Components: construct against the world's regions and view table.
    let mut built: Vec<(CompClass, Box<dyn Component>)> = Vec::new();
    for cspec in &scenario.components {
        let id = resolver.comps[&cspec.name];
        let mut views = Views::Alloc(&mut world.views);
        built.push(build_component(
            cspec,
            id,
            &resolver,
            &channel_table,
            &mac_table,
            scenario,
            &geometry,
            &mut views,
        )?);
    }

    let mut rt = RuntimeInstance::assemble(
        world,
        scenario.costs.clone(),
        sim.cores,
        sim.sample_window_ms * MS,
        sim.duration_ms * MS,
        sim.audit_each_sample,
    );
    for (_, a, b) in &channel_table {
        rt.add_channel(*a, *b);
    }
    for (cspec, (class, comp)) in scenario.components.iter().zip(built) {
        rt.add_component(&cspec.name, class, cspec.core, cspec.priority, comp);
    }

    // Restart support: rebuild private state from the stored spec; views
    // are found by identity in the snapshot taken now.
    {
        let specs = scenario.components.clone();
        let snapshot = resolver.clone();
        let channels = channel_table.clone();
        let macs = mac_table.clone();
        let scenario_copy = scenario.clone();
        let geo = geometry.clone();
        let views_snapshot = rt.world.views.clone();
        rt.set_rebuild(Box::new(move |id| {
            let spec = specs.get(id.0)?;
            let mut views = Views::Find(&views_snapshot);
            build_component(
                spec,
                id,
                &snapshot,
                &channels,
                &macs,
                &scenario_copy,
                &geo,
                &mut views,
            )
            .ok()
            .map(|(_, comp)| comp)
        }));
    }

    // Workload.
    let mut actions: Vec<ScriptedAction> = Vec::new();
    match &scenario.workload {
        WorkloadSpec::Idle => {}
        WorkloadSpec::Echo {
            frame_bytes,
            programs,
            jitter_ppm,
            arp_probes,
            broadcasts,
            unknown_unicasts,
        } => {
            let stop = sim.duration_ms * MS;
            let progs: Vec<(usize, RateProgram, u32)> =
                programs.iter().map(|p| (p.client, p.program, *frame_bytes)).collect();
            let rng = Rng::new(sim.seed).fork(0x6E7);
            let nic = rt.world.nic.as_mut().ok_or(BuildError::MissingNic)?;
            nic.set_workload(progs, stop, *jitter_ppm, rng);
            for p in arp_probes {
                nic.add_probe(p.at_ms * MS, Probe::ArpRequest { target_client: p.target_client });
            }
            for b in broadcasts {
                nic.add_probe(b.at_ms * MS, Probe::Broadcast { len: b.len });
            }
            for u in unknown_unicasts {
                nic.add_probe(u.at_ms * MS, Probe::UnknownUnicast { len: u.len });
            }
        }
        WorkloadSpec::Storage => {
            // Kick every storage client once; they self-sustain afterwards.
            for c in &scenario.components {
                if let CompKindSpec::BlkClient { timer_ch, .. } = &c.kind {
                    let comp = resolver.comps[&c.name];
                    let ch = resolver.channels[timer_ch];
                    actions.push(ScriptedAction {
                        at_ns: 0,
                        kind: ActionKind::TimerDeliver { comp, ch },
                    });
                }
            }
        }
    }
    for a in &scenario.actions {
        let comp_id = |name: &String| {
            resolver
                .comps
                .get(name)
                .copied()
                .ok_or_else(|| BuildError::UnknownComponent(name.clone()))
        };
        let kind = match &a.kind {
            ActionSpecKind::Migrate { comp, core } => {
                ActionKind::Migrate { comp: comp_id(comp)?, core: *core }
            }
            ActionSpecKind::Restart { comp } => ActionKind::Restart { comp: comp_id(comp)? },
        };
        actions.push(ScriptedAction { at_ns: a.at_ms * MS, kind });
    }
    rt.set_actions(actions);

    rt.start();
    Ok(rt)
}

#[allow(clippy::too_many_arguments)]
fn build_component(
    cspec: &ComponentSpec,
    id: CompId,
    r: &Resolver,
    channels: &[(String, Endpoint, Endpoint)],
    macs: &MacTable,
    scenario: &Scenario,
    geometry: &[RegionGeometry],
    views: &mut Views<'_>,
) -> Result<(CompClass, Box<dyn Component>), BuildError> {
    let name = &cspec.name;
    let ch = |cname: &str| r.channel_of(cname, id, channels);
    Ok(match &cspec.kind {
        CompKindSpec::NetDriver {
            tx_avail,
            tx_free,
            rx_avail,
            rx_free,
            irq_ch,
            tx_mux_ch,
            rx_mux_ch,
        } => (
            CompClass::NetDriver,
            Box::new(NetDriver {
                tx_avail: r.desc_queue(tx_avail, name, false)?,
                tx_free: r.desc_queue(tx_free, name, true)?,
                rx_avail: r.desc_queue(rx_avail, name, true)?,
                rx_free: r.desc_queue(rx_free, name, false)?,
                irq_ch: ch(irq_ch)?,
                tx_mux_ch: ch(tx_mux_ch)?,
                rx_mux_ch: ch(rx_mux_ch)?,
            }),
        ),
        CompKindSpec::TxMux {
            region,
            drv_tx_avail,
            drv_tx_free,
            drv_ch,
            clients,
            policy,
            monitor,
            swapper_ch,
            timer_ch,
        } => {
            let rid = r.region(region)?;
            let mut tx_clients = Vec::new();
            for c in clients {
                let window = geometry[rid.0].subregion(c.subregion).ok_or_else(|| {
                    BuildError::MissingSubregion {
                        comp: name.clone(),
                        region: region.clone(),
                        index: c.subregion,
                    }
                })?;
                tx_clients.push(TxMuxClient {
                    tx_avail: r.desc_queue(&c.tx_avail, name, false)?,
                    tx_free: r.desc_queue(&c.tx_free, name, true)?,
                    ch: ch(&c.ch)?,
                    window,
                });
            }
            let mon = monitor.as_ref().map(|m| {
                BandwidthMonitor::new(
                    m.window_ms * MS,
                    m.watched_client,
                    m.threshold_mbps,
                    clients.len(),
                )
            });
            let swap_ch = match swapper_ch {
                Some(s) => Some(ch(s)?),
                None => None,
            };
            let timer = match timer_ch {
                Some(s) => Some(ch(s)?),
                None => None,
            };
            (
                CompClass::TxMux,
                Box::new(TxMux {
                    clients: tx_clients,
                    drv_tx_avail: r.desc_queue(drv_tx_avail, name, true)?,
                    drv_tx_free: r.desc_queue(drv_tx_free, name, false)?,
                    drv_ch: ch(drv_ch)?,
                    tx_region: rid,
                    policy: policy.instantiate(clients.len()),
                    monitor: mon,
                    swapper_ch: swap_ch,
                    timer_ch: timer,
                }),
            )
        }
        CompKindSpec::RxMux {
            region,
            drv_rx_avail,
            drv_rx_free,
            drv_ch,
            clients,
            broadcast,
            arp_client,
        } => {
            let rid = r.region(region)?;
            let header_view = views.ensure(
                rid,
                0,
                geometry[rid.0].size,
                Access::ReadOnly,
                Some(net::HEADER_BYTES as u32),
            );
            let mut rx_clients = Vec::new();
            for c in clients {
                rx_clients.push(RxMuxClient {
                    rx_avail: r.desc_queue(&c.rx_avail, name, true)?,
                    rx_free: r.desc_queue(&c.rx_free, name, false)?,
                    ch: ch(&c.ch)?,
                });
            }
            (
                CompClass::RxMux,
                Box::new(RxMux {
                    drv_rx_avail: r.desc_queue(drv_rx_avail, name, false)?,
                    drv_rx_free: r.desc_queue(drv_rx_free, name, true)?,
                    drv_ch: ch(drv_ch)?,
                    clients: rx_clients,
                    broadcast_scheme: *broadcast,
                    arp_client: *arp_client,
                    rx_region: rid,
                    header_view,
                    macs: macs.clone(),
                }),
            )
        }
        CompKindSpec::Copier {
            src_region,
            dst_region,
            up_rx_avail,
            up_rx_free,
            up_ch,
            down_rx_avail,
            down_rx_free,
            down_ch,
        } => {
            let src = r.region(src_region)?;
            let dst = r.region(dst_region)?;
            let src_view = views.ensure(src, 0, geometry[src.0].size, Access::ReadOnly, None);
            let dst_view = views.ensure(dst, 0, geometry[dst.0].size, Access::ReadWrite, None);
            (
                CompClass::Copier,
                Box::new(Copier {
                    up_rx_avail: r.desc_queue(up_rx_avail, name, false)?,
                    up_rx_free: r.desc_queue(up_rx_free, name, true)?,
                    up_ch: ch(up_ch)?,
                    down_rx_avail: r.desc_queue(down_rx_avail, name, true)?,
                    down_rx_free: r.desc_queue(down_rx_free, name, false)?,
                    down_ch: ch(down_ch)?,
                    src_view,
                    dst_view,
                    dst_region: dst,
                }),
            )
        }
        CompKindSpec::NullForwarder {
            up_rx_avail,
            up_rx_free,
            up_ch,
            down_rx_avail,
            down_rx_free,
            down_ch,
        } => (
            CompClass::Forwarder,
            Box::new(NullForwarder {
                up_rx_avail: r.desc_queue(up_rx_avail, name, false)?,
                up_rx_free: r.desc_queue(up_rx_free, name, true)?,
                up_ch: ch(up_ch)?,
                down_rx_avail: r.desc_queue(down_rx_avail, name, true)?,
                down_rx_free: r.desc_queue(down_rx_free, name, false)?,
                down_ch: ch(down_ch)?,
            }),
        ),
        CompKindSpec::EchoClient {
            index,
            rx_region,
            tx_region,
            tx_subregion,
            rx_avail,
            rx_free,
            rx_ch,
            tx_avail,
            tx_free,
            tx_ch,
        } => {
            let rx_rid = r.region(rx_region)?;
            let tx_rid = r.region(tx_region)?;
            let window = geometry[tx_rid.0].subregion(*tx_subregion).ok_or_else(|| {
                BuildError::MissingSubregion {
                    comp: name.clone(),
                    region: tx_region.clone(),
                    index: *tx_subregion,
                }
            })?;
            let rx_view =
                views.ensure(rx_rid, 0, geometry[rx_rid.0].size, Access::ReadOnly, None);
            let tx_view = views.ensure(tx_rid, window.base, window.len, Access::ReadWrite, None);
            (
                CompClass::Client,
                Box::new(EchoClient {
                    index: *index,
                    rx_avail: r.desc_queue(rx_avail, name, false)?,
                    rx_free: r.desc_queue(rx_free, name, true)?,
                    rx_ch: ch(rx_ch)?,
                    tx_avail: r.desc_queue(tx_avail, name, true)?,
                    tx_free: r.desc_queue(tx_free, name, false)?,
                    tx_ch: ch(tx_ch)?,
                    rx_view,
                    tx_view,
                }),
            )
        }
        CompKindSpec::ArpResponder {
            index: _,
            rx_region,
            tx_region,
            tx_subregion,
            rx_avail,
            rx_free,
            rx_ch,
            tx_avail,
            tx_free,
            tx_ch,
        } => {
            let rx_rid = r.region(rx_region)?;
            let tx_rid = r.region(tx_region)?;
            let window = geometry[tx_rid.0].subregion(*tx_subregion).ok_or_else(|| {
                BuildError::MissingSubregion {
                    comp: name.clone(),
                    region: tx_region.clone(),
                    index: *tx_subregion,
                }
            })?;
            let rx_view =
                views.ensure(rx_rid, 0, geometry[rx_rid.0].size, Access::ReadOnly, None);
            let tx_view = views.ensure(tx_rid, window.base, window.len, Access::ReadWrite, None);
            (
                CompClass::ArpResponder,
                Box::new(ArpResponder {
                    rx_avail: r.desc_queue(rx_avail, name, false)?,
                    rx_free: r.desc_queue(rx_free, name, true)?,
                    rx_ch: ch(rx_ch)?,
                    tx_avail: r.desc_queue(tx_avail, name, true)?,
                    tx_free: r.desc_queue(tx_free, name, false)?,
                    tx_ch: ch(tx_ch)?,
                    rx_view,
                    tx_view,
                    macs: macs.clone(),
                }),
            )
        }
        CompKindSpec::BlkDriver { requests, responses, irq_ch, mux_ch } => {
            let _ = ch(irq_ch)?;
            let windows = blk_client_windows(scenario, r)?;
            (
                CompClass::BlkDriver,
                Box::new(BlkDriver {
                    requests: r.req_queue(requests, name, false)?,
                    responses: r.resp_queue(responses, name, true)?,
                    mux_ch: ch(mux_ch)?,
                    client_windows: windows,
                }),
            )
        }
        CompKindSpec::BlkMux { drv_requests, drv_responses, drv_ch, clients, partitions } => {
            let disk = scenario.disk.as_ref().ok_or(BuildError::MissingDisk)?;
            let mut mux_clients = Vec::new();
            let mut windows = Vec::new();
            for c in clients {
                let rid = r.region(&c.data_region)?;
                mux_clients.push(BlkMuxClient {
                    requests: r.req_queue(&c.requests, name, false)?,
                    responses: r.resp_queue(&c.responses, name, true)?,
                    ch: ch(&c.ch)?,
                });
                windows.push((rid, SubRegion { base: 0, len: geometry[rid.0].size }));
            }
            for (i, p) in partitions.iter().enumerate() {
                if p.start_lba + p.length_blocks > disk.capacity_blocks {
                    return Err(BuildError::Other(format!("partition {i} exceeds device capacity")));
                }
                for q in &partitions[i + 1..] {
                    let disjoint = p.start_lba + p.length_blocks <= q.start_lba
                        || q.start_lba + q.length_blocks <= p.start_lba;
                    if !disjoint {
                        return Err(BuildError::Other(format!("partition {i} overlaps another")));
                    }
                }
            }
            (
                CompClass::BlkMux,
                Box::new(BlkMux {
                    clients: mux_clients,
                    drv_requests: r.req_queue(drv_requests, name, true)?,
                    drv_responses: r.resp_queue(drv_responses, name, false)?,
                    drv_ch: ch(drv_ch)?,
                    partitions: partitions.clone(),
                    block_size: disk.block_size,
                    client_windows: windows,
                }),
            )
        }
        CompKindSpec::BlkClient {
            index,
            data_region,
            requests,
            responses,
            mux_ch,
            timer_ch,
            queue_depth,
            total_requests,
            barrier_every,
            blocks_per_request,
        } => {
            let disk = scenario.disk.as_ref().ok_or(BuildError::MissingDisk)?;
            let rid = r.region(data_region)?;
            let geo = &geometry[rid.0];
            let view = views.ensure(rid, 0, geo.size, Access::ReadWrite, None);
            let partition_len = partition_of(scenario, *index)?.length_blocks;
            (
                CompClass::BlkClient,
                Box::new(BlkClient::new(
                    *index,
                    r.req_queue(requests, name, true)?,
                    r.resp_queue(responses, name, false)?,
                    ch(mux_ch)?,
                    ch(timer_ch)?,
                    view,
                    partition_len,
                    disk.block_size,
                    *queue_depth,
                    *total_requests,
                    *barrier_every,
                    Rng::new(scenario.sim.seed).fork(0xB10C + *index as u64),
                    geo.slot_count,
                    geo.slot_size,
                    *blocks_per_request,
                )),
            )
        }
        CompKindSpec::Swapper { trigger_ch, target, replacement, swap_cost_us } => {
            let target_id = r
                .comps
                .get(target)
                .copied()
                .ok_or_else(|| BuildError::UnknownComponent(target.clone()))?;
            let clients = scenario
                .components
                .iter()
                .find_map(|c| match &c.kind {
                    CompKindSpec::TxMux { clients, .. } if c.name == *target => Some(clients.len()),
                    _ => None,
                })
                .ok_or_else(|| BuildError::Other(format!("swap target {target} is not a tx mux")))?;
            (
                CompClass::Swapper,
                Box::new(Swapper::new(
                    ch(trigger_ch)?,
                    target_id,
                    replacement.clone(),
                    clients,
                    swap_cost_us * 1000,
                )),
            )
        }
    })
}

fn blk_client_windows(
    scenario: &Scenario,
    r: &Resolver,
) -> Result<Vec<(RegionId, u64)>, BuildError> {
    let mut windows = Vec::new();
    for c in &scenario.components {
        if let CompKindSpec::BlkMux { clients, .. } = &c.kind {
            for cq in clients {
                windows.push((r.region(&cq.data_region)?, 0));
            }
        }
    }
    if windows.is_empty() {
        windows.push((RegionId(0), 0));
    }
    Ok(windows)
}

fn partition_of(scenario: &Scenario, index: usize) -> Result<Partition, BuildError> {
    for c in &scenario.components {
        if let CompKindSpec::BlkMux { partitions, .. } = &c.kind {
            return partitions
                .get(index)
                .copied()
                .ok_or_else(|| BuildError::Other(format!("no partition for client {index}")));
        }
    }
    Err(BuildError::Other("no block mux declared".into()))
}

// ---------------------------------------------------------------------------
// Builders for the standard scenarios
// ---------------------------------------------------------------------------

/// Receive-path layout between the Rx mux and each client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxPath {
    /// Clients read the shared receive region directly.
    Direct,
    /// A copier isolates each client's input in its own region.
    Copier,
    /// Copier plus a pass-through forwarder (extra-hop experiments).
    CopierAndNull,
}

#[derive(Debug, Clone)]
pub struct EchoOptions {
    pub clients: usize,
    pub rx_path: RxPath,
    pub policy: TxPolicySpec,
    /// Offered milli-Mb/s per client (index-aligned; zero entries idle).
    pub rates_mbps_milli: Vec<u64>,
    pub frame_bytes: u32,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    pub seed: u64,
    /// Spread the pipeline over four cores instead of one.
    pub multicore: bool,
    pub sample_window_ms: u64,
    pub audit_each_sample: bool,
    pub monitor: Option<MonitorSpec>,
    pub swapper: Option<TxPolicySpec>,
    pub jitter_ppm: u32,
    pub broadcast: BroadcastScheme,
    /// Appends an ARP responder as the last client when set.
    pub arp_responder: bool,
}

impl Default for EchoOptions {
    fn default() -> Self {
        EchoOptions {
            clients: 1,
            rx_path: RxPath::Copier,
            policy: TxPolicySpec::RoundRobin,
            rates_mbps_milli: vec![1_000_000],
            frame_bytes: 1518,
            duration_ms: 500,
            warmup_ms: 100,
            seed: 1,
            multicore: false,
            sample_window_ms: 0,
            audit_each_sample: false,
            monitor: None,
            swapper: None,
            jitter_ppm: 0,
            broadcast: BroadcastScheme::Refcount,
            arp_responder: false,
        }
    }
}

const RX_POOL_SLOTS: u32 = 512;
const TX_SLOTS_PER_CLIENT: u32 = 512;
const CLIENT_RX_SLOTS: u32 = 512;
const SLOT_SIZE: u32 = 2048;
/// The transmit policy decision point must sit close to the wire: a deep
/// committed FIFO between mux and driver would hold one client's buffers
/// hostage behind another's and defeat the policy.
const DRV_TX_QUEUE_CAP: u64 = 256;
const DRV_QUEUE_CAP: u64 = 1024;
const CLIENT_Q_CAP: u64 = 1024;

/// Build the standard echo scenario: driver, Tx/Rx muxes, per-client
/// receive path (direct, copier, or copier+forwarder) and echo clients.
pub fn echo_scenario(opts: &EchoOptions) -> Scenario {
    let total_clients = opts.clients + usize::from(opts.arp_responder);
    let mut regions = vec![
        RegionSpec {
            name: "rx_data".into(),
            slot_size: SLOT_SIZE,
            slot_count: RX_POOL_SLOTS,
            subregions: vec![],
            pooled: true,
        },
        RegionSpec {
            name: "tx_data".into(),
            slot_size: SLOT_SIZE,
            slot_count: TX_SLOTS_PER_CLIENT * total_clients as u32,
            subregions: vec![TX_SLOTS_PER_CLIENT; total_clients],
            pooled: true,
        },
    ];
    let mut queues = vec![
        QueueSpec {
            name: "drv_tx_avail".into(),
            capacity: DRV_TX_QUEUE_CAP,
            kind: QueueKind::Desc,
            producer: "tx_mux".into(),
            consumer: "driver".into(),
            region: Some("tx_data".into()),
            subregion: None,
            prefill: false,
            tx_work: true,
            rx_work: false,
        },
        QueueSpec {
            name: "drv_tx_free".into(),
            capacity: DRV_QUEUE_CAP,
            kind: QueueKind::Desc,
            producer: "driver".into(),
            consumer: "tx_mux".into(),
            region: Some("tx_data".into()),
            subregion: None,
            prefill: false,
            tx_work: false,
            rx_work: false,
        },
        QueueSpec {
            name: "drv_rx_avail".into(),
            capacity: DRV_QUEUE_CAP,
            kind: QueueKind::Desc,
            producer: "driver".into(),
            consumer: "rx_mux".into(),
            region: Some("rx_data".into()),
            subregion: None,
            prefill: false,
            tx_work: false,
            rx_work: true,
        },
        QueueSpec {
            name: "drv_rx_free".into(),
            capacity: DRV_QUEUE_CAP,
            kind: QueueKind::Desc,
            producer: "rx_mux".into(),
            consumer: "driver".into(),
            region: Some("rx_data".into()),
            subregion: None,
            prefill: true,
            tx_work: false,
            rx_work: false,
        },
    ];
    let mut channels = vec![
        ChannelSpec { name: "irq".into(), a: "@nic".into(), b: "driver".into() },
        ChannelSpec { name: "drv_txmux".into(), a: "driver".into(), b: "tx_mux".into() },
        ChannelSpec { name: "drv_rxmux".into(), a: "driver".into(), b: "rx_mux".into() },
        ChannelSpec { name: "txmux_timer".into(), a: "@timer".into(), b: "tx_mux".into() },
    ];

    // Core placement: the driver has the lowest priority on its core, so
    // downstream components drain before it refills; with `multicore` the
    // pipeline spreads over four cores the way the reference setup does.
    let (core_drv, core_rxmux, core_client) = if opts.multicore { (0, 1, 2) } else { (0, 0, 0) };

    let mut components = vec![ComponentSpec {
        name: "driver".into(),
        core: core_drv,
        priority: 10,
        kind: CompKindSpec::NetDriver {
            tx_avail: "drv_tx_avail".into(),
            tx_free: "drv_tx_free".into(),
            rx_avail: "drv_rx_avail".into(),
            rx_free: "drv_rx_free".into(),
            irq_ch: "irq".into(),
            tx_mux_ch: "drv_txmux".into(),
            rx_mux_ch: "drv_rxmux".into(),
        },
    }];

    let mut tx_clients = Vec::new();
    let mut rx_clients = Vec::new();

    for i in 0..total_clients {
        let is_responder = opts.arp_responder && i == total_clients - 1;
        let cname = if is_responder { "arp".to_string() } else { format!("client{i}") };
        let client_core = if opts.multicore { core_client + (i % 2) } else { 0 };

        // Tx side: client-relative queues against its tx sub-region.
        queues.push(QueueSpec {
            name: format!("c{i}_tx_avail"),
            capacity: TX_SLOTS_PER_CLIENT as u64,
            kind: QueueKind::Desc,
            producer: cname.clone(),
            consumer: "tx_mux".into(),
            region: Some("tx_data".into()),
            subregion: Some(i),
            prefill: false,
            tx_work: true,
            rx_work: false,
        });
        queues.push(QueueSpec {
            name: format!("c{i}_tx_free"),
            capacity: TX_SLOTS_PER_CLIENT as u64,
            kind: QueueKind::Desc,
            producer: "tx_mux".into(),
            consumer: cname.clone(),
            region: Some("tx_data".into()),
            subregion: Some(i),
            prefill: true,
            tx_work: false,
            rx_work: false,
        });
        channels.push(ChannelSpec {
            name: format!("c{i}_tx"),
            a: cname.clone(),
            b: "tx_mux".into(),
        });
        tx_clients.push(TxClientSpec {
            tx_avail: format!("c{i}_tx_avail"),
            tx_free: format!("c{i}_tx_free"),
            ch: format!("c{i}_tx"),
            subregion: i,
        });

        // Rx side: direct, through a copier, or copier + forwarder.
        let use_copier = !is_responder && opts.rx_path != RxPath::Direct;
        if use_copier {
            let copier_name = format!("copier{i}");
            let with_null = opts.rx_path == RxPath::CopierAndNull;
            regions.push(RegionSpec {
                name: format!("c{i}_rx_data"),
                slot_size: SLOT_SIZE,
                slot_count: CLIENT_RX_SLOTS,
                subregions: vec![],
                pooled: true,
            });
            queues.push(QueueSpec {
                name: format!("c{i}_up_rx_avail"),
                capacity: CLIENT_Q_CAP,
                kind: QueueKind::Desc,
                producer: "rx_mux".into(),
                consumer: copier_name.clone(),
                region: Some("rx_data".into()),
                subregion: None,
                prefill: false,
                tx_work: false,
                rx_work: true,
            });
            queues.push(QueueSpec {
                name: format!("c{i}_up_rx_free"),
                capacity: CLIENT_Q_CAP,
                kind: QueueKind::Desc,
                producer: copier_name.clone(),
                consumer: "rx_mux".into(),
                region: Some("rx_data".into()),
                subregion: None,
                prefill: false,
                tx_work: false,
                rx_work: false,
            });
            channels.push(ChannelSpec {
                name: format!("c{i}_up"),
                a: "rx_mux".into(),
                b: copier_name.clone(),
            });

            let down_peer = if with_null { format!("null{i}") } else { copier_name.clone() };
            if with_null {
                queues.push(QueueSpec {
                    name: format!("c{i}_mid_rx_avail"),
                    capacity: CLIENT_Q_CAP,
                    kind: QueueKind::Desc,
                    producer: copier_name.clone(),
                    consumer: format!("null{i}"),
                    region: Some(format!("c{i}_rx_data")),
                    subregion: None,
                    prefill: false,
                    tx_work: false,
                    rx_work: true,
                });
                queues.push(QueueSpec {
                    name: format!("c{i}_mid_rx_free"),
                    capacity: CLIENT_Q_CAP,
                    kind: QueueKind::Desc,
                    producer: format!("null{i}"),
                    consumer: copier_name.clone(),
                    region: Some(format!("c{i}_rx_data")),
                    subregion: None,
                    prefill: true,
                    tx_work: false,
                    rx_work: false,
                });
                channels.push(ChannelSpec {
                    name: format!("c{i}_mid"),
                    a: copier_name.clone(),
                    b: format!("null{i}"),
                });
            }

            queues.push(QueueSpec {
                name: format!("c{i}_rx_avail"),
                capacity: CLIENT_Q_CAP,
                kind: QueueKind::Desc,
                producer: down_peer.clone(),
                consumer: cname.clone(),
                region: Some(format!("c{i}_rx_data")),
                subregion: None,
                prefill: false,
                tx_work: false,
                rx_work: true,
            });
            queues.push(QueueSpec {
                name: format!("c{i}_rx_free"),
                capacity: CLIENT_Q_CAP,
                kind: QueueKind::Desc,
                producer: cname.clone(),
                consumer: down_peer.clone(),
                region: Some(format!("c{i}_rx_data")),
                subregion: None,
                prefill: !with_null,
                tx_work: false,
                rx_work: false,
            });
            channels.push(ChannelSpec {
                name: format!("c{i}_down"),
                a: down_peer.clone(),
                b: cname.clone(),
            });

            components.push(ComponentSpec {
                name: copier_name.clone(),
                core: client_core,
                priority: 50,
                kind: CompKindSpec::Copier {
                    src_region: "rx_data".into(),
                    dst_region: format!("c{i}_rx_data"),
                    up_rx_avail: format!("c{i}_up_rx_avail"),
                    up_rx_free: format!("c{i}_up_rx_free"),
                    up_ch: format!("c{i}_up"),
                    down_rx_avail: if with_null {
                        format!("c{i}_mid_rx_avail")
                    } else {
                        format!("c{i}_rx_avail")
                    },
                    down_rx_free: if with_null {
                        format!("c{i}_mid_rx_free")
                    } else {
                        format!("c{i}_rx_free")
                    },
                    down_ch: if with_null { format!("c{i}_mid") } else { format!("c{i}_down") },
                },
            });
            if with_null {
                components.push(ComponentSpec {
                    name: format!("null{i}"),
                    core: client_core,
                    priority: 45,
                    kind: CompKindSpec::NullForwarder {
                        up_rx_avail: format!("c{i}_mid_rx_avail"),
                        up_rx_free: format!("c{i}_mid_rx_free"),
                        up_ch: format!("c{i}_mid"),
                        down_rx_avail: format!("c{i}_rx_avail"),
                        down_rx_free: format!("c{i}_rx_free"),
                        down_ch: format!("c{i}_down"),
                    },
                });
            }
            rx_clients.push(RxClientSpec {
                mac: Mac::client(i).to_string(),
                rx_avail: format!("c{i}_up_rx_avail"),
                rx_free: format!("c{i}_up_rx_free"),
                ch: format!("c{i}_up"),
            });
            components.push(ComponentSpec {
                name: cname.clone(),
                core: client_core,
                priority: 60,
                kind: CompKindSpec::EchoClient {
                    index: i,
                    rx_region: format!("c{i}_rx_data"),
                    tx_region: "tx_data".into(),
                    tx_subregion: i,
                    rx_avail: format!("c{i}_rx_avail"),
                    rx_free: format!("c{i}_rx_free"),
                    rx_ch: format!("c{i}_down"),
                    tx_avail: format!("c{i}_tx_avail"),
                    tx_free: format!("c{i}_tx_free"),
                    tx_ch: format!("c{i}_tx"),
                },
            });
        } else {
            // Direct: the client consumes shared-region descriptors.
            queues.push(QueueSpec {
                name: format!("c{i}_rx_avail"),
                capacity: CLIENT_Q_CAP,
                kind: QueueKind::Desc,
                producer: "rx_mux".into(),
                consumer: cname.clone(),
                region: Some("rx_data".into()),
                subregion: None,
                prefill: false,
                tx_work: false,
                rx_work: true,
            });
            queues.push(QueueSpec {
                name: format!("c{i}_rx_free"),
                capacity: CLIENT_Q_CAP,
                kind: QueueKind::Desc,
                producer: cname.clone(),
                consumer: "rx_mux".into(),
                region: Some("rx_data".into()),
                subregion: None,
                prefill: false,
                tx_work: false,
                rx_work: false,
            });
            channels.push(ChannelSpec {
                name: format!("c{i}_down"),
                a: "rx_mux".into(),
                b: cname.clone(),
            });
            rx_clients.push(RxClientSpec {
                mac: Mac::client(i).to_string(),
                rx_avail: format!("c{i}_rx_avail"),
                rx_free: format!("c{i}_rx_free"),
                ch: format!("c{i}_down"),
            });
            let kind = if is_responder {
                CompKindSpec::ArpResponder {
                    index: i,
                    rx_region: "rx_data".into(),
                    tx_region: "tx_data".into(),
                    tx_subregion: i,
                    rx_avail: format!("c{i}_rx_avail"),
                    rx_free: format!("c{i}_rx_free"),
                    rx_ch: format!("c{i}_down"),
                    tx_avail: format!("c{i}_tx_avail"),
                    tx_free: format!("c{i}_tx_free"),
                    tx_ch: format!("c{i}_tx"),
                }
            } else {
                CompKindSpec::EchoClient {
                    index: i,
                    rx_region: "rx_data".into(),
                    tx_region: "tx_data".into(),
                    tx_subregion: i,
                    rx_avail: format!("c{i}_rx_avail"),
                    rx_free: format!("c{i}_rx_free"),
                    rx_ch: format!("c{i}_down"),
                    tx_avail: format!("c{i}_tx_avail"),
                    tx_free: format!("c{i}_tx_free"),
                    tx_ch: format!("c{i}_tx"),
                }
            };
            components.push(ComponentSpec {
                name: cname.clone(),
                core: client_core,
                priority: if is_responder { 44 } else { 60 },
                kind,
            });
        }
    }

    let arp_client_index = opts.arp_responder.then_some(total_clients - 1);
    components.push(ComponentSpec {
        name: "tx_mux".into(),
        core: core_drv,
        priority: 30,
        kind: CompKindSpec::TxMux {
            region: "tx_data".into(),
            drv_tx_avail: "drv_tx_avail".into(),
            drv_tx_free: "drv_tx_free".into(),
            drv_ch: "drv_txmux".into(),
            clients: tx_clients,
            policy: opts.policy.clone(),
            monitor: opts.monitor.clone(),
            swapper_ch: opts.swapper.as_ref().map(|_| "swap_trigger".into()),
            timer_ch: Some("txmux_timer".into()),
        },
    });
    components.push(ComponentSpec {
        name: "rx_mux".into(),
        core: core_rxmux,
        priority: 40,
        kind: CompKindSpec::RxMux {
            region: "rx_data".into(),
            drv_rx_avail: "drv_rx_avail".into(),
            drv_rx_free: "drv_rx_free".into(),
            drv_ch: "drv_rxmux".into(),
            clients: rx_clients,
            broadcast: opts.broadcast,
            arp_client: arp_client_index,
        },
    });
    if let Some(replacement) = &opts.swapper {
        channels.push(ChannelSpec {
            name: "swap_trigger".into(),
            a: "tx_mux".into(),
            b: "swapper".into(),
        });
        components.push(ComponentSpec {
            name: "swapper".into(),
            core: core_drv,
            priority: 70,
            kind: CompKindSpec::Swapper {
                trigger_ch: "swap_trigger".into(),
                target: "tx_mux".into(),
                replacement: replacement.clone(),
                swap_cost_us: DEFAULT_SWAP_COST_NS / 1000,
            },
        });
    }

    let programs = opts
        .rates_mbps_milli
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0)
        .map(|(i, &r)| ClientLoad { client: i, program: RateProgram::Constant { mbps_milli: r } })
        .collect();

    Scenario {
        sim: SimConfig {
            cores: if opts.multicore { 4 } else { 1 },
            seed: opts.seed,
            duration_ms: opts.duration_ms,
            warmup_ms: opts.warmup_ms,
            sample_window_ms: opts.sample_window_ms,
            audit_each_sample: opts.audit_each_sample,
        },
        costs: CostModel::default(),
        nic: Some(NicConfig::default()),
        disk: None,
        regions,
        queues,
        channels,
        components,
        workload: WorkloadSpec::Echo {
            frame_bytes: opts.frame_bytes,
            programs,
            jitter_ppm: opts.jitter_ppm,
            arp_probes: vec![],
            broadcasts: vec![],
            unknown_unicasts: vec![],
        },
        actions: vec![],
    }
}

/// The dynamic policy-swap demonstration: client 0 at a steady trickle,
/// client 1 ramping through the threshold, monitor + swapper armed.
pub fn swap_scenario(seed: u64, duration_ms: u64) -> Scenario {
    let opts = EchoOptions {
        clients: 2,
        rates_mbps_milli: vec![10_000, 0],
        duration_ms,
        warmup_ms: 0,
        seed,
        sample_window_ms: 100,
        audit_each_sample: true,
        monitor: Some(MonitorSpec { window_ms: 50, watched_client: 1, threshold_mbps: 500 }),
        swapper: Some(TxPolicySpec::TokenBucket {
            limits: vec![net::BucketSpec { client: 1, rate_mbps: 200, burst_bytes: 10 * 1518 }],
        }),
        ..EchoOptions::default()
    };
    let mut scenario = echo_scenario(&opts);
    if let WorkloadSpec::Echo { programs, .. } = &mut scenario.workload {
        programs.push(ClientLoad {
            client: 1,
            program: RateProgram::Ramp {
                from_milli: 0,
                to_milli: 600_000,
                start_ns: 0,
                end_ns: duration_ms * MS * 3 / 4,
            },
        });
    }
    scenario
}

#[derive(Debug, Clone)]
pub struct StorageOptions {
    pub clients: usize,
    pub queue_depth: u32,
    pub requests_per_client: u64,
    pub barrier_every: u64,
    pub blocks_per_request: u32,
    pub reorder_window: u32,
    pub seed: u64,
    pub duration_ms: u64,
}

impl Default for StorageOptions {
    fn default() -> Self {
        StorageOptions {
            clients: 3,
            queue_depth: 8,
            requests_per_client: 2000,
            barrier_every: 16,
            blocks_per_request: 1,
            reorder_window: 8,
            seed: 1,
            duration_ms: 5000,
        }
    }
}

/// Storage pipeline: driver + partitioning mux + per-client workload
/// clients over equal partitions of the device.
pub fn storage_scenario(opts: &StorageOptions) -> Scenario {
    let disk = DiskConfig { reorder_window: opts.reorder_window, ..DiskConfig::default() };
    let part_len = disk.capacity_blocks / opts.clients as u64;
    let slot_size =
        (disk.block_size * opts.blocks_per_request).next_power_of_two().max(disk.block_size);
    let data_slots = (2 * opts.queue_depth).next_power_of_two();

    let mut regions = Vec::new();
    let mut queues = vec![
        QueueSpec {
            name: "drv_rq".into(),
            capacity: 64,
            kind: QueueKind::BlockRequest,
            producer: "blk_mux".into(),
            consumer: "blk_driver".into(),
            region: None,
            subregion: None,
            prefill: false,
            tx_work: false,
            rx_work: false,
        },
        QueueSpec {
            name: "drv_rs".into(),
            capacity: 64,
            kind: QueueKind::BlockResponse,
            producer: "blk_driver".into(),
            consumer: "blk_mux".into(),
            region: None,
            subregion: None,
            prefill: false,
            tx_work: false,
            rx_work: false,
        },
    ];
    let mut channels = vec![
        ChannelSpec { name: "disk_irq".into(), a: "@disk".into(), b: "blk_driver".into() },
        ChannelSpec { name: "drv_mux".into(), a: "blk_driver".into(), b: "blk_mux".into() },
    ];
    let mut components = vec![ComponentSpec {
        name: "blk_driver".into(),
        core: 0,
        priority: 10,
        kind: CompKindSpec::BlkDriver {
            requests: "drv_rq".into(),
            responses: "drv_rs".into(),
            irq_ch: "disk_irq".into(),
            mux_ch: "drv_mux".into(),
        },
    }];

    let mut mux_clients = Vec::new();
    let mut partitions = Vec::new();
    for i in 0..opts.clients {
        regions.push(RegionSpec {
            name: format!("blk{i}_data"),
            slot_size,
            slot_count: data_slots,
            subregions: vec![],
            pooled: false,
        });
        queues.push(QueueSpec {
            name: format!("blk{i}_rq"),
            capacity: 32,
            kind: QueueKind::BlockRequest,
            producer: format!("blk_client{i}"),
            consumer: "blk_mux".into(),
            region: None,
            subregion: None,
            prefill: false,
            tx_work: false,
            rx_work: false,
        });
        queues.push(QueueSpec {
            name: format!("blk{i}_rs"),
            capacity: 32,
            kind: QueueKind::BlockResponse,
            producer: "blk_mux".into(),
            consumer: format!("blk_client{i}"),
            region: None,
            subregion: None,
            prefill: false,
            tx_work: false,
            rx_work: false,
        });
        channels.push(ChannelSpec {
            name: format!("blk{i}_ch"),
            a: "blk_mux".into(),
            b: format!("blk_client{i}"),
        });
        channels.push(ChannelSpec {
            name: format!("blk{i}_timer"),
            a: "@timer".into(),
            b: format!("blk_client{i}"),
        });
        mux_clients.push(BlkClientQueues {
            requests: format!("blk{i}_rq"),
            responses: format!("blk{i}_rs"),
            ch: format!("blk{i}_ch"),
            data_region: format!("blk{i}_data"),
        });
        partitions.push(Partition { start_lba: i as u64 * part_len, length_blocks: part_len });
        components.push(ComponentSpec {
            name: format!("blk_client{i}"),
            core: 0,
            priority: 50 + i as i32,
            kind: CompKindSpec::BlkClient {
                index: i,
                data_region: format!("blk{i}_data"),
                requests: format!("blk{i}_rq"),
                responses: format!("blk{i}_rs"),
                mux_ch: format!("blk{i}_ch"),
                timer_ch: format!("blk{i}_timer"),
                queue_depth: opts.queue_depth,
                total_requests: opts.requests_per_client,
                barrier_every: opts.barrier_every,
                blocks_per_request: opts.blocks_per_request,
            },
        });
    }
    components.push(ComponentSpec {
        name: "blk_mux".into(),
        core: 0,
        priority: 30,
        kind: CompKindSpec::BlkMux {
            drv_requests: "drv_rq".into(),
            drv_responses: "drv_rs".into(),
            drv_ch: "drv_mux".into(),
            clients: mux_clients,
            partitions,
        },
    });

    Scenario {
        sim: SimConfig {
            cores: 1,
            seed: opts.seed,
            duration_ms: opts.duration_ms,
            warmup_ms: 0,
            sample_window_ms: 0,
            audit_each_sample: false,
        },
        costs: CostModel::default(),
        nic: None,
        disk: Some(disk),
        regions,
        queues,
        channels,
        components,
        workload: WorkloadSpec::Storage,
        actions: vec![],
    }
}
