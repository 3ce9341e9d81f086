//! Message accounting for inter-patch exchange schedules.
//!
//! Every patch broadcasts its macroscale value to each neighbour once per
//! exchange round.  Refreshing neighbour data every micro integrator step
//! keeps patches continuously synchronised but costs one message per
//! neighbour per step; refreshing only every mesoscale interval `delta_t`
//! divides the message volume by `delta_t / dt_micro`.  The ledger built
//! here counts that traffic exactly and never touches the numerics: wiring
//! it next to a patch run changes nothing about the trajectories.
//!
//! Delay injection is accounting-only as well: it reports how stale the
//! neighbour data at each coupling evaluation would be under per-edge
//! delivery delays, without altering any simulation.

use std::io::{self, Write};

use thiserror::Error;

use crate::scalar::Real;

/// Relative slack when checking that `t_end` is a whole number of steps.
const RATIO_TOL: f64 = 1e-9;

/// Failure modes of the communication ledger.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommError {
    /// The topology has too few patches for its neighbour relation to be a
    /// simple symmetric graph.
    #[error("a {kind} needs at least {min} patches: got {got}")]
    TooSmall { kind: &'static str, min: usize, got: usize },
    /// The cadence step must be a positive finite time.
    #[error("cadence step must be finite and strictly positive: got {value}")]
    BadStep { value: f64 },
    /// Rounds only fit when the horizon is a whole number of steps.
    #[error("t_end must be a nonnegative integer multiple of the cadence step: t_end/step = {ratio}")]
    NonDivisibleHorizon { ratio: f64 },
    /// Every message carries at least the macroscale value itself.
    #[error("messages must carry at least one scalar")]
    EmptyPayload,
    /// Delays can only be placed on edges that exist.
    #[error("({src}, {dst}) is not a directed edge of the topology")]
    UnknownEdge { src: usize, dst: usize },
    /// The two ledgers describe different topologies or payloads.
    #[error("ledgers are not comparable: different topology or payload")]
    LedgerMismatch,
    /// A reduction factor needs a nonempty mesoscale ledger.
    #[error("the mesoscale ledger counts no messages; no reduction factor exists")]
    EmptyReduction,
}

/// Nearest-neighbour patch topology.
///
/// The neighbour relation is symmetric: whenever `a` receives from `b`, `b`
/// receives from `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// `patches` in a row; the two end patches have a single neighbour.
    Line { patches: usize },
    /// `patches` in a cycle; every patch has two neighbours.
    Ring { patches: usize },
    /// `side x side` patches with periodic wrap; every patch has four
    /// neighbours.
    Grid2dPeriodic { side: usize },
}

impl Topology {
    /// Checks that the neighbour relation is a simple symmetric graph
    /// (rings and periodic grids need enough patches to avoid a patch
    /// facing the same neighbour twice).
    pub fn validate(&self) -> Result<(), CommError> {
        match *self {
            Topology::Line { patches } if patches == 0 => {
                Err(CommError::TooSmall { kind: "line", min: 1, got: patches })
            }
            Topology::Ring { patches } if patches < 3 => {
                Err(CommError::TooSmall { kind: "ring", min: 3, got: patches })
            }
            Topology::Grid2dPeriodic { side } if side < 3 => {
                Err(CommError::TooSmall { kind: "periodic grid side", min: 3, got: side })
            }
            _ => Ok(()),
        }
    }

    /// Total number of patches.
    pub fn patch_count(&self) -> usize {
        match *self {
            Topology::Line { patches } | Topology::Ring { patches } => patches,
            Topology::Grid2dPeriodic { side } => side * side,
        }
    }

    /// Neighbours of patch `p` (grid patches are numbered row-major).
    pub fn neighbours(&self, p: usize) -> Vec<usize> {
        match *self {
            Topology::Line { patches } => {
                let mut out = Vec::new();
                if p > 0 {
                    out.push(p - 1);
                }
                if p + 1 < patches {
                    out.push(p + 1);
                }
                out
            }
            Topology::Ring { patches } => {
                vec![(p + patches - 1) % patches, (p + 1) % patches]
            }
            Topology::Grid2dPeriodic { side } => {
                let (ix, iy) = (p / side, p % side);
                vec![
                    ((ix + 1) % side) * side + iy,
                    ((ix + side - 1) % side) * side + iy,
                    ix * side + (iy + 1) % side,
                    ix * side + (iy + side - 1) % side,
                ]
            }
        }
    }

    /// All directed edges `(src, dst)` — `dst` receives from `src` — sorted
    /// by `(src, dst)`.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for dst in 0..self.patch_count() {
            for src in self.neighbours(dst) {
                edges.push((src, dst));
            }
        }
        edges.sort_unstable();
        edges
    }
}

/// How stale the data travelling over an edge is, in exchange rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Delay {
    /// Data arrives `0` rounds late (on time) or a fixed number of rounds
    /// late.
    Rounds(u64),
    /// Data never arrives at all.
    Never,
}

impl std::fmt::Display for Delay {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Delay::Rounds(r) => write!(f, "{r}"),
            Delay::Never => write!(f, "never"),
        }
    }
}

/// Message traffic over one directed edge for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeFlow {
    /// Sending patch.
    pub src: usize,
    /// Receiving patch.
    pub dst: usize,
    /// Messages sent over the run (one per exchange round).
    pub messages: u64,
    /// Scalars sent over the run (`messages * payload`).
    pub scalars: u64,
    /// Worst age of the data used on this edge, if delays were injected.
    pub max_age: Delay,
}

/// Exchange cadence of a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cadence<T> {
    /// Exchange after every micro integrator step.
    Micro {
        /// Micro integrator step.
        dt_micro: T,
    },
    /// Exchange after every mesoscale interval.
    Meso {
        /// Mesoscale interval.
        delta_t: T,
    },
}

impl<T: Real> Cadence<T> {
    /// Time between exchange rounds.
    pub fn step(&self) -> T {
        match *self {
            Cadence::Micro { dt_micro } => dt_micro,
            Cadence::Meso { delta_t } => delta_t,
        }
    }
}

/// Complete message accounting of one run: one [`EdgeFlow`] per directed
/// edge plus the exchange-round instants.
///
/// Counters are exact closed forms: over `R = t_end / step` rounds every
/// directed edge carries exactly `R` messages, so a topology with `E`
/// directed edges carries `E * R` messages in total (for a regular topology
/// of `P` patches of degree `deg`, `P * deg * R`).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageLedger {
    payload: u64,
    round_times: Vec<f64>,
    flows: Vec<EdgeFlow>,
}

impl MessageLedger {
    /// Number of exchange rounds performed after the initial hand-out.
    pub fn rounds(&self) -> u64 {
        self.round_times.len() as u64
    }

    /// Instants of the exchange rounds, `step, 2*step, ..., t_end`.
    pub fn round_times(&self) -> &[f64] {
        &self.round_times
    }

    /// Scalars carried per message.
    pub fn payload(&self) -> u64 {
        self.payload
    }

    /// Per-edge traffic, sorted by `(src, dst)`.
    pub fn flows(&self) -> &[EdgeFlow] {
        &self.flows
    }

    /// Total messages over all edges and rounds.
    pub fn total_messages(&self) -> u64 {
        self.flows.iter().map(|f| f.messages).sum()
    }

    /// Total scalars over all edges and rounds.
    pub fn total_scalars(&self) -> u64 {
        self.flows.iter().map(|f| f.scalars).sum()
    }

    /// Writes the ledger as CSV with columns
    /// `edge_src,edge_dst,messages,scalars,max_age`.
    pub fn write_csv<W: Write>(&self, writer: &mut W) -> io::Result<()> {
        writeln!(writer, "edge_src,edge_dst,messages,scalars,max_age")?;
        for flow in &self.flows {
            writeln!(
                writer,
                "{},{},{},{},{}",
                flow.src, flow.dst, flow.messages, flow.scalars, flow.max_age
            )?;
        }
        Ok(())
    }
}

/// Counts the messages exchanged by `topology` under the given cadence up to
/// `t_end`, with `payload_scalars_per_msg` scalars per message (`1` carries
/// just the macroscale value; an order-`Q` scheme carries `Q`).
///
/// Exchange rounds happen at `step, 2*step, ..., t_end`; the initial
/// hand-out at `t = 0` is setup, not traffic.  Errors when `t_end` is not a
/// whole number of steps.
pub fn simulate_exchange<T: Real>(
    topology: &Topology,
    cadence: Cadence<T>,
    t_end: T,
    payload_scalars_per_msg: usize,
) -> Result<MessageLedger, CommError> {
    topology.validate()?;
    if payload_scalars_per_msg == 0 {
        return Err(CommError::EmptyPayload);
    }
    let step = cadence.step().to_f64().unwrap_or(f64::NAN);
    if !step.is_finite() || step <= 0.0 {
        return Err(CommError::BadStep { value: step });
    }
    let horizon = t_end.to_f64().unwrap_or(f64::NAN);
    let ratio = horizon / step;
    let rounds = ratio.round();
    if !ratio.is_finite() || rounds < 0.0 || (ratio - rounds).abs() > RATIO_TOL * ratio.abs().max(1.0)
    {
        return Err(CommError::NonDivisibleHorizon { ratio });
    }
    let rounds = rounds as u64;
    let payload = payload_scalars_per_msg as u64;
    let flows = topology
        .directed_edges()
        .into_iter()
        .map(|(src, dst)| EdgeFlow {
            src,
            dst,
            messages: rounds,
            scalars: rounds * payload,
            max_age: Delay::Rounds(0),
        })
        .collect();
    Ok(MessageLedger {
        payload,
        round_times: (1..=rounds).map(|k| k as f64 * step).collect(),
        flows,
    })
}

/// How many times more messages the micro-cadence ledger carries than the
/// mesoscale one: exactly `delta_t / dt_micro` for matching topologies and
/// horizons.
pub fn reduction_factor(micro: &MessageLedger, meso: &MessageLedger) -> Result<f64, CommError> {
    let edges = |l: &MessageLedger| l.flows.iter().map(|f| (f.src, f.dst)).collect::<Vec<_>>();
    if edges(micro) != edges(meso) || micro.payload != meso.payload {
        return Err(CommError::LedgerMismatch);
    }
    if meso.total_messages() == 0 {
        return Err(CommError::EmptyReduction);
    }
    Ok(micro.total_messages() as f64 / meso.total_messages() as f64)
}

/// Staleness of the neighbour data used at every coupling evaluation, under
/// injected per-edge delivery delays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StalenessReport {
    /// Age of the data used on each directed edge, in exchange rounds.
    pub edge_ages: Vec<((usize, usize), Delay)>,
    /// Worst incoming age per patch.
    pub patch_worst: Vec<Delay>,
}

/// Marks the given directed edges of `ledger` as delayed and reports the
/// resulting staleness per edge and per patch.  Edges without an entry in
/// `delays` stay on time (age `0`).
///
/// Accounting only: the report describes how old the neighbour data at each
/// coupling evaluation would be; no simulation is altered.
pub fn inject_delay(
    ledger: &mut MessageLedger,
    delays: &[((usize, usize), Delay)],
) -> Result<StalenessReport, CommError> {
    for &((src, dst), _) in delays {
        if !ledger.flows.iter().any(|f| (f.src, f.dst) == (src, dst)) {
            return Err(CommError::UnknownEdge { src, dst });
        }
    }
    let patch_count = ledger
        .flows
        .iter()
        .map(|f| f.src.max(f.dst) + 1)
        .max()
        .unwrap_or(0);
    let mut patch_worst = vec![Delay::Rounds(0); patch_count];
    let mut edge_ages = Vec::with_capacity(ledger.flows.len());
    for flow in &mut ledger.flows {
        let age = delays
            .iter()
            .find(|(edge, _)| *edge == (flow.src, flow.dst))
            .map(|&(_, d)| d)
            .unwrap_or(Delay::Rounds(0));
        flow.max_age = age;
        patch_worst[flow.dst] = patch_worst[flow.dst].max(age);
        edge_ages.push(((flow.src, flow.dst), age));
    }
    Ok(StalenessReport { edge_ages, patch_worst })
}
