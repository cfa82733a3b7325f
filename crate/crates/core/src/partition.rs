//! Decomposition of a radial network into contiguous subtree areas.
//!
//! An area owns its member buses and the branch entering each member bus
//! (the substation has none). For a non-root area with top bus `k`, the
//! branch `j -> k` from the parent area is therefore owned by the child: the
//! child solves for its flow and current with the parent-side voltage `v_j`
//! held fixed, and the parent sees `(P_jk, Q_jk)` as a fixed load at `j`.
//! Interfaces are identified by the child's top bus `k`.

use serde::{Deserialize, Serialize};

use crate::network::{RadialNetwork, SUBSTATION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Area {
    pub id: usize,
    /// Member buses; the top bus first, then breadth-first order.
    pub buses: Vec<usize>,
    /// Branches entering member buses, aligned with `buses` except that the
    /// substation contributes none.
    pub branches: Vec<usize>,
    /// Top bus of this area when it has a parent area.
    pub root_interface: Option<usize>,
    /// Top buses of the child areas, ascending.
    pub child_interfaces: Vec<usize>,
    pub parent_area: Option<usize>,
    pub child_areas: Vec<usize>,
}

impl Area {
    pub fn top(&self) -> usize {
        self.buses[0]
    }

    pub fn is_root(&self) -> bool {
        self.parent_area.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    /// Top bus of the child area.
    pub bus: usize,
    /// Parent-side bus of the crossing branch.
    pub parent_bus: usize,
    pub parent_area: usize,
    pub child_area: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub areas: Vec<Area>,
    /// Area of every bus.
    pub area_of: Vec<usize>,
    /// Interfaces in ascending bus order.
    pub interfaces: Vec<Interface>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantityKind {
    /// Parent-side squared voltage sent to the child area.
    VoltageDown,
    /// Interface branch flow `(P, Q)` sent to the parent area.
    FlowUp,
}

impl QuantityKind {
    pub fn slots(self) -> usize {
        match self {
            QuantityKind::VoltageDown => 1,
            QuantityKind::FlowUp => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub bus: usize,
    pub exporter: usize,
    pub importer: usize,
    pub kind: QuantityKind,
}

/// Splits `network` into areas of at most `max_nodes` buses.
///
/// The tree is processed leaves first. Each bus collects the still-open
/// groups of its children; when the merged group would exceed `max_nodes`,
/// child groups are closed as areas until it fits, shallowest child subtree
/// first with ties broken by ascending bus id. Closing shallow side branches
/// keeps the long spines inside one area, which keeps the area tree short.
/// The substation's group is the root area.
pub fn decompose(network: &RadialNetwork, max_nodes: usize) -> Partition {
    assert!(max_nodes >= 1, "max_nodes must be at least 1");
    let n = network.num_buses();
    let mut size = vec![0usize; n];
    let mut height = vec![0usize; n];
    let mut is_top = vec![false; n];
    is_top[SUBSTATION] = true;
    let mut open: Vec<(usize, usize, usize)> = Vec::new();
    for &u in network.order().iter().rev() {
        open.clear();
        open.extend(network.children_of(u).iter().map(|&c| (height[c], c, size[c])));
        height[u] = open.iter().map(|o| o.0 + 1).max().unwrap_or(0);
        let mut total = 1 + open.iter().map(|o| o.2).sum::<usize>();
        if total > max_nodes {
            open.sort_unstable();
            for &(_, c, s) in open.iter() {
                if total <= max_nodes {
                    break;
                }
                is_top[c] = true;
                total -= s;
            }
        }
        size[u] = total;
    }

    let mut areas: Vec<Area> = Vec::new();
    let mut area_of = vec![usize::MAX; n];
    for &u in network.order() {
        let a = if is_top[u] {
            let id = areas.len();
            let parent_area = network.parent(u).map(|p| area_of[p]);
            areas.push(Area {
                id,
                buses: Vec::new(),
                branches: Vec::new(),
                root_interface: parent_area.map(|_| u),
                child_interfaces: Vec::new(),
                parent_area,
                child_areas: Vec::new(),
            });
            if let Some(pa) = parent_area {
                areas[pa].child_interfaces.push(u);
                areas[pa].child_areas.push(id);
            }
            id
        } else {
            area_of[network.parent(u).expect("non-root bus has a parent")]
        };
        area_of[u] = a;
        areas[a].buses.push(u);
        if let Some(k) = network.parent_branch(u) {
            areas[a].branches.push(k);
        }
    }
    let mut interfaces: Vec<Interface> = areas
        .iter()
        .filter_map(|a| {
            a.root_interface.map(|k| Interface {
                bus: k,
                parent_bus: network.parent(k).expect("interface bus has a parent"),
                parent_area: a.parent_area.expect("non-root area has a parent"),
                child_area: a.id,
            })
        })
        .collect();
    interfaces.sort_unstable_by_key(|i| i.bus);
    for a in areas.iter_mut() {
        a.child_interfaces.sort_unstable();
        a.child_areas.sort_unstable();
    }
    Partition { areas, area_of, interfaces }
}

/// Boundary exchange schedule: a `VoltageDown` then a `FlowUp` entry per
/// interface, ascending by interface bus. This order defines the layout of
/// the boundary vector.
pub fn interface_schedule(partition: &Partition) -> Vec<ScheduleEntry> {
    partition
        .interfaces
        .iter()
        .flat_map(|i| {
            [
                ScheduleEntry {
                    bus: i.bus,
                    exporter: i.parent_area,
                    importer: i.child_area,
                    kind: QuantityKind::VoltageDown,
                },
                ScheduleEntry {
                    bus: i.bus,
                    exporter: i.child_area,
                    importer: i.parent_area,
                    kind: QuantityKind::FlowUp,
                },
            ]
        })
        .collect()
}

#[derive(Serialize)]
struct PartitionExport<'a> {
    areas: &'a [Area],
    schedule: Vec<ScheduleEntry>,
}

impl Partition {
    pub fn num_areas(&self) -> usize {
        self.areas.len()
    }

    /// Interface record for the child-area top bus `bus`.
    pub fn interface(&self, bus: usize) -> Option<&Interface> {
        self.interfaces.binary_search_by_key(&bus, |i| i.bus).ok().map(|i| &self.interfaces[i])
    }

    /// Depth of the area tree (1 for a single area).
    pub fn area_depth(&self) -> usize {
        let mut depth = vec![0usize; self.areas.len()];
        let mut max = 0;
        for a in &self.areas {
            depth[a.id] = a.parent_area.map_or(1, |p| depth[p] + 1);
            max = max.max(depth[a.id]);
        }
        max
    }

    /// Areas with their member lists plus the exchange schedule, as JSON.
    pub fn to_json(&self) -> String {
        let export = PartitionExport { areas: &self.areas, schedule: interface_schedule(self) };
        serde_json::to_string_pretty(&export).expect("partition serializes")
    }
}
