//! Design spaces: dimensions, dependency groups, canonical designs.
//!
//! A [`DesignSpace`] is an ordered list of [`Dimension`]s plus optional
//! [`DependencyGroup`]s. A group ties member dimensions to a categorical
//! flag dimension: members are assigned only while the flag is not at its
//! inactive choice, and gated numerical members must not exceed the value
//! of a bounding dimension. Assignments that overrun a gate are duplicates
//! of the design with the gated value clamped to the largest valid choice,
//! so enumeration merges them. [`SpaceIndex`] freezes the enumeration and
//! hands out [`Design`]s whose `id` is the index in lexicographic
//! enumeration order over the declared dimension order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Hard cap on the raw assignment product, to keep enumeration at desk scale.
const MAX_RAW_DESIGNS: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum DimensionKind {
    /// Ordered numeric choices, strictly increasing.
    Numerical(Vec<f64>),
    /// Unordered symbolic choices.
    Categorical(Vec<String>),
}

impl DimensionKind {
    pub fn choice_count(&self) -> usize {
        match self {
            DimensionKind::Numerical(c) => c.len(),
            DimensionKind::Categorical(c) => c.len(),
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, DimensionKind::Numerical(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub kind: DimensionKind,
}

impl Dimension {
    pub fn numerical(name: &str, choices: &[f64]) -> Self {
        Dimension {
            name: name.to_string(),
            kind: DimensionKind::Numerical(choices.to_vec()),
        }
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        Dimension {
            name: name.to_string(),
            kind: DimensionKind::Categorical(choices.iter().map(|c| c.to_string()).collect()),
        }
    }
}

/// `dimension` must stay less than or equal to `bound` (compared on values).
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub dimension: String,
    pub bound: String,
}

/// Member dimensions exist only while `flag` is away from `inactive_choice`.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGroup {
    pub flag: String,
    pub inactive_choice: String,
    pub members: Vec<String>,
    pub gates: Vec<Gate>,
}

/// A dimension value: numeric or symbolic, matching the dimension kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Sym(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Sym(s) => write!(f, "{s}"),
        }
    }
}

pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceError {
    NoDimensions,
    DuplicateDimension(String),
    EmptyDimension(String),
    NonIncreasingChoices(String),
    DuplicateChoice(String),
    UnknownDimension(String),
    NotCategorical(String),
    NotNumerical(String),
    UnknownChoice { dimension: String, value: String },
    FlagWithoutActiveChoice(String),
    DimensionInMultipleGroups(String),
    EmptyGroup(String),
    FlagAfterMember { flag: String, member: String },
    GateOnNonMember { group: String, dimension: String },
    BoundInsideGroup { gate: String, bound: String },
    UnsatisfiableGate { dimension: String, bound: String },
    TooLarge { raw_designs: u128 },
    MissingAssignment(String),
    UnexpectedAssignment(String),
    DesignShape,
    UnknownDesign(usize),
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceError::NoDimensions => write!(f, "space declares no dimensions"),
            SpaceError::DuplicateDimension(d) => write!(f, "dimension `{d}` declared twice"),
            SpaceError::EmptyDimension(d) => write!(f, "dimension `{d}` has no choices"),
            SpaceError::NonIncreasingChoices(d) => {
                write!(f, "numerical dimension `{d}` must list strictly increasing choices")
            }
            SpaceError::DuplicateChoice(d) => write!(f, "dimension `{d}` lists a choice twice"),
            SpaceError::UnknownDimension(d) => write!(f, "unknown dimension `{d}`"),
            SpaceError::NotCategorical(d) => write!(f, "dimension `{d}` is not categorical"),
            SpaceError::NotNumerical(d) => write!(f, "dimension `{d}` is not numerical"),
            SpaceError::UnknownChoice { dimension, value } => {
                write!(f, "`{value}` is not a choice of dimension `{dimension}`")
            }
            SpaceError::FlagWithoutActiveChoice(d) => {
                write!(f, "flag dimension `{d}` has no active choice")
            }
            SpaceError::DimensionInMultipleGroups(d) => {
                write!(f, "dimension `{d}` appears in more than one dependency group")
            }
            SpaceError::EmptyGroup(g) => write!(f, "dependency group `{g}` has no members"),
            SpaceError::FlagAfterMember { flag, member } => {
                write!(f, "flag `{flag}` must be declared before its member `{member}`")
            }
            SpaceError::GateOnNonMember { group, dimension } => {
                write!(f, "gate in group `{group}` names `{dimension}`, which is not a member")
            }
            SpaceError::BoundInsideGroup { gate, bound } => {
                write!(f, "gate on `{gate}` uses bound `{bound}` that belongs to a group")
            }
            SpaceError::UnsatisfiableGate { dimension, bound } => {
                write!(
                    f,
                    "gate `{dimension}` <= `{bound}` admits no choice for some bound value"
                )
            }
            SpaceError::TooLarge { raw_designs } => {
                write!(f, "space enumerates {raw_designs} raw assignments, over the limit")
            }
            SpaceError::MissingAssignment(d) => write!(f, "no value assigned to dimension `{d}`"),
            SpaceError::UnexpectedAssignment(d) => {
                write!(f, "dimension `{d}` is inactive but has a value assigned")
            }
            SpaceError::DesignShape => write!(f, "design does not match this space"),
            SpaceError::UnknownDesign(id) => write!(f, "design id {id} is out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    Free,
    Flag(usize),
    Member(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GroupInfo {
    pub flag: usize,
    pub inactive: u16,
    pub members: Vec<usize>,
    /// (member dim, bounding dim), both numerical.
    pub gates: Vec<(usize, usize)>,
    pub name: String,
}

/// A coordinate of the design metric: a plain dimension or a whole group.
///
/// Group coordinates label boundary edges, where the flag leaves its
/// inactive choice and the member dimensions appear in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Coord {
    Dim(u16),
    Group(u16),
}

impl Coord {
    /// Position in the relation one-hot: dimensions first, then groups.
    pub fn onehot_index(&self, space: &DesignSpace) -> usize {
        match *self {
            Coord::Dim(i) => i as usize,
            Coord::Group(g) => space.dims.len() + g as usize,
        }
    }

    pub fn name<'a>(&self, space: &'a DesignSpace) -> &'a str {
        match *self {
            Coord::Dim(i) => &space.dims[i as usize].name,
            Coord::Group(g) => &space.groups[g as usize].name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    dims: Vec<Dimension>,
    groups: Vec<GroupInfo>,
    roles: Vec<Role>,
    by_name: BTreeMap<String, usize>,
    encoding_width: usize,
}

impl DesignSpace {
    pub fn new(
        dimensions: Vec<Dimension>,
        groups: Vec<DependencyGroup>,
    ) -> Result<Self, SpaceError> {
        if dimensions.is_empty() {
            return Err(SpaceError::NoDimensions);
        }
        let mut by_name = BTreeMap::new();
        for (i, dim) in dimensions.iter().enumerate() {
            if by_name.insert(dim.name.clone(), i).is_some() {
                return Err(SpaceError::DuplicateDimension(dim.name.clone()));
            }
            match &dim.kind {
                DimensionKind::Numerical(choices) => {
                    if choices.is_empty() {
                        return Err(SpaceError::EmptyDimension(dim.name.clone()));
                    }
                    if choices.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(SpaceError::NonIncreasingChoices(dim.name.clone()));
                    }
                }
                DimensionKind::Categorical(choices) => {
                    if choices.is_empty() {
                        return Err(SpaceError::EmptyDimension(dim.name.clone()));
                    }
                    for (a, c) in choices.iter().enumerate() {
                        if choices[..a].contains(c) {
                            return Err(SpaceError::DuplicateChoice(dim.name.clone()));
                        }
                    }
                }
            }
        }

        let mut roles = vec![Role::Free; dimensions.len()];
        let mut infos = Vec::new();
        for (g, group) in groups.iter().enumerate() {
            let flag = *by_name
                .get(&group.flag)
                .ok_or_else(|| SpaceError::UnknownDimension(group.flag.clone()))?;
            let flag_choices = match &dimensions[flag].kind {
                DimensionKind::Categorical(c) => c,
                DimensionKind::Numerical(_) => {
                    return Err(SpaceError::NotCategorical(group.flag.clone()))
                }
            };
            let inactive = flag_choices
                .iter()
                .position(|c| *c == group.inactive_choice)
                .ok_or_else(|| SpaceError::UnknownChoice {
                    dimension: group.flag.clone(),
                    value: group.inactive_choice.clone(),
                })? as u16;
            if flag_choices.len() < 2 {
                return Err(SpaceError::FlagWithoutActiveChoice(group.flag.clone()));
            }
            if roles[flag] != Role::Free {
                return Err(SpaceError::DimensionInMultipleGroups(group.flag.clone()));
            }
            roles[flag] = Role::Flag(g);
            if group.members.is_empty() {
                return Err(SpaceError::EmptyGroup(group.flag.clone()));
            }
            let mut members = Vec::new();
            for m in &group.members {
                let mi = *by_name
                    .get(m)
                    .ok_or_else(|| SpaceError::UnknownDimension(m.clone()))?;
                if roles[mi] != Role::Free {
                    return Err(SpaceError::DimensionInMultipleGroups(m.clone()));
                }
                if mi < flag {
                    return Err(SpaceError::FlagAfterMember {
                        flag: group.flag.clone(),
                        member: m.clone(),
                    });
                }
                roles[mi] = Role::Member(g);
                members.push(mi);
            }
            let mut gates = Vec::new();
            for gate in &group.gates {
                let di = *by_name
                    .get(&gate.dimension)
                    .ok_or_else(|| SpaceError::UnknownDimension(gate.dimension.clone()))?;
                if !members.contains(&di) {
                    return Err(SpaceError::GateOnNonMember {
                        group: group.flag.clone(),
                        dimension: gate.dimension.clone(),
                    });
                }
                let bi = *by_name
                    .get(&gate.bound)
                    .ok_or_else(|| SpaceError::UnknownDimension(gate.bound.clone()))?;
                let (dep, bound) = match (&dimensions[di].kind, &dimensions[bi].kind) {
                    (DimensionKind::Numerical(d), DimensionKind::Numerical(b)) => (d, b),
                    (DimensionKind::Categorical(_), _) => {
                        return Err(SpaceError::NotNumerical(gate.dimension.clone()))
                    }
                    (_, DimensionKind::Categorical(_)) => {
                        return Err(SpaceError::NotNumerical(gate.bound.clone()))
                    }
                };
                // Every bound value must admit at least one dependent choice,
                // so the smallest dependent choice anchors boundary crossings.
                if dep[0] > bound[0] {
                    return Err(SpaceError::UnsatisfiableGate {
                        dimension: gate.dimension.clone(),
                        bound: gate.bound.clone(),
                    });
                }
                gates.push((di, bi));
            }
            infos.push(GroupInfo {
                flag,
                inactive,
                members,
                gates,
                name: group.flag.clone(),
            });
        }
        // A bound inside any group could be unassigned while its dependent is
        // active; keep bounds on always-assigned dimensions.
        for info in &infos {
            for &(di, bi) in &info.gates {
                if roles[bi] != Role::Free {
                    return Err(SpaceError::BoundInsideGroup {
                        gate: dimensions[di].name.clone(),
                        bound: dimensions[bi].name.clone(),
                    });
                }
            }
        }

        let encoding_width = dimensions
            .iter()
            .map(|d| match &d.kind {
                DimensionKind::Numerical(_) => 1,
                DimensionKind::Categorical(c) => c.len(),
            })
            .sum();

        Ok(DesignSpace {
            dims: dimensions,
            groups: infos,
            roles,
            by_name,
            encoding_width,
        })
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Width of the feature encoding: one slot per numerical dimension, one
    /// block per categorical dimension.
    pub fn encoding_width(&self) -> usize {
        self.encoding_width
    }

    /// Width of the relation one-hot: one slot per dimension plus one per group.
    pub fn relation_width(&self) -> usize {
        self.dims.len() + self.groups.len()
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.dims.len())
            .map(|i| Coord::Dim(i as u16))
            .chain((0..self.groups.len()).map(|g| Coord::Group(g as u16)))
    }

    fn numeric_value(&self, dim: usize, choice: u16) -> f64 {
        match &self.dims[dim].kind {
            DimensionKind::Numerical(c) => c[choice as usize],
            DimensionKind::Categorical(_) => unreachable!("gate on categorical dimension"),
        }
    }

    /// Clamp gated members down to the largest choice within their bound.
    /// Inactive groups are untouched.
    pub(crate) fn clamp(&self, choices: &mut [Option<u16>]) {
        for group in &self.groups {
            if choices[group.flag] == Some(group.inactive) {
                continue;
            }
            for &(di, bi) in &group.gates {
                let bound = self.numeric_value(bi, choices[bi].expect("bound assigned"));
                let cur = choices[di].expect("active member assigned");
                if self.numeric_value(di, cur) > bound {
                    let list = match &self.dims[di].kind {
                        DimensionKind::Numerical(c) => c,
                        DimensionKind::Categorical(_) => unreachable!(),
                    };
                    let best = list.iter().rposition(|v| *v <= bound).expect("gate satisfiable");
                    choices[di] = Some(best as u16);
                }
            }
        }
    }

    fn is_canonical(&self, choices: &[Option<u16>]) -> bool {
        let mut probe = choices.to_vec();
        self.clamp(&mut probe);
        probe == choices
    }

    /// Distance between two designs of this space: index gap on numerical
    /// dimensions, zero/one on categorical ones, and one composite
    /// contribution per dependency group. Crossing a group boundary costs
    /// one step plus the index gap of each numerical member from its
    /// smallest choice; the flag's active choice and categorical members do
    /// not add to the crossing.
    pub fn distance(&self, a: &Design, b: &Design) -> Result<u32, SpaceError> {
        if a.choices.len() != self.dims.len() || b.choices.len() != self.dims.len() {
            return Err(SpaceError::DesignShape);
        }
        let mut total = 0u32;
        for (i, dim) in self.dims.iter().enumerate() {
            if self.roles[i] != Role::Free {
                continue;
            }
            let (ca, cb) = match (a.choices[i], b.choices[i]) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(SpaceError::DesignShape),
            };
            total += dim_gap(dim, ca, cb);
        }
        for group in &self.groups {
            total += self.group_gap(group, a, b)?;
        }
        Ok(total)
    }

    fn group_gap(&self, group: &GroupInfo, a: &Design, b: &Design) -> Result<u32, SpaceError> {
        let fa = a.choices[group.flag].ok_or(SpaceError::DesignShape)?;
        let fb = b.choices[group.flag].ok_or(SpaceError::DesignShape)?;
        let active_a = fa != group.inactive;
        let active_b = fb != group.inactive;
        match (active_a, active_b) {
            (false, false) => Ok(0),
            (true, true) => {
                let mut gap = u32::from(fa != fb);
                for &m in &group.members {
                    let (ca, cb) = match (a.choices[m], b.choices[m]) {
                        (Some(x), Some(y)) => (x, y),
                        _ => return Err(SpaceError::DesignShape),
                    };
                    gap += dim_gap(&self.dims[m], ca, cb);
                }
                Ok(gap)
            }
            (true, false) | (false, true) => {
                let active = if active_a { a } else { b };
                let mut gap = 1u32;
                for &m in &group.members {
                    let c = active.choices[m].ok_or(SpaceError::DesignShape)?;
                    if self.dims[m].kind.is_numerical() {
                        gap += u32::from(c);
                    }
                }
                Ok(gap)
            }
        }
    }

    /// Whether a group's flag is away from its inactive choice.
    pub fn group_is_active(&self, design: &Design, group: usize) -> bool {
        let info = &self.groups[group];
        design.choices[info.flag] != Some(info.inactive)
    }

    /// Feature vector of a design: numerical values min-max normalized,
    /// categorical choices one-hot, inactive members as zero blocks.
    pub fn encode(&self, design: &Design) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoding_width);
        for (i, dim) in self.dims.iter().enumerate() {
            match &dim.kind {
                DimensionKind::Numerical(choices) => {
                    let v = match design.choices[i] {
                        Some(c) => {
                            let (lo, hi) = (choices[0], choices[choices.len() - 1]);
                            if hi > lo {
                                (choices[c as usize] - lo) / (hi - lo)
                            } else {
                                0.0
                            }
                        }
                        None => 0.0,
                    };
                    out.push(v);
                }
                DimensionKind::Categorical(choices) => {
                    let start = out.len();
                    out.resize(start + choices.len(), 0.0);
                    if let Some(c) = design.choices[i] {
                        out[start + c as usize] = 1.0;
                    }
                }
            }
        }
        out
    }

    /// The single coordinate where two distance-one designs differ.
    pub fn differing_coord(&self, a: &Design, b: &Design) -> Result<Coord, SpaceError> {
        if self.distance(a, b)? != 1 {
            return Err(SpaceError::DesignShape);
        }
        for (i, dim) in self.dims.iter().enumerate() {
            if self.roles[i] != Role::Free {
                continue;
            }
            if dim_gap(dim, a.choices[i].unwrap(), b.choices[i].unwrap()) != 0 {
                return Ok(Coord::Dim(i as u16));
            }
        }
        for (g, group) in self.groups.iter().enumerate() {
            if self.group_gap(group, a, b)? == 0 {
                continue;
            }
            let fa = a.choices[group.flag].unwrap();
            let fb = b.choices[group.flag].unwrap();
            if (fa != group.inactive) != (fb != group.inactive) {
                return Ok(Coord::Group(g as u16));
            }
            if fa != fb {
                return Ok(Coord::Dim(group.flag as u16));
            }
            for &m in &group.members {
                if dim_gap(&self.dims[m], a.choices[m].unwrap(), b.choices[m].unwrap()) != 0 {
                    return Ok(Coord::Dim(m as u16));
                }
            }
        }
        unreachable!("distance one but no differing coordinate")
    }

    /// Relation one-hot for an edge between two distance-one designs.
    pub fn encode_edge(&self, a: &Design, b: &Design) -> Result<Vec<f64>, SpaceError> {
        let coord = self.differing_coord(a, b)?;
        let mut out = vec![0.0; self.relation_width()];
        out[coord.onehot_index(self)] = 1.0;
        Ok(out)
    }

    fn choice_of(&self, dim: usize, value: &Value) -> Result<u16, SpaceError> {
        let found = match (&self.dims[dim].kind, value) {
            (DimensionKind::Numerical(c), Value::Num(v)) => c.iter().position(|x| x == v),
            (DimensionKind::Categorical(c), Value::Sym(s)) => c.iter().position(|x| x == s),
            _ => None,
        };
        found.map(|i| i as u16).ok_or_else(|| SpaceError::UnknownChoice {
            dimension: self.dims[dim].name.clone(),
            value: value.to_string(),
        })
    }

    fn choices_of(
        &self,
        assignment: &Assignment,
    ) -> Result<Result<Vec<Option<u16>>, SpaceError>, SpaceError> {
        // Outer error: the assignment talks about things this space does not
        // have. Inner error: well-formed but not a design of the space.
        for name in assignment.keys() {
            if !self.by_name.contains_key(name) {
                return Err(SpaceError::UnknownDimension(name.clone()));
            }
        }
        let mut choices = vec![None; self.dims.len()];
        for (i, dim) in self.dims.iter().enumerate() {
            let value = assignment.get(&dim.name);
            let active = match self.roles[i] {
                Role::Free | Role::Flag(_) => true,
                Role::Member(g) => {
                    let group = &self.groups[g];
                    match choices[group.flag] {
                        Some(f) => f != group.inactive,
                        None => return Ok(Err(SpaceError::MissingAssignment(
                            self.dims[group.flag].name.clone(),
                        ))),
                    }
                }
            };
            match (active, value) {
                (true, Some(v)) => match self.choice_of(i, v) {
                    Ok(c) => choices[i] = Some(c),
                    Err(e) => return Ok(Err(e)),
                },
                (true, None) => {
                    return Ok(Err(SpaceError::MissingAssignment(dim.name.clone())))
                }
                (false, Some(_)) => {
                    return Ok(Err(SpaceError::UnexpectedAssignment(dim.name.clone())))
                }
                (false, None) => {}
            }
        }
        Ok(Ok(choices))
    }

    /// Whether an assignment is a canonical design of this space. Unknown
    /// dimension names are an error, not `false`.
    pub fn is_valid(&self, assignment: &Assignment) -> Result<bool, SpaceError> {
        match self.choices_of(assignment)? {
            Ok(choices) => Ok(self.is_canonical(&choices)),
            Err(_) => Ok(false),
        }
    }

    /// Reconstruct the name-to-value map of a design.
    pub fn assignment(&self, design: &Design) -> Assignment {
        let mut out = BTreeMap::new();
        for (i, dim) in self.dims.iter().enumerate() {
            if let Some(c) = design.choices[i] {
                let v = match &dim.kind {
                    DimensionKind::Numerical(choices) => Value::Num(choices[c as usize]),
                    DimensionKind::Categorical(choices) => {
                        Value::Sym(choices[c as usize].clone())
                    }
                };
                out.insert(dim.name.clone(), v);
            }
        }
        out
    }
}

fn dim_gap(dim: &Dimension, a: u16, b: u16) -> u32 {
    match dim.kind {
        DimensionKind::Numerical(_) => a.abs_diff(b) as u32,
        DimensionKind::Categorical(_) => u32::from(a != b),
    }
}

/// A canonical design. `id` is its index in enumeration order; `choices`
/// holds one choice index per dimension, `None` for inactive members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    pub id: usize,
    choices: Vec<Option<u16>>,
}

impl Design {
    pub fn choice(&self, dim: usize) -> Option<u16> {
        self.choices[dim]
    }

    #[cfg(test)]
    pub(crate) fn choices(&self) -> &[Option<u16>] {
        &self.choices
    }
}

/// A design space together with its frozen enumeration.
#[derive(Debug, Clone)]
pub struct SpaceIndex {
    space: DesignSpace,
    designs: Vec<Vec<Option<u16>>>,
    ids: BTreeMap<Vec<Option<u16>>, usize>,
}

impl SpaceIndex {
    pub fn new(space: DesignSpace) -> Result<Self, SpaceError> {
        let mut raw: u128 = 1;
        for dim in &space.dims {
            raw = raw.saturating_mul(dim.kind.choice_count() as u128);
        }
        if raw > MAX_RAW_DESIGNS {
            return Err(SpaceError::TooLarge { raw_designs: raw });
        }
        let mut designs = Vec::new();
        let mut ids = BTreeMap::new();
        let mut cur = vec![None; space.dims.len()];
        enumerate_from(&space, 0, &mut cur, &mut designs, &mut ids);
        Ok(SpaceIndex { space, designs, ids })
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn design(&self, id: usize) -> Result<Design, SpaceError> {
        let choices = self.designs.get(id).ok_or(SpaceError::UnknownDesign(id))?;
        Ok(Design { id, choices: choices.clone() })
    }

    pub fn id_of(&self, choices: &[Option<u16>]) -> Option<usize> {
        self.ids.get(choices).copied()
    }

    pub fn distance_ids(&self, a: usize, b: usize) -> Result<u32, SpaceError> {
        let da = self.design(a)?;
        let db = self.design(b)?;
        self.space.distance(&da, &db)
    }

    /// Canonical design for an assignment; gated overruns clamp down.
    pub fn canonicalize(&self, assignment: &Assignment) -> Result<Design, SpaceError> {
        let mut choices = self.space.choices_of(assignment)??;
        self.space.clamp(&mut choices);
        let id = self
            .ids
            .get(&choices)
            .copied()
            .expect("canonical assignment is enumerated");
        Ok(Design { id, choices })
    }

    /// All designs at distance one, with the coordinate that changed.
    pub fn neighbors(&self, id: usize) -> Result<Vec<(usize, Coord)>, SpaceError> {
        let base = self.designs.get(id).ok_or(SpaceError::UnknownDesign(id))?;
        let space = &self.space;
        let mut out = Vec::new();
        let push = |choices: Vec<Option<u16>>, coord: Coord, out: &mut Vec<(usize, Coord)>| {
            let id = *self.ids.get(&choices).expect("neighbor is enumerated");
            out.push((id, coord));
        };
        for (i, dim) in space.dims.iter().enumerate() {
            let cur = match base[i] {
                Some(c) => c,
                None => continue,
            };
            let coord = Coord::Dim(i as u16);
            match space.roles[i] {
                Role::Free | Role::Member(_) => match &dim.kind {
                    DimensionKind::Numerical(choices) => {
                        for next in neighbors_1d(cur, choices.len()) {
                            let mut c = base.clone();
                            c[i] = Some(next);
                            if space.is_canonical(&c) {
                                push(c, coord, &mut out);
                            }
                        }
                    }
                    DimensionKind::Categorical(choices) => {
                        for next in 0..choices.len() as u16 {
                            if next == cur {
                                continue;
                            }
                            let mut c = base.clone();
                            c[i] = Some(next);
                            if space.is_canonical(&c) {
                                push(c, coord, &mut out);
                            }
                        }
                    }
                },
                Role::Flag(g) => {
                    // Active-to-active flag moves keep the members; crossings
                    // to and from the inactive side are group coordinates.
                    let group = &space.groups[g];
                    let n = dim.kind.choice_count() as u16;
                    if cur != group.inactive {
                        for next in 0..n {
                            if next == cur || next == group.inactive {
                                continue;
                            }
                            let mut c = base.clone();
                            c[i] = Some(next);
                            push(c, coord, &mut out);
                        }
                    }
                }
            }
        }
        for (g, group) in space.groups.iter().enumerate() {
            let coord = Coord::Group(g as u16);
            let flag_cur = base[group.flag].expect("flag assigned");
            if flag_cur != group.inactive {
                // Crossing in: every numerical member must sit at its
                // smallest choice, which crossings anchor to.
                let at_floor = group.members.iter().all(|&m| {
                    !space.dims[m].kind.is_numerical() || base[m] == Some(0)
                });
                if at_floor {
                    let mut c = base.clone();
                    c[group.flag] = Some(group.inactive);
                    for &m in &group.members {
                        c[m] = None;
                    }
                    push(c, coord, &mut out);
                }
            } else {
                let flag_choices = space.dims[group.flag].kind.choice_count() as u16;
                let cats: Vec<usize> = group
                    .members
                    .iter()
                    .copied()
                    .filter(|&m| !space.dims[m].kind.is_numerical())
                    .collect();
                for f in 0..flag_choices {
                    if f == group.inactive {
                        continue;
                    }
                    let mut c = base.clone();
                    c[group.flag] = Some(f);
                    for &m in &group.members {
                        c[m] = Some(0);
                    }
                    each_combination(space, &cats, &mut c, 0, &mut |c| {
                        push(c.to_vec(), coord, &mut out)
                    });
                }
            }
        }
        Ok(out)
    }
}

fn neighbors_1d(cur: u16, len: usize) -> impl Iterator<Item = u16> {
    let lo = cur.checked_sub(1);
    let hi = if (cur as usize) + 1 < len { Some(cur + 1) } else { None };
    lo.into_iter().chain(hi)
}

fn each_combination(
    space: &DesignSpace,
    cats: &[usize],
    cur: &mut Vec<Option<u16>>,
    depth: usize,
    f: &mut impl FnMut(&Vec<Option<u16>>),
) {
    if depth == cats.len() {
        f(cur);
        return;
    }
    let dim = cats[depth];
    for c in 0..space.dims[dim].kind.choice_count() as u16 {
        cur[dim] = Some(c);
        each_combination(space, cats, cur, depth + 1, f);
    }
}

fn enumerate_from(
    space: &DesignSpace,
    depth: usize,
    cur: &mut Vec<Option<u16>>,
    designs: &mut Vec<Vec<Option<u16>>>,
    ids: &mut BTreeMap<Vec<Option<u16>>, usize>,
) {
    if depth == space.dims.len() {
        let mut canon = cur.clone();
        space.clamp(&mut canon);
        if !ids.contains_key(&canon) {
            ids.insert(canon.clone(), designs.len());
            designs.push(canon);
        }
        return;
    }
    let active = match space.roles[depth] {
        Role::Free | Role::Flag(_) => true,
        Role::Member(g) => {
            let group = &space.groups[g];
            cur[group.flag].expect("flag declared before member") != group.inactive
        }
    };
    if !active {
        cur[depth] = None;
        enumerate_from(space, depth + 1, cur, designs, ids);
        return;
    }
    for c in 0..space.dims[depth].kind.choice_count() as u16 {
        cur[depth] = Some(c);
        enumerate_from(space, depth + 1, cur, designs, ids);
    }
    cur[depth] = None;
}
