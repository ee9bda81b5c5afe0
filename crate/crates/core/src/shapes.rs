//! Goal shapes: the built-in catalog, the text file format, buildability
//! search and random pretraining goals.
//!
//! File format: records of a `name: <identifier>` line followed by six rows
//! of six `.`/`#` characters, top row first, separated by a blank line.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::grid::{place_block, unreachable, BlockAction, Grid, GRID_SIZE};
use crate::lexicon::{MessageId, PRIMITIVE_COUNT};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("shape {0:?} cannot be built from primitive placements")]
    Unbuildable(String),
    #[error("duplicate shape name {0:?}")]
    DuplicateName(String),
    #[error("unknown shape {0:?}")]
    UnknownShape(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// The three families of the experimental set, recognised by name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeFamily {
    UpsideDownU,
    C,
    L,
}

impl ShapeFamily {
    pub fn from_name(name: &str) -> Option<Self> {
        let prefix = name.split(['_', '-']).next()?;
        match prefix.to_ascii_lowercase().as_str() {
            "u" => Some(ShapeFamily::UpsideDownU),
            "c" => Some(ShapeFamily::C),
            "l" => Some(ShapeFamily::L),
            _ => None,
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::UpsideDownU => "upside-down U",
            ShapeFamily::C => "C",
            ShapeFamily::L => "L",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub name: String,
    pub goal: Grid,
    /// Shortest primitive build sequence found by breadth-first search.
    pub witness: Vec<BlockAction>,
}

impl Shape {
    pub fn new(name: impl Into<String>, goal: Grid) -> Result<Self, CatalogError> {
        let name = name.into();
        match validate_buildable(goal) {
            Some(witness) => Ok(Shape { name, goal, witness }),
            None => Err(CatalogError::Unbuildable(name)),
        }
    }

    pub fn min_primitives(&self) -> usize {
        self.witness.len()
    }

    pub fn family(&self) -> Option<ShapeFamily> {
        ShapeFamily::from_name(&self.name)
    }

    pub fn witness_ids(&self) -> Vec<MessageId> {
        self.witness.iter().map(|&a| MessageId::for_action(a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogSource {
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeCatalog {
    shapes: Vec<Shape>,
    pub source: CatalogSource,
}

impl ShapeCatalog {
    pub fn new(shapes: Vec<Shape>, source: CatalogSource) -> Result<Self, CatalogError> {
        if shapes.is_empty() {
            return Err(CatalogError::Parse { line: 0, message: "catalog has no shapes".into() });
        }
        let mut seen = HashSet::new();
        for s in &shapes {
            if !seen.insert(s.name.as_str()) {
                return Err(CatalogError::DuplicateName(s.name.clone()));
            }
        }
        Ok(ShapeCatalog { shapes, source })
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Shape> {
        self.shapes.iter().find(|s| s.name == name)
    }

    /// Sub-catalog of the named shapes, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<Self, CatalogError> {
        let shapes = names
            .iter()
            .map(|n| self.get(n).cloned().ok_or_else(|| CatalogError::UnknownShape(n.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        ShapeCatalog::new(shapes, self.source.clone())
    }

    pub fn family_counts(&self) -> HashMap<Option<ShapeFamily>, usize> {
        let mut counts = HashMap::new();
        for s in &self.shapes {
            *counts.entry(s.family()).or_insert(0) += 1;
        }
        counts
    }

    /// Serializes in the shape file format.
    pub fn to_text(&self) -> String {
        let records: Vec<String> =
            self.shapes.iter().map(|s| format!("name: {}\n{}", s.name, s.goal.to_art())).collect();
        records.join("\n")
    }
}

/// Upside-down U: two verticals side by side capped by a horizontal.
fn u_shape(col: usize) -> Vec<BlockAction> {
    vec![BlockAction::vertical(col), BlockAction::vertical(col + 1), BlockAction::horizontal(col)]
}

/// C: bottom bar, a two-cell spine, top bar overhanging the open side.
fn c_shape(col: usize) -> Vec<BlockAction> {
    vec![BlockAction::horizontal(col), BlockAction::vertical(col), BlockAction::horizontal(col)]
}

/// L: a foot along the bottom and a four-cell upright.
fn l_shape(col: usize) -> Vec<BlockAction> {
    vec![BlockAction::horizontal(col), BlockAction::vertical(col), BlockAction::vertical(col)]
}

fn build(actions: &[BlockAction]) -> Grid {
    actions.iter().fold(Grid::EMPTY, |g, &a| place_block(g, a).expect("builtin shape placement").new_grid)
}

/// Anchor columns of the built-in shapes per family.
const U_COLUMNS: [usize; 3] = [1, 3, 5];
const C_COLUMNS: [usize; 5] = [1, 2, 3, 4, 5];
const L_COLUMNS: [usize; 3] = [1, 3, 5];

/// The 11-shape experimental set: 3 upside-down U, 5 C and 3 L shapes.
pub fn builtin_default() -> ShapeCatalog {
    let mut shapes = Vec::new();
    type Family<'a> = (&'a str, &'a [usize], fn(usize) -> Vec<BlockAction>);
    let families: [Family; 3] = [("u", &U_COLUMNS, u_shape), ("c", &C_COLUMNS, c_shape), ("l", &L_COLUMNS, l_shape)];
    for (prefix, cols, make) in families {
        for &col in cols {
            let goal = build(&make(col));
            shapes.push(Shape::new(format!("{prefix}_{col}"), goal).expect("builtin shapes are buildable"));
        }
    }
    ShapeCatalog::new(shapes, CatalogSource::Builtin).expect("builtin catalog")
}

/// One shape per family, at disjoint columns.
pub fn builtin_desk() -> ShapeCatalog {
    builtin_default().subset(&["u_1", "c_3", "l_5"]).expect("desk subset")
}

pub fn parse_catalog(text: &str, source: CatalogSource) -> Result<ShapeCatalog, CatalogError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut shapes = Vec::new();
    let mut i = 0;
    let err = |line: usize, message: String| CatalogError::Parse { line: line + 1, message };
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            if shapes.is_empty() || i + 1 < lines.len() && lines[i + 1].trim().is_empty() {
                return Err(err(i, "unexpected blank line".into()));
            }
            i += 1;
            continue;
        }
        let name = lines[i]
            .strip_prefix("name:")
            .map(str::trim)
            .filter(|n| !n.is_empty() && !n.contains(char::is_whitespace))
            .ok_or_else(|| err(i, format!("expected `name: <identifier>`, found {:?}", lines[i])))?;
        if i + GRID_SIZE >= lines.len() {
            return Err(err(i, format!("shape {name:?} needs {GRID_SIZE} rows")));
        }
        let mut goal = Grid::EMPTY;
        for k in 0..GRID_SIZE {
            let row_line = lines[i + 1 + k];
            if row_line.chars().count() != GRID_SIZE {
                return Err(err(i + 1 + k, format!("row must have {GRID_SIZE} characters")));
            }
            let row = GRID_SIZE - 1 - k;
            for (c, ch) in row_line.chars().enumerate() {
                match ch {
                    '#' => goal.set(row, c + 1, true),
                    '.' => {}
                    other => return Err(err(i + 1 + k, format!("unexpected character {other:?}"))),
                }
            }
        }
        shapes.push(Shape::new(name, goal)?);
        i += 1 + GRID_SIZE;
        if i < lines.len() && !lines[i].trim().is_empty() {
            return Err(err(i, "records must be separated by a blank line".into()));
        }
    }
    if shapes.is_empty() {
        return Err(err(0, "empty catalog".into()));
    }
    ShapeCatalog::new(shapes, source)
}

pub fn load_catalog(path: &Path) -> Result<ShapeCatalog, CatalogError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io { path: path.to_path_buf(), source })?;
    parse_catalog(&text, CatalogSource::File(path.to_path_buf()))
}

pub fn write_catalog(catalog: &ShapeCatalog, path: &Path) -> Result<(), CatalogError> {
    std::fs::write(path, catalog.to_text()).map_err(|source| CatalogError::Io { path: path.to_path_buf(), source })
}

fn primitive_actions() -> impl Iterator<Item = BlockAction> {
    (0..PRIMITIVE_COUNT).map(|i| MessageId(i).primitive_action().unwrap())
}

/// Shortest primitive build sequence for `goal`, searching only states that
/// stay inside the goal. `None` when the goal cannot be built.
pub fn validate_buildable(goal: Grid) -> Option<Vec<BlockAction>> {
    let mut parent: HashMap<Grid, Option<(Grid, BlockAction)>> = HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(Grid::EMPTY, None);
    queue.push_back(Grid::EMPTY);
    while let Some(state) = queue.pop_front() {
        if state == goal {
            let mut seq = Vec::new();
            let mut cur = state;
            while let Some(Some((prev, action))) = parent.get(&cur) {
                seq.push(*action);
                cur = *prev;
            }
            seq.reverse();
            return Some(seq);
        }
        for action in primitive_actions() {
            let Ok(out) = place_block(state, action) else { continue };
            if unreachable(out.new_grid, goal) || parent.contains_key(&out.new_grid) {
                continue;
            }
            parent.insert(out.new_grid, Some((state, action)));
            queue.push_back(out.new_grid);
        }
    }
    None
}

/// `n_blocks` uniformly random valid placements from the empty grid.
pub fn random_goal<R: Rng + ?Sized>(rng: &mut R, n_blocks: usize) -> Grid {
    assert!((1..=4).contains(&n_blocks), "random goals use 1..=4 blocks");
    let mut grid = Grid::EMPTY;
    let mut options = Vec::with_capacity(PRIMITIVE_COUNT);
    for _ in 0..n_blocks {
        options.clear();
        options.extend(primitive_actions().filter_map(|a| place_block(grid, a).ok()));
        grid = options.choose(rng).expect("empty 6x6 grid cannot dead-end within 4 blocks").new_grid;
    }
    grid
}
