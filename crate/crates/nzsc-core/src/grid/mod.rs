//! Gridworld coordination games: an explore-or-exploit mining task and a
//! mirrored visual coordination task.

pub mod cee;
pub mod sse;

/// Movement actions shared by both gridworlds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Move {
        match i {
            0 => Move::Up,
            1 => Move::Down,
            2 => Move::Left,
            3 => Move::Right,
            4 => Move::Stay,
            other => panic!("move index {other} out of range"),
        }
    }
}
